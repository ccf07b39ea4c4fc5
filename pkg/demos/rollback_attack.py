"""A malicious peer tries to learn bids early by rolling back its ledger enclave.

The adversary restores an old sealed snapshot, feeds it forged and replayed
blocks, and substitutes stale state values while a colluding client probes
the chaincode enclave.  Each attempt is rejected, and the security oracle
confirms that every output the adversary saw was computable from some
committed prefix of the ledger.

    python3 demos/rollback_attack.py
"""

from fabtee.adversary import check_security_up_to_resets, load_corpus, run_attack


def main() -> None:
    for script in load_corpus():
        if script.name not in {"le_rollback", "stale_state_feed", "forged_block", "barrier_bypass"}:
            continue
        log = run_attack(None, script)
        verdict = check_security_up_to_resets(log)
        print(f"== {script.name}: {script.description}")
        for obs in log.observations:
            if obs.kind == "rejected":
                print(f"   step {obs.step:2d} {obs.action:26s} rejected: {obs.error}")
            elif obs.kind == "output":
                print(f"   step {obs.step:2d} {obs.action:26s} learned: {obs.outcome.status} {obs.outcome.value}")
        print("   oracle:", verdict.describe())


if __name__ == "__main__":
    main()
