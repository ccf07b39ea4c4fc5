"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the pytest terminal
summary (see ``conftest.py``); running this file directly prints them too.
"""

from __future__ import annotations

import csv
import io
import time

import pytest

from fabtee import crypto
from fabtee.adversary import (
    Adversary,
    AttackScript,
    allowed_set,
    check_security_up_to_resets,
    load_corpus,
    network_for,
    run_attack,
)
from fabtee.auction import BidRecord, ModelTx
from fabtee.bench import CATEGORIES, csv_columns, run_bench, to_csv
from fabtee.chaincode_enclave import Operation, OperationPayload
from fabtee.encoding import encode
from fabtee.errors import ValueHashMismatch
from fabtee.network import Network, NetworkSettings
from fabtee.weaken import SWITCHES, weakened

RESULTS: dict[int, str] = {}
BIDDERS = ("alice", "bob", "carol", "dave")


def report(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert passed, line


# -- 1. attack corpus --------------------------------------------------------------


def test_1_attack_corpus():
    start = time.perf_counter()
    failures = []
    corpus = load_corpus()
    for script in corpus:
        log = run_attack(None, script)
        verdict = check_security_up_to_resets(log)
        missing = set(script.expect) - log.errors()
        if not verdict or missing:
            failures.append(f"{script.name}: {verdict.describe()} missing={sorted(missing)}")
    elapsed = time.perf_counter() - start
    ok = len(corpus) >= 12 and not failures and elapsed < 60
    report(1, ok, f"{len(corpus)} scripts, {len(failures)} failing, {elapsed:.1f}s"
           + (f"; {failures}" if failures else ""))


# -- 2. mutation detection -----------------------------------------------------------


def test_2_mutation_detection():
    corpus = load_corpus()
    caught = {}
    for switch in SWITCHES:
        with weakened(switch):
            for script in corpus:
                if not check_security_up_to_resets(run_attack(None, script)):
                    caught.setdefault(switch, []).append(script.name)
    ok = all(caught.get(s) for s in SWITCHES)
    report(2, ok, "; ".join(f"{s} -> {caught.get(s, [])}" for s in SWITCHES))


# -- 3. oracle equivalence -------------------------------------------------------------


def _instances():
    """Small auction histories: hand-picked edge cases plus a seeded sample."""
    fixed = [
        [],
        [("mallory", "create", ["a"])],
        [("mallory", "create", ["a"]), ("mallory", "close", ["a"])],
        [("mallory", "create", ["a"]), ("mallory", "close", ["a"]), ("bob", "evaluate", ["a"])],
        [("alice", "create", ["a"]), ("bob", "bid", [7, "a"]), ("carol", "bid", [7, "a"]),
         ("alice", "close", ["a"])],
        [("mallory", "create", ["a"]), ("alice", "bid", [10, "a"]), ("bob", "bid", [25, "a"]),
         ("alice", "bid", [30, "a"]), ("mallory", "close", ["a"]), ("dave", "evaluate", ["a"])],
    ]
    rng = crypto.Rng(2024).fork("instances")
    sampled = []
    for _ in range(34):
        owner = rng.choice(("mallory", "alice"))
        steps = [(owner, "create", ["a"])]
        bidders = BIDDERS[:rng.randint(1, 4)]
        for _ in range(rng.randint(0, 4)):
            steps.append((rng.choice(bidders), "bid", [rng.randint(0, 9), "a"]))
        if rng.randint(0, 2):
            steps.append((owner, "close", ["a"]))
            if rng.randint(0, 1):
                steps.append((rng.choice(BIDDERS), "evaluate", ["a"]))
        sampled.append(steps[:6])
    return fixed + sampled


def _equivalence_script(i, history):
    steps = []
    for client, fn, args in history:
        steps += [{"op": "invoke", "client": client, "fn": fn, "args": args}, {"op": "cut"}]
    probe = {"fn": "evaluate", "args": ["a"]}
    steps += [
        {"op": "sweep", **probe},
        # further reset-capable routes; none may widen the obtainable set
        {"op": "rollback_ledger_enclave", "snapshot": "random", "as": "old"},
        {"op": "collude_invoke", **probe, "le": "old"},
        {"op": "feed_block", "le": "old", "block": "next", "optional": True},
        {"op": "collude_invoke", **probe, "le": "old"},
        {"op": "substitute_state_value", "key": "a", "source": {"stale": "random"}, "optional": True},
        {"op": "collude_invoke", **probe},
        {"op": "substitute_state_value", "clear": True},
        {"op": "collude_invoke", "fn": "noop", "args": []},
        {"op": "replay_meta_response", "index": 0},
        {"op": "collude_invoke", **probe},
        {"op": "meta", "mode": "honest"},
    ]
    return AttackScript.from_dict({"name": f"equivalence-{i}", "seed": 500 + i,
                                   "settings": {"snapshot_interval": 1}, "steps": steps})


def test_3_oracle_equivalence():
    probe_fn = "evaluate"
    mismatches = []
    instances = _instances()
    for i, history in enumerate(instances):
        assert len(history) <= 6 and len({c for c, fn, _ in history if fn == "bid"}) <= 4
        script = _equivalence_script(i, history)
        log = run_attack(None, script)
        evaluations = [o for o in log.outputs() if o.probe.function == probe_fn]
        obtained = {o.outcome for o in evaluations}
        allowed = allowed_set(log.committed, ModelTx("mallory", probe_fn, ("a",)))
        if obtained != allowed:
            mismatches.append((i, sorted(map(repr, obtained ^ allowed))))
    report(3, not mismatches,
           f"{len(instances)} instances, obtainable == allowed_set on {len(instances) - len(mismatches)}"
           + (f"; mismatches {mismatches[:3]}" if mismatches else ""))


# -- 4. barrier soundness -------------------------------------------------------------


def _argmax(bids: dict):
    """Brute force: the highest amount, ties to the smallest client id."""
    if not bids:
        return (None, None)
    best = max(bids.values())
    return (min(c for c, v in bids.items() if v == best), best)


def _schedule(seed: int):
    rng = crypto.Rng(seed).fork("schedule")
    net = Network(NetworkSettings(seed=seed, block_size=rng.randint(1, 4))).setup()
    owner = net.clients["mallory"]
    owner.invoke("create", "a")
    net.flush()
    endorsed = []  # (result, racing) endorsed while the auction was open
    for _ in range(rng.randint(0, 8)):
        client = net.clients[rng.choice(BIDDERS)]
        res = client.invoke("bid", rng.randint(0, 20), "a", submit=False)
        endorsed.append(res)
    rng.shuffle(endorsed)
    split = rng.randint(0, len(endorsed))
    for res in endorsed[:split]:
        net.orderer.submit(res.transaction)
    if rng.randint(0, 1):
        net.flush()
    close = owner.invoke("close", "a")
    # the rest race the barrier: endorsed on the open auction, ordered after the close
    for res in endorsed[split:]:
        net.orderer.submit(res.transaction)
    net.flush()
    late = net.clients[rng.choice(BIDDERS)].invoke("bid", 99, "a")
    ev = net.clients[rng.choice(BIDDERS)].invoke("evaluate", "a")
    net.flush()

    order = []  # (digest, valid) in commit order
    for block, rec in zip(net.reference.blocks, net.reference.commits):
        order += [(tx.proposal.digest(), ok) for tx, ok in zip(block.transactions, rec.flags)]
    pos = {d: i for i, (d, _) in enumerate(order)}
    valid = dict(order)
    barrier = pos[close.proposal.digest()]
    before: dict[str, int] = {}
    for d, ok in order[:barrier]:
        tx = net.plaintext.get(d)
        if ok and tx and tx.function == "bid":
            before[tx.client] = tx.args[0]
    racing_ok = [valid[r.proposal.digest()] for r in endorsed if pos[r.proposal.digest()] > barrier]
    winner = (ev.value.winner, ev.value.amount)
    problems = []
    if not valid[close.proposal.digest()] or not valid[ev.proposal.digest()]:
        problems.append("barrier or evaluate not committed")
    if any(racing_ok):
        problems.append("a racing bid committed after the barrier")
    if late.status != "error" or late.value != "Closed":
        problems.append("bid after the barrier was endorsed")
    if winner != _argmax(before):
        problems.append(f"winner {winner} != argmax {_argmax(before)}")
    return problems, len(racing_ok)


def test_4_barrier_soundness():
    bad, raced = [], 0
    for seed in range(100):
        problems, n = _schedule(1000 + seed)
        raced += n
        if problems:
            bad.append((seed, problems))
    report(4, not bad and raced > 0,
           f"100 schedules, {raced} racing bids all invalidated, {len(bad)} violations"
           + (f"; {bad[:3]}" if bad else ""))


# -- 5. replica determinism -------------------------------------------------------------


def test_5_replica_determinism():
    net = Network(NetworkSettings(seed=5, block_size=7, snapshot_interval=10)).setup()
    rng = crypto.Rng(5).fork("mixed")
    clients = list(net.clients.values())
    owners, closing, closed = {}, set(), set()  # closing: close endorsed, not yet committed
    submitted = blocks = mismatched = attempts = 0
    while submitted < 1000:
        attempts += 1
        client = rng.choice(clients)
        live = [n for n in owners if n not in closed]
        openable = [n for n in live if n not in closing]
        r = rng.randint(0, 99)
        if len(openable) < 4 and r < 30:
            fn, args = "create", (f"a{len(owners)}",)
        elif r < 75 and live:
            fn, args = "bid", (rng.randint(0, 500), rng.choice(live))
        elif r < 80 and openable:
            name = rng.choice(openable)
            fn, args, client = "close", (name,), owners[name]
        elif r < 88 and closed:
            fn, args = "evaluate", (rng.choice(sorted(closed)),)
        else:
            fn, args = "noop", ()
        res = client.invoke(fn, *args, submit=False)
        if res.transaction is None:
            continue  # endorsement-time error; nothing to order
        if fn == "create":
            owners[args[0]] = client
        elif fn == "close":
            closing.add(args[0])
        net.orderer.submit(res.transaction)
        submitted += 1
        # deliver lazily so many transactions race on stale reads
        if rng.randint(0, 9) == 0:
            closed |= closing
            for block in net.orderer.cut_all():
                net.deliver(block)
                blocks += 1
                mismatched += len(set(net.state_hashes())) != 1
    for block in net.orderer.cut_all():
        net.deliver(block)
        blocks += 1
        mismatched += len(set(net.state_hashes())) != 1
    invalid = sum(f is False for rec in net.reference.commits for f in rec.flags)
    halted = [p.peer_id for p in net.peers if p.halted]
    ok = mismatched == 0 and not halted and net.reference.store.height == len(net.reference.blocks)
    report(5, ok, f"{submitted} txs ({attempts} invocations) in {blocks} blocks ({invalid} invalidated), "
           f"{mismatched} blocks with differing state hashes, halted={halted}")


# -- 6. privacy scan ---------------------------------------------------------------------


def _bid_encodings(net):
    needles = set()
    for tx in net.plaintext.values():
        if tx.function != "bid" or len(tx.args) != 2:
            continue
        amount, auction = tx.args
        needles.add(encode(BidRecord(auction, tx.client, amount)))
        needles.add(encode(Operation("bid", tuple(tx.args))))
    for client in net.clients.values():
        for tx in net.plaintext.values():
            if tx.function == "bid" and tx.client == client.client_id:
                needles.add(encode(OperationPayload(Operation("bid", tuple(tx.args)), client.data_key)))
    return needles


def _haystacks(net, adversary):
    for peer in net.peers:
        for key, (value, _) in peer.store.entries.items():
            yield f"{peer.peer_id} store {key}", value
    for block in net.orderer.blocks:
        yield f"orderer block {block.seq}", encode(block)
        for tx in block.transactions:
            for e in tx.endorsements:
                yield f"endorsement in block {block.seq}", encode(e)
    for label, e in adversary.speculative.items():
        yield f"speculative {label}", encode(e)


def _scan(net, adversary):
    needles = _bid_encodings(net)
    hits = [where for where, blob in _haystacks(net, adversary) for n in needles if n in blob]
    return len(needles), hits


def test_6_privacy_scan():
    total_needles, hits = 0, []
    for script in load_corpus():
        net = network_for(script)
        adv = Adversary(net, seed=script.seed)
        adv.run(script)
        n, found = _scan(net, adv)
        total_needles += n
        hits += [f"{script.name}: {h}" for h in found]
    # control: with state encryption off the same scan must find bids
    control = next(s for s in load_corpus() if s.name == "honest_baseline")
    net = Network(NetworkSettings(seed=control.seed, mode="none")).setup()
    adv = Adversary(net, seed=control.seed)
    adv.run(control)
    _, control_hits = _scan(net, adv)
    ok = not hits and total_needles > 0 and bool(control_hits)
    report(6, ok, f"{total_needles} bid encodings searched, {len(hits)} found with encryption; "
           f"control without encryption finds {len(control_hits)}"
           + (f"; {hits[:3]}" if hits else ""))


# -- 7. recovery ----------------------------------------------------------------------


def test_7_recovery():
    net = Network(NetworkSettings(seed=7, block_size=1, snapshot_interval=4)).setup()
    m = net.clients["mallory"]
    m.invoke("create", "a")
    net.flush()
    for i in range(6):
        net.clients[BIDDERS[i % 4]].invoke("bid", i, "a")
    net.flush()
    peer = net.reference
    pk = peer.enclave_keys["auction"]
    registrations = sum(tx.chaincode_id == "ercc" for b in net.orderer.blocks for tx in b.transactions)
    meta_before = peer.ledger.metadata()
    height = peer.store.height
    peer.crash()
    used = peer.restart()
    restored = peer.ledger.metadata() == meta_before
    expected_snapshot = max(s for s in peer.snapshot_seqs() if s <= height)
    res = net.clients["alice"].invoke("bid", 50, "a")
    m.invoke("close", "a")
    net.flush()
    ev = m.invoke("evaluate", "a")
    net.flush()
    flags = net.reference.commits[-3:]
    registrations_after = sum(tx.chaincode_id == "ercc" for b in net.orderer.blocks for tx in b.transactions)
    checks = {
        "snapshot is latest interval": used == expected_snapshot and used % 4 == 0 and used < height,
        "ledger metadata restored": restored,
        "same enclave key": peer.enclaves["auction"].public_key() == pk,
        "endorser is the restarted key": res.endorsements[0].endorser_id == pk,
        "endorsements validate": all(all(r.flags) for r in flags),
        "no re-registration": registrations_after == registrations,
        "auction completes": ev.value.winner == "alice" and ev.value.amount == 50,
    }
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed, f"restored from snapshot {used} at height {height}, replayed {height - used} blocks; "
           + ("all checks hold" if not failed else f"failed: {failed}"))


# -- 8. trusted state transfer ----------------------------------------------------------


def test_8_state_transfer():
    net = Network(NetworkSettings(seed=8, block_size=1)).setup()
    server, lag = net.peers[1], net.peers[2]
    m = net.clients["mallory"]
    for a in range(10):
        m.invoke("create", f"a{a}")
    net.flush()
    start = lag.store.height
    for i in range(50):
        net.clients[BIDDERS[i % 4]].invoke("bid", i, f"a{i % 10}")
        net.deliver(net.orderer.cut_block(), peers=net.peers[:2])
    behind = server.store.height - lag.store.height

    delta, quote = server.ledger.transfer_serve(lag.genesis.hash, lag.ledger.metadata())
    verdict = net.service.verify(quote)
    values = tuple(server.store.get(k)[0] for k, _, _ in delta.entries)
    rejected = 0
    for i in range(len(values)):
        tampered = values[:i] + (values[i][:-1] + bytes([values[i][-1] ^ 1]),) + values[i + 1:]
        try:
            lag.ledger.transfer_apply(delta, tampered, verdict, quote)
        except ValueHashMismatch:
            rejected += 1
    lag.ledger.transfer_apply(delta, values, verdict, quote)
    lag.adopt_transfer(delta, values, server)
    identical = encode(lag.ledger.metadata()) == encode(server.ledger.metadata())
    # the caught-up peer keeps pace with the rest
    m.invoke("close", "a0")
    net.flush()
    converged = len(set(net.state_hashes())) == 1 and not lag.halted
    ok = behind == 50 and identical and rejected == len(values) > 0 and converged
    report(8, ok, f"lagged {behind} blocks from height {start}; metadata byte-identical={identical}; "
           f"{rejected}/{len(values)} single-value tamperings rejected; converged after={converged}")


# -- 9. throughput harness -----------------------------------------------------------------


def test_9_bench():
    start = time.perf_counter()
    rows, ratios = run_bench(clients=(16,), transactions=1000, peers=3)
    text = to_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    header = text.splitlines()[0].split(",")
    well_formed = (header == csv_columns() and len(parsed) == 6
                   and all(f"{c}_mean_ms" in header for c in CATEGORIES)
                   and all(float(r["throughput_tps"]) > 0 for r in parsed)
                   and all(int(r["transactions"]) in (1000, 20) for r in parsed))
    submits = [r for r in rows if r.workload != "evaluate"]
    ratio_text = ", ".join(f"{k}={v:.2f}" for k, v in ratios.items())
    report(9, well_formed and all(r.transactions == 1000 for r in submits),
           f"6 rows, {len(header)} columns in {time.perf_counter() - start:.1f}s; "
           f"enclave/native throughput {ratio_text} (simulated enclaves; "
           f"ratios are informational, not a gate)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
