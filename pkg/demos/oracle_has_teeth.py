"""Switch off one protection at a time and watch the oracle catch the leak.

Each test-only weakening switch removes a single check.  The corpus script
that targets it then produces an output no committed prefix explains, and
the oracle reports FAIL with the offending observation.

    python3 demos/oracle_has_teeth.py
"""

from fabtee.adversary import check_security_up_to_resets, load_corpus, run_attack
from fabtee.weaken import weakened


def main() -> None:
    corpus = {s.name: s for s in load_corpus()}
    for script in corpus.values():
        for switch in script.detects:
            honest = check_security_up_to_resets(run_attack(None, script))
            with weakened(switch):
                broken = check_security_up_to_resets(run_attack(None, script))
            print(f"{script.name} / {switch}")
            print("   protected:", honest.describe())
            print("   weakened: ", broken.describe())


if __name__ == "__main__":
    main()
