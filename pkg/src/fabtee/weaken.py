"""Test-only weakening switches.

Each switch disables one protection so the security oracle can be shown to
catch the resulting leak.  Never enabled outside tests and the mutation
acceptance criterion.

* ``meta_signature``: the chaincode shim accepts metadata responses without
  checking the ledger-enclave signature, nonce or block height.
* ``sequence_check``: the ledger enclave accepts blocks out of order.
* ``attestation``: local/remote attestation results are not checked.
"""

from __future__ import annotations

import contextlib
from typing import Iterator

SWITCHES = ("meta_signature", "sequence_check", "attestation")

_active: set[str] = set()


def is_weakened(name: str) -> bool:
    return name in _active


@contextlib.contextmanager
def weakened(*names: str) -> Iterator[None]:
    unknown = set(names) - set(SWITCHES)
    if unknown:
        raise ValueError(f"unknown switch(es): {sorted(unknown)}")
    added = set(names) - _active
    _active.update(added)
    try:
        yield
    finally:
        _active.difference_update(added)
