"""Enclave registry chaincode and enclave transaction validator.

Both run outside any enclave.  The registry records attestation verdicts on
the ledger under ``ercc/<hex PK_CC>``; every peer re-verifies stored verdicts
offline with the attestation-service key pinned in genesis, and the same
predicate (:func:`registry_entry_ok`) serves clients, validators and the
ledger enclave.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

from . import crypto
from .encoding import ABSENT, decode, decode_as, encode, record
from .errors import (
    AlreadyRegistered,
    EncodingError,
    InvalidAttestation,
    MeasurementMismatch,
    ReportDataMismatch,
)
from .ledger import (
    Endorsement,
    GenesisConfig,
    ReadSet,
    Transaction,
    TransactionProposal,
    VersionedStore,
    WriteSet,
    namespaced,
    plain_policy_satisfied,
    readset_matches,
    tx_well_formed,
)
from .tee import AttestationReport, AttestationService, AttestationVerdict, pad_report_data, verdict_binds
from .weaken import is_weakened

ERCC = "ercc"


@record
@dataclass(frozen=True)
class RegistryEntry:
    chaincode_name: str
    public_key: bytes
    measurement: bytes
    report: AttestationReport
    verdict: AttestationVerdict
    peer_id: str


def registry_key(public_key: bytes) -> str:
    return namespaced(ERCC, public_key.hex())


def expected_report_data(public_key: bytes) -> bytes:
    return pad_report_data(crypto.digest(public_key))


@functools.lru_cache(maxsize=4096)
def _entry_ok_cached(entry_bytes: bytes, expected_measurement: bytes, service_key: bytes) -> bool:
    entry = decode_as(entry_bytes, RegistryEntry)
    return (verdict_binds(entry.verdict, entry.report, service_key)
            and entry.measurement == expected_measurement
            and entry.verdict.measurement == expected_measurement
            and entry.verdict.report_data == expected_report_data(entry.public_key))


def registry_entry_ok(entry: RegistryEntry, expected_measurement: bytes | None,
                      service_public_key: bytes) -> bool:
    """Verdict is service-signed, valid, and binds ``expected_measurement`` and the key."""
    if is_weakened("attestation"):
        return True
    if expected_measurement is None:
        return False
    return _entry_ok_cached(encode(entry), expected_measurement, service_public_key)


def client_verify_enclave(entry: RegistryEntry, expected_measurement: bytes,
                          service_public_key: bytes) -> bool:
    return registry_entry_ok(entry, expected_measurement, service_public_key)


def ercc_lookup(store: VersionedStore, public_key: bytes):
    """Committed registry entry for ``public_key``, or ``ABSENT``."""
    entry = store.get(registry_key(public_key))
    if entry is ABSENT:
        return ABSENT
    try:
        return decode_as(entry[0], RegistryEntry)
    except EncodingError:
        return ABSENT


# -- registry chaincode (executed by a plain peer) ---------------------------


def register_operation(report: AttestationReport, public_key: bytes, chaincode_name: str) -> bytes:
    return encode(("register", report, public_key, chaincode_name))


def ercc_register(proposal: TransactionProposal, store: VersionedStore, config: GenesisConfig,
                  service: AttestationService, peer_id: str,
                  peer_keypair: crypto.KeyPair) -> Endorsement:
    """Execute a registration proposal and return the peer-signed endorsement."""
    op = decode(proposal.operation)
    if not (isinstance(op, tuple) and len(op) == 4 and op[0] == "register"):
        raise EncodingError("not a registration operation")
    _, report, public_key, name = op
    if not isinstance(report, AttestationReport):
        raise EncodingError("registration carries no attestation report")
    policy = config.policy(name)
    expected = policy.measurement if policy is not None and policy.enclave else None
    verdict = service.verify(report)
    if not is_weakened("attestation"):
        if expected is None or report.measurement != expected:
            raise MeasurementMismatch(f"{name}: unexpected enclave measurement")
        if report.report_data != expected_report_data(public_key):
            raise ReportDataMismatch("report does not commit to the presented key")
        if not verdict.valid:
            raise InvalidAttestation("attestation service rejected the quote")
    key = registry_key(public_key)
    current = store.version(key)
    if current is not ABSENT:
        raise AlreadyRegistered(public_key.hex()[:16])
    entry = RegistryEntry(name, public_key, report.measurement, report, verdict, peer_id)
    endorsement = Endorsement(
        proposal_digest=proposal.digest(), chaincode_id=ERCC, status="ok",
        read_set=ReadSet(((key, ABSENT),)), write_set=WriteSet(((key, encode(entry)),)),
        result=b"registered", endorser_id=peer_keypair.public)
    return endorsement.signed_by(peer_keypair)


def ercc_writes_valid(tx: Transaction, config: GenesisConfig) -> bool:
    """Registry validation: each written entry is well-formed, verified, and new."""
    reads = dict(tx.read_set.entries)
    for key, value in tx.write_set.entries:
        try:
            entry = decode_as(value, RegistryEntry)
        except EncodingError:
            return False
        if key != registry_key(entry.public_key) or reads.get(key, None) is not ABSENT:
            return False
        policy = config.policy(entry.chaincode_name)
        if policy is None or not policy.enclave:
            return False
        if not registry_entry_ok(entry, policy.measurement, config.attestation_service_key):
            return False
    return True


# -- enclave transaction validator -------------------------------------------

Lookup = Callable[[bytes], object]


def enclave_policy_satisfied(tx: Transaction, config: GenesisConfig, lookup: Lookup) -> bool:
    """``N`` distinct registered, verdict-valid enclaves signed the endorsement."""
    policy = config.policy(tx.chaincode_id)
    if policy is None or not policy.enclave:
        return False
    endorsers = set()
    for e in tx.endorsements:
        entry = lookup(e.endorser_id)
        if not isinstance(entry, RegistryEntry) or entry.chaincode_name != tx.chaincode_id:
            continue
        if not registry_entry_ok(entry, policy.measurement, config.attestation_service_key):
            continue
        if e.signature_valid():
            endorsers.add(e.endorser_id)
    return len(endorsers) >= policy.endorsements


def endorsement_check(tx: Transaction, config: GenesisConfig, lookup: Lookup) -> bool:
    """Policy evaluation for any chaincode, given a registry lookup."""
    policy = config.policy(tx.chaincode_id)
    if policy is None:
        return False
    if tx.chaincode_id == ERCC:
        return plain_policy_satisfied(tx, config) and ercc_writes_valid(tx, config)
    if policy.enclave:
        return enclave_policy_satisfied(tx, config, lookup)
    return plain_policy_satisfied(tx, config)


def make_peer_policy(config: GenesisConfig):
    """Endorsement check for :func:`ledger.validate_block`, reading the working store."""
    def check(tx: Transaction, store: VersionedStore) -> bool:
        return endorsement_check(tx, config, lambda pk: ercc_lookup(store, pk))
    return check


def etv_validate(tx: Transaction, store: VersionedStore, config: GenesisConfig) -> bool:
    """Full per-transaction validation against ``store`` (conflicts + policy + signatures)."""
    return (tx_well_formed(tx, config)
            and readset_matches(tx.read_set, store.version)
            and endorsement_check(tx, config, lambda pk: ercc_lookup(store, pk)))
