"""Trusted ledger view.

The ledger enclave validates the ordered block stream exactly like a peer,
but keeps only integrity metadata: for every committed key the hash of its
value and its version.  Chaincode enclaves query it with a fresh nonce and get
a signed answer bound to the block height it reflects.

Entry points are called through :func:`fabtee.tee.call`; the host-side
wrapper :class:`LedgerEnclaveClient` gives them Python signatures.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .encoding import ABSENT, EncodingError, decode_as, encode, record
from .errors import (
    AlreadyInitialized,
    ForeignBlockchain,
    InvalidVerdict,
    MalformedGenesis,
    MeasurementMismatch,
    NotInitialized,
    StaleDelta,
    ValueHashMismatch,
)
from .ledger import (
    Block,
    GenesisConfig,
    Version,
    check_block_header,
    genesis_config,
    readset_matches,
    tx_well_formed,
)
from .registry import ERCC, RegistryEntry, endorsement_check
from .tee import (
    AttestationReport,
    AttestationVerdict,
    EnclaveCode,
    EnclaveInstance,
    EnclaveProgram,
    SealedBlob,
    call,
    entry_point,
    local_attest,
    pad_report_data,
    remote_quote,
    seal,
    unseal,
    verdict_binds,
)
from .weaken import is_weakened


@record
@dataclass(frozen=True)
class IntegrityMetadata:
    per_key: dict  # key -> (value_hash, Version)
    last_block_seq: int
    last_block_hash: bytes
    genesis_hash: bytes

    def digest(self) -> bytes:
        return crypto.digest(encode(self))


@record
@dataclass(frozen=True)
class MetaResponse:
    """Signed answer to a metadata query.

    ``entries`` holds ``(key, value_hash | ABSENT, version | ABSENT)`` in
    request order; the signature also binds the nonce and block height.
    """

    entries: tuple
    nonce: bytes
    block_seq: int
    signature: bytes = b""

    def body(self) -> bytes:
        return encode(("meta", self.entries, self.nonce, self.block_seq))

    def signature_valid(self, public_key: bytes) -> bool:
        return crypto.verify(public_key, self.body(), self.signature)


@record
@dataclass(frozen=True)
class StateDelta:
    entries: tuple  # (key, value_hash, Version) the requester is missing or has stale
    genesis_hash: bytes
    from_seq: int
    to_seq: int
    to_block_hash: bytes
    requester_digest: bytes  # digest of the requester metadata the delta was computed against
    registry: tuple = ()  # RegistryEntry values known to the server, for the requester's policy checks

    def report_data(self) -> bytes:
        return pad_report_data(crypto.digest(encode(("delta", self))))


@record
@dataclass(frozen=True)
class _Snapshot:
    secret: bytes
    genesis: Block
    metadata: IntegrityMetadata
    registry: tuple


class LedgerEnclave(EnclaveProgram):
    CODE_ID = "ledger-enclave"
    VERSION = "1.0"

    def __init__(self, ctx):
        super().__init__(ctx)
        self._keypair: crypto.KeyPair | None = None
        self._genesis: Block | None = None
        self._config: GenesisConfig | None = None
        self._meta: dict[str, tuple[bytes, Version]] = {}
        self._registry: dict[bytes, RegistryEntry] = {}
        self._seq = 0
        self._last_hash = b""
        self._genesis_hash = b""

    # -- helpers --

    def _require_init(self) -> None:
        if self._keypair is None:
            raise NotInitialized("ledger enclave not initialized")

    def _load_genesis(self, genesis: Block) -> None:
        if not isinstance(genesis, Block) or genesis.seq != 0:
            raise MalformedGenesis("expected a genesis block")
        try:
            config = genesis_config(genesis)
        except EncodingError as exc:
            raise MalformedGenesis(str(exc)) from None
        if config.ledger_enclave_measurement != self.ctx.measurement:
            raise MeasurementMismatch("genesis expects a different ledger enclave")
        self._genesis = genesis
        self._config = config
        self._genesis_hash = genesis.hash

    def _metadata(self) -> IntegrityMetadata:
        return IntegrityMetadata(dict(self._meta), self._seq, self._last_hash, self._genesis_hash)

    def _version(self, key: str):
        entry = self._meta.get(key)
        return ABSENT if entry is None else entry[1]

    # -- entry points --

    @entry_point
    def le_init(self, genesis: Block) -> bytes:
        if self._keypair is not None:
            raise AlreadyInitialized("ledger enclave already initialized")
        self._load_genesis(genesis)
        self._keypair = crypto.keygen(self.ctx.rng)
        self._seq = 0
        self._last_hash = self._genesis_hash
        return self._keypair.public

    @entry_point
    def public_key(self) -> bytes:
        self._require_init()
        return self._keypair.public

    @entry_point
    def attest_local(self) -> tuple:
        """Local report binding PK_LE, for chaincode-enclave binding."""
        self._require_init()
        report = local_attest(self.ctx, crypto.digest(self._keypair.public))
        return report, self._keypair.public

    @entry_point
    def process_block(self, block: Block) -> tuple:
        self._require_init()
        config = self._config
        check_block_header(block, self._seq, self._last_hash, config.orderer_public_key,
                           check_sequence=not is_weakened("sequence_check"))
        working = dict(self._meta)
        registry = dict(self._registry)

        def version(key):
            entry = working.get(key)
            return ABSENT if entry is None else entry[1]

        flags = []
        for idx, tx in enumerate(block.transactions):
            valid = (tx_well_formed(tx, config)
                     and readset_matches(tx.read_set, version)
                     and endorsement_check(tx, config, registry.get))
            if valid:
                ver = Version(block.seq, idx)
                for key, value in tx.write_set.entries:
                    working[key] = (crypto.digest(value), ver)
                    if tx.chaincode_id == ERCC:
                        entry = decode_as(value, RegistryEntry)
                        registry[entry.public_key] = entry
            flags.append(valid)
        self._meta = working
        self._registry = registry
        self._seq = block.seq
        self._last_hash = block.hash
        return tuple(flags)

    @entry_point
    def get_meta(self, keys: tuple, nonce: bytes) -> MetaResponse:
        self._require_init()
        entries = []
        for key in keys:
            entry = self._meta.get(key)
            if entry is None:
                entries.append((key, ABSENT, ABSENT))
            else:
                entries.append((key, entry[0], entry[1]))
        response = MetaResponse(tuple(entries), nonce, self._seq)
        return MetaResponse(response.entries, nonce, self._seq,
                            crypto.sign(self._keypair.secret, response.body()))

    @entry_point
    def status(self) -> tuple:
        self._require_init()
        return self._seq, self._last_hash

    @entry_point
    def metadata(self) -> IntegrityMetadata:
        """Integrity metadata (hashes and versions only; nothing secret)."""
        self._require_init()
        return self._metadata()

    @entry_point
    def registry_entries(self) -> tuple:
        self._require_init()
        return tuple(self._registry[k] for k in sorted(self._registry))

    @entry_point
    def snapshot(self) -> SealedBlob:
        self._require_init()
        payload = _Snapshot(self._keypair.secret, self._genesis, self._metadata(),
                            tuple(self._registry[k] for k in sorted(self._registry)))
        return seal(self.ctx, encode(payload))

    @entry_point
    def restore(self, blob: SealedBlob) -> tuple:
        if self._keypair is not None:
            raise AlreadyInitialized("restore requires a fresh instance")
        snap = decode_as(unseal(self.ctx, blob), _Snapshot)
        self._load_genesis(snap.genesis)
        self._keypair = crypto.keypair_from_secret(snap.secret)
        md = snap.metadata
        self._meta = dict(md.per_key)
        self._seq = md.last_block_seq
        self._last_hash = md.last_block_hash
        self._registry = {e.public_key: e for e in snap.registry}
        return self._seq, self._last_hash, self._keypair.public

    @entry_point
    def transfer_serve(self, requester_genesis_hash: bytes, requester: IntegrityMetadata) -> tuple:
        self._require_init()
        if requester_genesis_hash != self._genesis_hash or requester.genesis_hash != self._genesis_hash:
            raise ForeignBlockchain("requester belongs to a different blockchain")
        theirs = requester.per_key
        entries = tuple((k, h, v) for k, (h, v) in sorted(self._meta.items())
                        if theirs.get(k) != (h, v))
        delta = StateDelta(entries, self._genesis_hash, requester.last_block_seq, self._seq,
                           self._last_hash, requester.digest(),
                           tuple(self._registry[k] for k in sorted(self._registry)))
        report = remote_quote(self.ctx, delta.report_data())
        return delta, report

    @entry_point
    def transfer_apply(self, delta: StateDelta, values: tuple, verdict: AttestationVerdict,
                       report: AttestationReport) -> tuple:
        self._require_init()
        config = self._config
        if not verdict_binds(verdict, report, config.attestation_service_key):
            raise InvalidVerdict("attestation verdict does not verify")
        if not is_weakened("attestation"):
            if report.measurement != config.ledger_enclave_measurement:
                raise InvalidVerdict("report is not from a ledger enclave")
            if report.report_data != delta.report_data():
                raise InvalidVerdict("report does not cover this delta")
        if delta.genesis_hash != self._genesis_hash:
            raise ForeignBlockchain("delta from a different blockchain")
        if delta.to_seq <= self._seq:
            raise StaleDelta(f"remote height {delta.to_seq} <= local height {self._seq}")
        if delta.requester_digest != self._metadata().digest():
            raise StaleDelta("delta was computed against different local metadata")
        if len(values) != len(delta.entries):
            raise ValueHashMismatch("value count does not match delta")
        for (key, value_hash, _), value in zip(delta.entries, values):
            if crypto.digest(value) != value_hash:
                raise ValueHashMismatch(key)
        for key, value_hash, version in delta.entries:
            self._meta[key] = (value_hash, version)
        self._registry = {e.public_key: e for e in delta.registry}
        self._seq = delta.to_seq
        self._last_hash = delta.to_block_hash
        return self._seq, self._metadata().digest()


LEDGER_ENCLAVE_CODE = EnclaveCode.of(LedgerEnclave)


class LedgerEnclaveClient:
    """Host-side typed wrapper around a ledger-enclave instance."""

    def __init__(self, instance: EnclaveInstance):
        self.instance = instance

    def init(self, genesis: Block) -> bytes:
        return call(self.instance, "le_init", genesis)

    def process_block(self, block: Block) -> tuple:
        return call(self.instance, "process_block", block)

    def get_meta(self, keys, nonce: bytes) -> MetaResponse:
        return call(self.instance, "get_meta", tuple(keys), nonce)

    def attest_local(self) -> tuple:
        return call(self.instance, "attest_local")

    def public_key(self) -> bytes:
        return call(self.instance, "public_key")

    def status(self) -> tuple:
        return call(self.instance, "status")

    def metadata(self) -> IntegrityMetadata:
        return call(self.instance, "metadata")

    def registry_entries(self) -> tuple:
        return call(self.instance, "registry_entries")

    def snapshot(self) -> SealedBlob:
        return call(self.instance, "snapshot")

    def restore(self, blob: SealedBlob) -> tuple:
        return call(self.instance, "restore", blob)

    def transfer_serve(self, genesis_hash: bytes, requester: IntegrityMetadata) -> tuple:
        return call(self.instance, "transfer_serve", genesis_hash, requester)

    def transfer_apply(self, delta: StateDelta, values, verdict, report) -> tuple:
        return call(self.instance, "transfer_apply", delta, tuple(values), verdict, report)
