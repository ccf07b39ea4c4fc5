"""Untrusted blockchain substrate.

Versioned key-value state, the transaction and block structures of the
execute-order-validate pipeline, a solo ordering service with final
decisions, and the baseline peer validation/commit path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from . import crypto
from .crypto import Envelope, KeyPair
from .encoding import ABSENT, decode_as, encode, record
from .errors import (
    BadOrdererSignature,
    EncodingError,
    HashChainBreak,
    MissingField,
    SequenceGap,
)

record(Envelope)

ZERO_HASH = bytes(32)
NAMESPACE_SEP = "/"


def namespaced(chaincode_id: str, key: str) -> str:
    return f"{chaincode_id}{NAMESPACE_SEP}{key}"


@record
@dataclass(frozen=True, order=True)
class Version:
    block_seq: int
    tx_index: int

    def __post_init__(self):
        if self.block_seq < 0 or self.tx_index < 0:
            raise ValueError("version components must be non-negative")


GENESIS_VERSION = Version(0, 0)


@record
@dataclass(frozen=True)
class ReadSet:
    entries: tuple = ()  # (key, Version | ABSENT)

    def __post_init__(self):
        keys = [k for k, _ in self.entries]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate key in read set")

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


@record
@dataclass(frozen=True)
class WriteSet:
    entries: tuple = ()  # (key, value bytes), in putState order

    def __post_init__(self):
        keys = [k for k, _ in self.entries]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate key in write set")

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


@record
@dataclass(frozen=True)
class ChaincodePolicy:
    """Endorsement policy: ``endorsements`` distinct registered endorsers.

    ``enclave`` chaincodes are endorsed by registered chaincode enclaves whose
    measurement must equal ``measurement``; plain chaincodes by genesis peers.
    """

    name: str
    enclave: bool
    measurement: bytes | None
    endorsements: int = 1


@record
@dataclass(frozen=True)
class GenesisConfig:
    orderer_public_key: bytes
    attestation_service_key: bytes
    ledger_enclave_measurement: bytes
    peers: tuple = ()  # (peer_id, public key)
    clients: tuple = ()  # (client_id, public key)
    chaincodes: tuple = ()  # ChaincodePolicy

    def peer_keys(self) -> dict[str, bytes]:
        return dict(self.peers)

    def client_keys(self) -> dict[str, bytes]:
        return dict(self.clients)

    def policy(self, chaincode_id: str) -> ChaincodePolicy | None:
        for p in self.chaincodes:
            if p.name == chaincode_id:
                return p
        return None


@record
@dataclass(frozen=True)
class TransactionProposal:
    client_id: str
    chaincode_id: str
    operation: Any  # tuple of Envelope (enclave chaincode) or plaintext bytes
    client_result_key: bytes | None
    proposal_nonce: bytes
    client_signature: bytes = b""

    def signed_body(self) -> bytes:
        return encode(("proposal", self.client_id, self.chaincode_id, self.operation,
                       self.client_result_key, self.proposal_nonce))

    def digest(self) -> bytes:
        return crypto.digest(encode(self))

    def signed_by(self, keypair: KeyPair) -> "TransactionProposal":
        return replace(self, client_signature=crypto.sign(keypair.secret, self.signed_body()))


@record
@dataclass(frozen=True)
class Endorsement:
    proposal_digest: bytes
    chaincode_id: str
    status: str  # "ok" or "error"
    read_set: ReadSet
    write_set: WriteSet
    result: Any  # bytes, or an Envelope when encrypted for the client
    endorser_id: bytes
    signature: bytes = b""

    def signed_body(self) -> bytes:
        return encode(("endorsement", self.proposal_digest, self.chaincode_id, self.status,
                       self.read_set, self.write_set, self.result, self.endorser_id))

    def signed_by(self, keypair: KeyPair) -> "Endorsement":
        return replace(self, signature=crypto.sign(keypair.secret, self.signed_body()))

    def signature_valid(self) -> bool:
        return crypto.verify(self.endorser_id, self.signed_body(), self.signature)


@record
@dataclass(frozen=True)
class Transaction:
    proposal: TransactionProposal
    endorsements: tuple = ()

    def __post_init__(self):
        d = self.proposal.digest()
        if any(e.proposal_digest != d for e in self.endorsements):
            raise ValueError("endorsement references a different proposal")

    @property
    def tx_id(self) -> str:
        return self.proposal.digest().hex()

    @property
    def chaincode_id(self) -> str:
        return self.proposal.chaincode_id

    @property
    def read_set(self) -> ReadSet:
        return self.endorsements[0].read_set if self.endorsements else ReadSet()

    @property
    def write_set(self) -> WriteSet:
        return self.endorsements[0].write_set if self.endorsements else WriteSet()


@record
@dataclass(frozen=True)
class Block:
    seq: int
    prev_hash: bytes
    transactions: tuple = ()
    data: bytes = b""
    orderer_signature: bytes = b""

    def header(self) -> bytes:
        return encode(("block", self.seq, self.prev_hash,
                       crypto.digest(encode(self.transactions)), crypto.digest(self.data)))

    @property
    def hash(self) -> bytes:
        return crypto.digest(self.header())

    def signature_valid(self, orderer_public_key: bytes) -> bool:
        return crypto.verify(orderer_public_key, self.header(), self.orderer_signature)


def make_genesis(config: GenesisConfig) -> Block:
    for name in ("orderer_public_key", "attestation_service_key", "ledger_enclave_measurement"):
        if not getattr(config, name):
            raise MissingField(name)
    if not config.peers:
        raise MissingField("peers")
    return Block(seq=0, prev_hash=ZERO_HASH, transactions=(), data=encode(config))


def genesis_config(block: Block) -> GenesisConfig:
    if block.seq != 0:
        raise EncodingError("not a genesis block")
    return decode_as(block.data, GenesisConfig)


class Orderer:
    """Solo ordering service.  Emitted blocks are final."""

    def __init__(self, keypair: KeyPair, genesis: Block, block_size: int = 10,
                 emit_empty: bool = False):
        if block_size < 1:
            raise ValueError("block_size must be positive")
        self.keypair = keypair
        self.block_size = block_size
        self.emit_empty = emit_empty
        self.blocks: list[Block] = [genesis]
        self.pending: list[Transaction] = []

    @property
    def height(self) -> int:
        return self.blocks[-1].seq

    def submit(self, tx: Transaction) -> int:
        self.pending.append(tx)
        return len(self.pending) - 1

    def cut_block(self) -> Block | None:
        if not self.pending and not self.emit_empty:
            return None
        batch, self.pending = self.pending[:self.block_size], self.pending[self.block_size:]
        prev = self.blocks[-1]
        block = Block(seq=prev.seq + 1, prev_hash=prev.hash, transactions=tuple(batch))
        block = replace(block, orderer_signature=crypto.sign(self.keypair.secret, block.header()))
        self.blocks.append(block)
        return block

    def cut_all(self) -> list[Block]:
        out = []
        while self.pending:
            out.append(self.cut_block())
        return out


class VersionedStore:
    """Committed blockchain state: key -> (value, version)."""

    def __init__(self):
        self.entries: dict[str, tuple[bytes, Version]] = {}
        self.height = 0
        self.last_hash = ZERO_HASH

    def get(self, key: str):
        return self.entries.get(key, ABSENT)

    def version(self, key: str):
        entry = self.entries.get(key)
        return ABSENT if entry is None else entry[1]

    def range(self, prefix: str) -> list[tuple[str, bytes, Version]]:
        return [(k, v, ver) for k, (v, ver) in sorted(self.entries.items())
                if k.startswith(prefix)]

    def apply(self, write_set: WriteSet, version: Version) -> None:
        for key, value in write_set.entries:
            self.entries[key] = (value, version)

    def copy(self) -> "VersionedStore":
        other = VersionedStore()
        other.entries = dict(self.entries)
        other.height = self.height
        other.last_hash = self.last_hash
        return other

    def state_hash(self) -> bytes:
        return crypto.digest(encode((self.height, self.last_hash,
                                     sorted((k, v, ver) for k, (v, ver) in self.entries.items()))))


def readset_matches(read_set: ReadSet, current_version: Callable[[str], Any]) -> bool:
    return all(current_version(k) == v for k, v in read_set.entries)


def tx_well_formed(tx: Transaction, config: GenesisConfig) -> bool:
    """Checks common to every chaincode: client signature, namespaces, consistency."""
    client_key = config.client_keys().get(tx.proposal.client_id)
    if client_key is None:
        return False
    if not crypto.verify(client_key, tx.proposal.signed_body(), tx.proposal.client_signature):
        return False
    if not tx.endorsements or config.policy(tx.chaincode_id) is None:
        return False
    prefix = tx.chaincode_id + NAMESPACE_SEP
    first = tx.endorsements[0]
    for e in tx.endorsements:
        if e.chaincode_id != tx.chaincode_id or e.status != "ok":
            return False
        if any(not k.startswith(prefix) for k in e.write_set.keys()):
            return False
        if e.read_set != first.read_set or e.write_set.keys() != first.write_set.keys():
            return False
    return True


def plain_policy_satisfied(tx: Transaction, config: GenesisConfig) -> bool:
    """``N`` distinct genesis peers endorsed with valid signatures."""
    policy = config.policy(tx.chaincode_id)
    if policy is None or policy.enclave:
        return False
    peer_keys = set(config.peer_keys().values())
    endorsers = {e.endorser_id for e in tx.endorsements
                 if e.endorser_id in peer_keys and e.signature_valid()}
    return len(endorsers) >= policy.endorsements


EndorsementCheck = Callable[[Transaction, VersionedStore], bool]


def check_block_header(block: Block, height: int, last_hash: bytes,
                       orderer_public_key: bytes, check_sequence: bool = True) -> None:
    if not block.signature_valid(orderer_public_key):
        raise BadOrdererSignature(f"block {block.seq}")
    if not check_sequence:
        return
    if block.seq != height + 1:
        raise SequenceGap(f"expected block {height + 1}, got {block.seq}")
    if block.prev_hash != last_hash:
        raise HashChainBreak(f"block {block.seq} does not extend {last_hash.hex()[:16]}")


def validate_block(store: VersionedStore, block: Block, config: GenesisConfig,
                   policy: EndorsementCheck) -> list[bool]:
    """Per-transaction validity flags, evaluated sequentially within the block."""
    check_block_header(block, store.height, store.last_hash, config.orderer_public_key)
    working = store.copy()
    flags = []
    for idx, tx in enumerate(block.transactions):
        valid = (tx_well_formed(tx, config)
                 and readset_matches(tx.read_set, working.version)
                 and policy(tx, working))
        if valid:
            working.apply(tx.write_set, Version(block.seq, idx))
        flags.append(valid)
    return flags


@dataclass(frozen=True)
class CommitRecord:
    seq: int
    block_hash: bytes
    flags: tuple
    state_hash: bytes


def commit_block(store: VersionedStore, block: Block, flags: Iterable[bool]) -> CommitRecord:
    flags = tuple(flags)
    if len(flags) != len(block.transactions):
        raise ValueError("flag count does not match block")
    for idx, (tx, valid) in enumerate(zip(block.transactions, flags)):
        if valid:
            store.apply(tx.write_set, Version(block.seq, idx))
    store.height = block.seq
    store.last_hash = block.hash
    return CommitRecord(block.seq, block.hash, flags, store.state_hash())


# -- block stream persistence ------------------------------------------------

_LEN = struct.Struct(">I")


def write_block_stream(path: str | Path, blocks: Iterable[Block]) -> None:
    with open(path, "wb") as fh:
        for block in blocks:
            data = encode(block)
            fh.write(_LEN.pack(len(data)))
            fh.write(data)


def read_block_stream(path: str | Path) -> Iterator[Block]:
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                return
            if len(head) != 4:
                raise EncodingError("truncated block stream")
            (n,) = _LEN.unpack(head)
            data = fh.read(n)
            if len(data) != n:
                raise EncodingError("truncated block stream")
            yield decode_as(data, Block)
