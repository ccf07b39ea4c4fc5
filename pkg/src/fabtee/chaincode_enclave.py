"""Chaincode enclave and its state-access shim.

One enclave hosts one chaincode.  Proposals arrive hybrid-encrypted to the
enclave key; state reads go through the host but are accepted only together
with a fresh, signed metadata response from the bound ledger enclave; state
writes are encrypted before they leave the enclave; endorsements are signed
with the enclave key.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Any, Protocol

from . import crypto
from .encoding import ABSENT, decode, decode_as, encode, record
from .errors import (
    AlreadySetup,
    AuthenticationFailure,
    BindRejected,
    ChaincodeError,
    DecryptionFailure,
    EncodingError,
    KeyAlreadyProvisioned,
    NotReady,
    StateVerificationFailure,
    WrongMode,
)
from .ledger import Endorsement, ReadSet, TransactionProposal, WriteSet, namespaced
from .ledger_enclave import MetaResponse
from .tee import (
    AttestationReport,
    EnclaveCode,
    EnclaveInstance,
    EnclaveProgram,
    SealedBlob,
    call,
    entry_point,
    pad_report_data,
    remote_quote,
    seal,
    unseal,
    verify_local_report,
)
from .weaken import is_weakened

MODES = ("none", "per-chaincode", "client-based")


@record
@dataclass(frozen=True)
class Operation:
    function: str
    args: tuple = ()


@record
@dataclass(frozen=True)
class OperationPayload:
    operation: Operation
    data_key: bytes | None = None  # client-based state encryption only


def operation_ad(chaincode_id: str, client_id: str, nonce: bytes, result_key) -> bytes:
    return encode(("op", chaincode_id, client_id, nonce, result_key))


def result_ad(proposal_digest: bytes) -> bytes:
    return encode(("result", proposal_digest))


class ChaincodeProgram:
    """Application logic; touches state only through the shim it is handed."""

    name = "abstract"
    version = "0"

    def invoke(self, shim: "Shim", caller: str, function: str, args: tuple) -> Any:
        raise NotImplementedError


CHAINCODE_PROGRAMS: dict[str, type] = {}


def register_chaincode(cls):
    CHAINCODE_PROGRAMS[cls.name] = cls
    return cls


class StateHost(Protocol):
    def get_state(self, key: str): ...

    def get_range(self, prefix: str) -> tuple: ...

    def get_meta(self, keys: tuple, nonce: bytes): ...


class Shim:
    """getState / putState / getRange for one invocation.

    With ``ledger_key`` set every read is checked against a signed metadata
    response; all responses within one invocation must come from the same
    block height.  ``ledger_key=None`` gives the unprotected native path.
    """

    def __init__(self, chaincode_id: str, host: StateHost, rng: crypto.Rng,
                 state_key: bytes | None, ledger_key: bytes | None, span=None):
        self.chaincode_id = chaincode_id
        self.host = host
        self.rng = rng
        self.state_key = state_key
        self.ledger_key = ledger_key
        self._span = span
        self.reads: dict[str, Any] = {}
        self.writes: dict[str, bytes] = {}
        self.snapshot_seq: int | None = None
        self.meta_queries = 0

    def span(self, name):
        return self._span(name) if self._span else contextlib.nullcontext()

    # -- encryption --

    def _encrypt(self, full_key: str, value: bytes) -> bytes:
        if self.state_key is None:
            return value
        nonce = self.rng.bytes(crypto.NONCE_SIZE)
        return nonce + crypto.aead_encrypt(self.state_key, nonce, value, full_key.encode())

    def _decrypt(self, full_key: str, stored: bytes) -> bytes:
        if self.state_key is None:
            return stored
        try:
            return crypto.aead_decrypt(self.state_key, stored[:crypto.NONCE_SIZE],
                                       stored[crypto.NONCE_SIZE:], full_key.encode())
        except AuthenticationFailure:
            raise DecryptionFailure(f"state value for {full_key!r} does not decrypt") from None

    # -- verification --

    def _verify(self, items: list) -> list:
        """Check host-supplied ``(key, value)`` pairs; return their signed versions."""
        if not items:
            return []
        keys = tuple(k for k, _ in items)
        if self.ledger_key is None:
            # native path: versions are taken on trust from the host
            return [version for _, _, version in self.host.get_meta(keys, b"").entries]
        nonce = self.rng.bytes(16)
        self.meta_queries += 1
        with self.span("meta_query"):
            resp = self.host.get_meta(keys, nonce)
        with self.span("verify_state"):
            if not isinstance(resp, MetaResponse):
                raise StateVerificationFailure("host returned no metadata response")
            if not is_weakened("meta_signature"):
                if resp.nonce != nonce:
                    raise StateVerificationFailure("stale metadata response (nonce mismatch)")
                if not resp.signature_valid(self.ledger_key):
                    raise StateVerificationFailure("metadata not signed by the bound ledger enclave")
                if self.snapshot_seq is None:
                    self.snapshot_seq = resp.block_seq
                elif resp.block_seq != self.snapshot_seq:
                    raise StateVerificationFailure(
                        f"reads span block heights {self.snapshot_seq} and {resp.block_seq}")
            if tuple(e[0] for e in resp.entries) != keys:
                raise StateVerificationFailure("metadata answers different keys")
            versions = []
            for (key, value), (_, value_hash, version) in zip(items, resp.entries):
                if value_hash is ABSENT:
                    if value is not ABSENT:
                        raise StateVerificationFailure(f"{key!r} is absent but host supplied a value")
                elif value is ABSENT or not isinstance(value, bytes) or crypto.digest(value) != value_hash:
                    raise StateVerificationFailure(f"value for {key!r} does not match its signed hash")
                versions.append(version)
            return versions

    def _record_read(self, full_key: str, version) -> None:
        self.reads.setdefault(full_key, version)

    # -- chaincode API --

    def get_state(self, key: str) -> bytes | None:
        full = namespaced(self.chaincode_id, key)
        if full in self.writes:
            return self.writes[full]
        with self.span("get_state"):
            value = self.host.get_state(full)
        (version,) = self._verify([(full, value)])
        self._record_read(full, version)
        if value is ABSENT:
            return None
        with self.span("verify_state"):
            return self._decrypt(full, value)

    def put_state(self, key: str, value: bytes) -> None:
        if not isinstance(value, bytes):
            raise TypeError("state values are bytes")
        full = namespaced(self.chaincode_id, key)
        self.writes[full] = value

    def get_range(self, prefix: str) -> list[tuple[str, bytes]]:
        full_prefix = namespaced(self.chaincode_id, prefix)
        with self.span("get_state"):
            pairs = self.host.get_range(full_prefix)
        if not isinstance(pairs, tuple):
            raise StateVerificationFailure("malformed range response")
        keys = [k for k, _ in pairs]
        if any(not isinstance(k, str) or not k.startswith(full_prefix) for k in keys) \
                or len(set(keys)) != len(keys):
            raise StateVerificationFailure("range response contains foreign or duplicate keys")
        items = [(k, v) for k, v in pairs]
        versions = self._verify(items)
        result = {}
        for (full, value), version in zip(items, versions):
            self._record_read(full, version)
            if value is ABSENT:
                raise StateVerificationFailure(f"range response claims absent key {full!r}")
            with self.span("verify_state"):
                result[full] = self._decrypt(full, value)
        for full, value in self.writes.items():
            if full.startswith(full_prefix):
                result[full] = value
        strip = len(self.chaincode_id) + 1
        return [(k[strip:], result[k]) for k in sorted(result)]

    # -- results --

    def read_set(self) -> ReadSet:
        return ReadSet(tuple(sorted(self.reads.items())))

    def write_set(self) -> WriteSet:
        return WriteSet(tuple((k, self._encrypt(k, v)) for k, v in self.writes.items()))


def execute(program: ChaincodeProgram, shim: Shim, caller: str, operation: Operation):
    """Run one operation; returns ``(status, result bytes, write set)``."""
    try:
        value = program.invoke(shim, caller, operation.function, tuple(operation.args))
    except ChaincodeError as exc:
        return "error", encode(("error", exc.code)), WriteSet()
    return "ok", encode(("ok", value)), shim.write_set()


def open_result(endorsement: Endorsement, keypair: crypto.KeyPair | None = None):
    """Client side: decode (and decrypt if needed) an endorsement result."""
    result = endorsement.result
    if isinstance(result, crypto.Envelope):
        if keypair is None:
            raise DecryptionFailure("result is encrypted for the client")
        result = crypto.hybrid_decrypt(keypair, result, result_ad(endorsement.proposal_digest))
    return decode(result)


@record
@dataclass(frozen=True)
class _Identity:
    secret: bytes
    ledger_key: bytes | None
    state_key: bytes | None


class ChaincodeEnclave(EnclaveProgram):
    CODE_ID = "chaincode-enclave"
    VERSION = "1.0"

    def __init__(self, ctx, chaincode: str, ledger_measurement: bytes, mode: str,
                 chaincode_version: str = ""):
        super().__init__(ctx)
        if mode not in MODES:
            raise ValueError(f"unknown state-encryption mode {mode!r}")
        self._program: ChaincodeProgram = CHAINCODE_PROGRAMS[chaincode]()
        if chaincode_version and chaincode_version != self._program.version:
            raise ValueError(f"{chaincode} {chaincode_version} is not in the program table")
        self._chaincode_id = chaincode
        self._ledger_measurement = ledger_measurement
        self._mode = mode
        self._keypair: crypto.KeyPair | None = None
        self._ledger_key: bytes | None = None
        self._state_key: bytes | None = None

    def _require_setup(self) -> None:
        if self._keypair is None:
            raise NotReady("chaincode enclave not set up")

    @entry_point
    def setup(self) -> tuple:
        if self._keypair is not None:
            raise AlreadySetup("enclave already has an identity")
        self._keypair = crypto.keygen(self.ctx.rng)
        quote = remote_quote(self.ctx, crypto.digest(self._keypair.public))
        return self._keypair.public, quote

    @entry_point
    def public_key(self) -> bytes:
        self._require_setup()
        return self._keypair.public

    @entry_point
    def bind_ledger(self, report: AttestationReport, ledger_key: bytes) -> bool:
        self._require_setup()
        if self._ledger_key is not None:
            raise BindRejected("already bound to a ledger enclave")
        if not isinstance(report, AttestationReport) or not isinstance(ledger_key, bytes):
            raise BindRejected("malformed binding material")
        if not is_weakened("attestation"):
            if not verify_local_report(self.ctx, report):
                raise BindRejected("local attestation failed (different platform or forged)")
            if report.measurement != self._ledger_measurement:
                raise BindRejected("report is not from the expected ledger enclave")
            if report.report_data != pad_report_data(crypto.digest(ledger_key)):
                raise BindRejected("report does not commit to the presented key")
        self._ledger_key = ledger_key
        return True

    @entry_point
    def provision_key(self, envelope: crypto.Envelope) -> bool:
        self._require_setup()
        if self._mode != "per-chaincode":
            raise WrongMode(f"mode is {self._mode}")
        key = crypto.hybrid_decrypt(self._keypair, envelope, b"provision")
        if len(key) != crypto.KEY_SIZE:
            raise DecryptionFailure("provisioned key has the wrong length")
        if self._state_key is not None and self._state_key != key:
            raise KeyAlreadyProvisioned("a different state key is already installed")
        self._state_key = key
        return True

    @entry_point
    def invoke(self, proposal: TransactionProposal) -> Endorsement:
        self._require_setup()
        if self._ledger_key is None:
            raise NotReady("not bound to a ledger enclave")
        if self._mode == "per-chaincode" and self._state_key is None:
            raise NotReady("state key not provisioned")
        if proposal.chaincode_id != self._chaincode_id:
            raise DecryptionFailure("proposal addressed to another chaincode")
        with self.ctx.span("decrypt_tx"):
            payload = self._open(proposal)
        state_key = self._state_key
        if self._mode == "client-based":
            state_key = payload.data_key
            if not state_key or len(state_key) != crypto.KEY_SIZE:
                raise NotReady("client-based mode requires a 16-byte data key")
        elif self._mode == "none":
            state_key = None
        shim = Shim(self._chaincode_id, _OcallHost(self.ctx), self.ctx.rng, state_key,
                    self._ledger_key, self.ctx.span)
        status, result, write_set = execute(self._program, shim, proposal.client_id,
                                            payload.operation)
        digest = proposal.digest()
        if proposal.client_result_key:
            result = crypto.hybrid_encrypt(proposal.client_result_key, result, self.ctx.rng,
                                           result_ad(digest))
        with self.ctx.span("sign_response"):
            endorsement = Endorsement(digest, self._chaincode_id, status, shim.read_set(),
                                      write_set, result, self._keypair.public)
            return endorsement.signed_by(self._keypair)

    def _open(self, proposal: TransactionProposal) -> OperationPayload:
        mine = crypto.key_fingerprint(self._keypair.public)
        envelopes = proposal.operation if isinstance(proposal.operation, tuple) else ()
        ad = operation_ad(proposal.chaincode_id, proposal.client_id, proposal.proposal_nonce,
                          proposal.client_result_key)
        for env in envelopes:
            if isinstance(env, crypto.Envelope) and env.recipient == mine:
                plaintext = crypto.hybrid_decrypt(self._keypair, env, ad)
                try:
                    return decode_as(plaintext, OperationPayload)
                except EncodingError:
                    raise DecryptionFailure("operation payload is malformed") from None
        raise DecryptionFailure("proposal is not encrypted for this enclave")

    @entry_point
    def seal_identity(self) -> SealedBlob:
        self._require_setup()
        return seal(self.ctx, encode(_Identity(self._keypair.secret, self._ledger_key,
                                               self._state_key)))

    @entry_point
    def restore(self, blob: SealedBlob) -> bytes:
        if self._keypair is not None:
            raise AlreadySetup("restore requires a fresh instance")
        ident = decode_as(unseal(self.ctx, blob), _Identity)
        self._keypair = crypto.keypair_from_secret(ident.secret)
        self._ledger_key = ident.ledger_key
        self._state_key = ident.state_key
        return self._keypair.public


class _OcallHost:
    def __init__(self, ctx):
        self.ctx = ctx

    def get_state(self, key):
        return self.ctx.ocall("get_state", key)

    def get_range(self, prefix):
        return self.ctx.ocall("get_range", prefix)

    def get_meta(self, keys, nonce):
        return self.ctx.ocall("get_meta", keys, nonce)


def chaincode_enclave_code(chaincode: str, ledger_measurement: bytes, mode: str) -> EnclaveCode:
    version = CHAINCODE_PROGRAMS[chaincode].version
    return EnclaveCode.of(ChaincodeEnclave, chaincode=chaincode,
                          ledger_measurement=ledger_measurement, mode=mode,
                          chaincode_version=version)


class ChaincodeEnclaveClient:
    """Host-side typed wrapper around a chaincode-enclave instance."""

    def __init__(self, instance: EnclaveInstance):
        self.instance = instance

    def setup(self) -> tuple:
        return call(self.instance, "setup")

    def public_key(self) -> bytes:
        return call(self.instance, "public_key")

    def bind_ledger(self, report, ledger_key) -> bool:
        return call(self.instance, "bind_ledger", report, ledger_key)

    def provision_key(self, envelope) -> bool:
        return call(self.instance, "provision_key", envelope)

    def invoke(self, proposal: TransactionProposal, ocall) -> Endorsement:
        return call(self.instance, "invoke", proposal, ocall=ocall)

    def seal_identity(self) -> SealedBlob:
        return call(self.instance, "seal_identity")

    def restore(self, blob: SealedBlob) -> bytes:
        return call(self.instance, "restore", blob)
