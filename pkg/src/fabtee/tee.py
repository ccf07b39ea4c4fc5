"""Simulated trusted-execution substrate.

An enclave program is an ordinary class whose entry points are marked with
:func:`entry_point`.  :func:`enclave_create` instantiates it *inside* a closure
owned by :class:`EnclaveInstance`; the host only ever sees the measurement,
the platform id, and the bytes returned by :func:`ecall`.  Programs reach the
platform (sealing, attestation, randomness, host calls) through the
:class:`EnclaveContext` they receive at construction.

Platform secrets stay inside this module.  Attestation keys of genuine
platforms are certified by an :class:`AttestationService`, which stands in for
the vendor's remote attestation service.
"""

from __future__ import annotations

import contextlib
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterator

from . import crypto
from .crypto import KeyPair, Rng
from .encoding import decode, encode, record
from .errors import (
    ChaincodeError,
    EnclaveCrashed,
    FabteeError,
    UncertifiedPlatform,
    UnknownEntryPoint,
    UnsealAuthenticationFailure,
    by_name,
)
from .weaken import is_weakened

REPORT_DATA_SIZE = 64

Ocall = Callable[[str, bytes], bytes]


def pad_report_data(data: bytes) -> bytes:
    """Fit ``data`` into the fixed report-data field; longer inputs are hashed."""
    if len(data) > REPORT_DATA_SIZE:
        data = crypto.digest(data)
    return data.ljust(REPORT_DATA_SIZE, b"\x00")


@record
@dataclass(frozen=True)
class AttestationReport:
    form: str  # "local" (MAC) or "remote" (quote signature)
    measurement: bytes
    report_data: bytes
    platform_id: str
    proof: bytes

    def __post_init__(self):
        if len(self.report_data) != REPORT_DATA_SIZE:
            raise ValueError("report_data must be exactly 64 bytes")

    def body(self) -> bytes:
        return encode(("report", self.form, self.measurement, self.report_data, self.platform_id))

    def digest(self) -> bytes:
        return crypto.digest(encode(self))


@record
@dataclass(frozen=True)
class AttestationVerdict:
    report_digest: bytes
    measurement: bytes
    report_data: bytes
    outcome: str  # "valid" or "invalid"
    service_signature: bytes = b""

    def body(self) -> bytes:
        return encode(("verdict", self.report_digest, self.measurement,
                       self.report_data, self.outcome))

    def signature_valid(self, service_public_key: bytes) -> bool:
        return crypto.verify(service_public_key, self.body(), self.service_signature)

    @property
    def valid(self) -> bool:
        return self.outcome == "valid"


@record
@dataclass(frozen=True)
class SealedBlob:
    producer_measurement: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes


class Platform:
    """One SGX-capable machine.  Its root secret never leaves this module."""

    def __init__(self, platform_id: str, rng: Rng, attestation_capable: bool = True):
        self.platform_id = platform_id
        self._secret = rng.bytes(crypto.KEY_SIZE)
        self._attestation: KeyPair | None = crypto.keygen(rng) if attestation_capable else None
        self._report_key = crypto.derive_key(self._secret, b"report-key")

    @property
    def attestation_public_key(self) -> bytes | None:
        return None if self._attestation is None else self._attestation.public

    def __repr__(self) -> str:
        return f"Platform({self.platform_id!r})"


class AttestationService:
    """Offline stand-in for the remote attestation service.

    Its public key is well known (pinned in the genesis configuration).
    """

    def __init__(self, rng: Rng):
        self._keypair = crypto.keygen(rng)
        self._certified: dict[str, bytes] = {}

    @property
    def public_key(self) -> bytes:
        return self._keypair.public

    def certify(self, platform: Platform) -> None:
        if platform.attestation_public_key is None:
            raise UncertifiedPlatform(platform.platform_id)
        self._certified[platform.platform_id] = platform.attestation_public_key

    def verify(self, report: AttestationReport) -> AttestationVerdict:
        key = self._certified.get(report.platform_id)
        ok = (report.form == "remote" and key is not None
              and crypto.verify(key, report.body(), report.proof))
        verdict = AttestationVerdict(report.digest(), report.measurement, report.report_data,
                                     "valid" if ok else "invalid")
        return _sign_verdict(self._keypair, verdict)


def _sign_verdict(keypair: KeyPair, verdict: AttestationVerdict) -> AttestationVerdict:
    return AttestationVerdict(verdict.report_digest, verdict.measurement, verdict.report_data,
                              verdict.outcome, crypto.sign(keypair.secret, verdict.body()))


def ias_verify(service: AttestationService, report: AttestationReport) -> AttestationVerdict:
    return service.verify(report)


def verdict_binds(verdict: AttestationVerdict, report: AttestationReport,
                  service_public_key: bytes) -> bool:
    """Third-party check: valid, service-signed, and about exactly ``report``."""
    if is_weakened("attestation"):
        return True
    return (verdict.signature_valid(service_public_key) and verdict.valid
            and verdict.report_digest == report.digest()
            and verdict.measurement == report.measurement
            and verdict.report_data == report.report_data)


# -- enclave programs ------------------------------------------------------


def entry_point(fn):
    fn._entry_point = True
    return fn


class EnclaveProgram:
    """Base class for enclave code.

    ``CODE_ID`` and ``VERSION`` plus the construction parameters form the code
    identity that is measured.
    """

    CODE_ID = "abstract"
    VERSION = "0"

    def __init__(self, ctx: "EnclaveContext", **params):
        self.ctx = ctx


@dataclass(frozen=True)
class EnclaveCode:
    program: type
    params: tuple = ()  # sorted (name, value) pairs; values must be encodable

    @classmethod
    def of(cls, program: type, **params) -> "EnclaveCode":
        return cls(program, tuple(sorted(params.items())))

    @property
    def identity(self) -> bytes:
        return encode(("code", self.program.CODE_ID, self.program.VERSION, self.params))

    @property
    def measurement(self) -> bytes:
        return crypto.digest(b"mrenclave" + self.identity)


class Profiler:
    """Host-attached span recorder (wall-clock, monotonic)."""

    def __init__(self):
        self.samples: dict[str, list[float]] = {}

    def record(self, name: str, seconds: float) -> None:
        self.samples.setdefault(name, []).append(seconds)

    @contextlib.contextmanager
    def span(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record(name, time.perf_counter() - start)


class EnclaveContext:
    """Trusted-runtime services available to the code inside one enclave."""

    def __init__(self, platform: Platform, measurement: bytes, rng: Rng, instance: "EnclaveInstance"):
        self._platform = platform
        self.measurement = measurement
        self.platform_id = platform.platform_id
        self.rng = rng
        self._instance = instance
        self._ocall: Ocall | None = None

    def ocall(self, name: str, *args) -> Any:
        if self._ocall is None:
            raise FabteeError(f"no host handler for ocall {name!r}")
        return decode(self._ocall(name, encode(args)))

    @contextlib.contextmanager
    def span(self, name: str) -> Iterator[None]:
        profiler = self._instance.profiler
        if profiler is None:
            yield
        else:
            with profiler.span(name):
                yield


def local_attest(ctx: EnclaveContext, report_data: bytes) -> AttestationReport:
    """Produce a local-form report, MACed under the platform report key."""
    report = AttestationReport("local", ctx.measurement, pad_report_data(report_data),
                               ctx.platform_id, b"")
    proof = crypto.mac(ctx._platform._report_key, report.body())
    return AttestationReport(report.form, report.measurement, report.report_data,
                             report.platform_id, proof)


def verify_local_report(ctx: EnclaveContext, report: AttestationReport) -> bool:
    """Verifier-side check; succeeds only for reports made on the same platform."""
    if is_weakened("attestation"):
        return True
    return (report.form == "local"
            and crypto.mac_verify(ctx._platform._report_key, report.body(), report.proof))


def remote_quote(ctx: EnclaveContext, report_data: bytes) -> AttestationReport:
    """Quoting-enclave analogue: locally attest, then sign with the platform key."""
    platform = ctx._platform
    if platform._attestation is None:
        raise UncertifiedPlatform(platform.platform_id)
    local = local_attest(ctx, report_data)
    if not crypto.mac_verify(platform._report_key, local.body(), local.proof):
        raise UncertifiedPlatform("quoting enclave rejected local report")
    quote = AttestationReport("remote", local.measurement, local.report_data, local.platform_id, b"")
    signature = crypto.sign(platform._attestation.secret, quote.body())
    return AttestationReport(quote.form, quote.measurement, quote.report_data,
                             quote.platform_id, signature)


def seal(ctx: EnclaveContext, payload: bytes) -> SealedBlob:
    key = crypto.derive_seal_key(ctx._platform._secret, ctx.measurement)
    nonce = ctx.rng.bytes(crypto.NONCE_SIZE)
    ct = crypto.aead_encrypt(key, nonce, payload, ctx.measurement)
    return SealedBlob(ctx.measurement, nonce, ct[:-crypto.TAG_SIZE], ct[-crypto.TAG_SIZE:])


def unseal(ctx: EnclaveContext, blob: SealedBlob) -> bytes:
    key = crypto.derive_seal_key(ctx._platform._secret, ctx.measurement)
    try:
        return crypto.aead_decrypt(key, blob.nonce, blob.ciphertext + blob.tag, ctx.measurement)
    except crypto.AuthenticationFailure:
        raise UnsealAuthenticationFailure("blob was not sealed by this enclave on this platform") from None


# -- instances ---------------------------------------------------------------

_BOUNDARY_ERRORS = (TypeError, ValueError, KeyError, IndexError, AttributeError)


class EnclaveInstance:
    """Host-side handle.  Only ``measurement``, ``platform_id``, ``code_name``
    and :meth:`ecall` are observable; the program state lives in a closure."""

    __slots__ = ("measurement", "platform_id", "code_name", "profiler", "_dispatch", "_lock", "_alive")

    def __init__(self, measurement: bytes, platform_id: str, code_name: str):
        self.measurement = measurement
        self.platform_id = platform_id
        self.code_name = code_name
        self.profiler: Profiler | None = None
        self._dispatch = None
        self._lock = threading.RLock()
        self._alive = True

    @property
    def alive(self) -> bool:
        return self._alive

    def ecall(self, entry: str, args: bytes, ocall: Ocall | None = None) -> bytes:
        with self._lock:
            if not self._alive:
                raise EnclaveCrashed(self.code_name)
            return self._dispatch(entry, args, ocall)

    def destroy(self) -> None:
        """Terminate the enclave; its volatile state is lost."""
        with self._lock:
            self._alive = False
            self._dispatch = None

    def __repr__(self) -> str:
        return f"EnclaveInstance({self.code_name}@{self.platform_id}, {self.measurement[:6].hex()})"


def enclave_create(platform: Platform, code: EnclaveCode, rng: Rng) -> EnclaveInstance:
    measurement = code.measurement
    instance = EnclaveInstance(measurement, platform.platform_id, code.program.CODE_ID)
    ctx = EnclaveContext(platform, measurement, rng, instance)
    program = code.program(ctx, **dict(code.params))
    table = {name: getattr(program, name) for name in dir(type(program))
             if getattr(getattr(type(program), name), "_entry_point", False)}

    def dispatch(entry: str, args: bytes, ocall: Ocall | None) -> bytes:
        fn = table.get(entry)
        if fn is None:
            raise UnknownEntryPoint(entry)
        ctx._ocall = ocall
        try:
            decoded = decode(args)
            if not isinstance(decoded, tuple):
                raise TypeError("arguments must be a list")
            return encode(("ok", fn(*decoded)))
        except ChaincodeError as exc:
            return encode(("err", "ChaincodeError", exc.detail, exc.code))
        except FabteeError as exc:
            return encode(("err", type(exc).__name__, str(exc), None))
        except _BOUNDARY_ERRORS as exc:
            return encode(("err", "MalformedInput", f"{type(exc).__name__}: {exc}", None))
        finally:
            ctx._ocall = None

    instance._dispatch = dispatch
    return instance


def ecall(instance: EnclaveInstance, entry: str, args: bytes, ocall: Ocall | None = None) -> bytes:
    return instance.ecall(entry, args, ocall)


def call(instance: EnclaveInstance, entry: str, *args, ocall: Ocall | None = None) -> Any:
    """Host convenience: encode arguments, decode the reply, re-raise errors."""
    reply = decode(instance.ecall(entry, encode(args), ocall))
    if reply[0] == "ok":
        return reply[1]
    _, name, message, code = reply
    if name == "ChaincodeError":
        raise ChaincodeError(code, message)
    raise by_name(name)(message)
