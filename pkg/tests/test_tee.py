import pytest
from hypothesis import given, strategies as st

from fabtee import crypto
from fabtee.errors import (
    ChaincodeError,
    EnclaveCrashed,
    MalformedInput,
    UncertifiedPlatform,
    UnknownEntryPoint,
    UnsealAuthenticationFailure,
)
from fabtee.tee import (
    AttestationService,
    EnclaveCode,
    EnclaveProgram,
    Platform,
    call,
    enclave_create,
    entry_point,
    local_attest,
    remote_quote,
    seal,
    unseal,
    verdict_binds,
    verify_local_report,
)
from fabtee.weaken import weakened


class Counter(EnclaveProgram):
    CODE_ID = "counter"
    VERSION = "1"

    def __init__(self, ctx, start=0):
        super().__init__(ctx)
        self._n = start

    @entry_point
    def bump(self, by: int) -> int:
        self._n += by
        return self._n

    @entry_point
    def fail(self):
        raise ChaincodeError("Nope", "detail")

    @entry_point
    def seal_count(self):
        return seal(self.ctx, self._n.to_bytes(4, "big"))

    @entry_point
    def unseal_count(self, blob):
        return int.from_bytes(unseal(self.ctx, blob), "big")

    @entry_point
    def report(self, data: bytes):
        return local_attest(self.ctx, data)

    @entry_point
    def check(self, report) -> bool:
        return verify_local_report(self.ctx, report)

    @entry_point
    def quote(self, data: bytes):
        return remote_quote(self.ctx, data)

    @entry_point
    def ask_host(self, key: str):
        return self.ctx.ocall("lookup", key)

    def not_exported(self):
        return "secret"


class Other(Counter):
    CODE_ID = "other"


@pytest.fixture
def world():
    rng = crypto.Rng(11)
    service = AttestationService(rng.fork("svc"))
    a, b = Platform("A", rng.fork("A")), Platform("B", rng.fork("B"))
    service.certify(a)
    service.certify(b)
    return rng, service, a, b


def test_measurement_depends_on_code_and_params():
    assert EnclaveCode.of(Counter).measurement == EnclaveCode.of(Counter).measurement
    assert EnclaveCode.of(Counter).measurement != EnclaveCode.of(Counter, start=1).measurement
    assert EnclaveCode.of(Counter).measurement != EnclaveCode.of(Other).measurement


def test_state_lives_behind_entry_points(world):
    rng, _, a, _ = world
    inst = enclave_create(a, EnclaveCode.of(Counter, start=5), rng)
    assert call(inst, "bump", 2) == 7
    assert call(inst, "bump", 1) == 8
    assert not hasattr(inst, "_n") and not hasattr(inst, "program")
    with pytest.raises(UnknownEntryPoint):
        call(inst, "not_exported")


def test_errors_cross_the_boundary_by_name(world):
    rng, _, a, _ = world
    inst = enclave_create(a, EnclaveCode.of(Counter), rng)
    with pytest.raises(ChaincodeError) as info:
        call(inst, "fail")
    assert info.value.code == "Nope"
    with pytest.raises(MalformedInput):
        call(inst, "bump", "x")
    from fabtee.encoding import decode
    reply = decode(inst.ecall("bump", b"\x03\x00\x00\x00\x01\x05"))  # not an argument list
    assert reply[:2] == ("err", "MalformedInput")


def test_destroyed_enclave_refuses_calls(world):
    rng, _, a, _ = world
    inst = enclave_create(a, EnclaveCode.of(Counter), rng)
    inst.destroy()
    with pytest.raises(EnclaveCrashed):
        call(inst, "bump", 1)


def test_ocalls_reach_the_host(world):
    rng, _, a, _ = world
    from fabtee.encoding import decode, encode
    inst = enclave_create(a, EnclaveCode.of(Counter), rng)
    seen = []

    def host(name, args):
        seen.append((name, decode(args)))
        return encode("value")

    assert call(inst, "ask_host", "k", ocall=host) == "value"
    assert seen == [("lookup", ("k",))]


def test_sealing_binds_measurement_and_platform(world):
    rng, _, a, b = world
    inst = enclave_create(a, EnclaveCode.of(Counter, start=9), rng)
    blob = call(inst, "seal_count")
    fresh = enclave_create(a, EnclaveCode.of(Counter, start=9), rng)
    assert call(fresh, "unseal_count", blob) == 9
    for other in (enclave_create(b, EnclaveCode.of(Counter, start=9), rng),
                  enclave_create(a, EnclaveCode.of(Other, start=9), rng)):
        with pytest.raises(UnsealAuthenticationFailure):
            call(other, "unseal_count", blob)


def test_local_attestation_is_platform_bound(world):
    rng, _, a, b = world
    prover = enclave_create(a, EnclaveCode.of(Counter), rng)
    report = call(prover, "report", b"data")
    assert len(report.report_data) == 64 and report.report_data.startswith(b"data")
    assert call(enclave_create(a, EnclaveCode.of(Other), rng), "check", report)
    remote = enclave_create(b, EnclaveCode.of(Other), rng)
    assert not call(remote, "check", report)
    with weakened("attestation"):
        assert call(remote, "check", report)


def test_remote_quote_and_verdict(world):
    rng, service, a, _ = world
    inst = enclave_create(a, EnclaveCode.of(Counter), rng)
    quote = call(inst, "quote", b"pk")
    verdict = service.verify(quote)
    assert verdict.valid and verdict_binds(verdict, quote, service.public_key)
    other = call(inst, "quote", b"other")
    assert not verdict_binds(verdict, other, service.public_key)
    forged = type(verdict)(verdict.report_digest, verdict.measurement, verdict.report_data,
                           "valid", bytes(64))
    assert not verdict_binds(forged, quote, service.public_key)


def test_uncertified_platform_cannot_quote(world):
    rng, service, _, _ = world
    rogue = Platform("R", rng.fork("R"), attestation_capable=False)
    inst = enclave_create(rogue, EnclaveCode.of(Counter), rng)
    with pytest.raises(UncertifiedPlatform):
        call(inst, "quote", b"x")
    with pytest.raises(UncertifiedPlatform):
        service.certify(rogue)
    # a capable but uncertified platform gets an "invalid" verdict
    loose = Platform("L", rng.fork("L"))
    q = call(enclave_create(loose, EnclaveCode.of(Counter), rng), "quote", b"x")
    assert not service.verify(q).valid


def test_weakening_switch_is_scoped():
    from fabtee.weaken import is_weakened
    with weakened("sequence_check"):
        assert is_weakened("sequence_check")
    assert not is_weakened("sequence_check")
    with pytest.raises(ValueError):
        with weakened("bogus"):
            pass


@given(st.lists(st.integers(min_value=-5, max_value=5), max_size=10))
def test_enclave_state_matches_plain_accumulator(bumps):
    rng = crypto.Rng(0)
    inst = enclave_create(Platform("P", rng), EnclaveCode.of(Counter), rng)
    total = 0
    for b in bumps:
        total += b
        assert call(inst, "bump", b) == total
