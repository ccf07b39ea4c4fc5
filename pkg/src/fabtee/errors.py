"""Exception hierarchy.

Errors raised inside an enclave cross the ecall boundary by *name*; the host
re-raises the class registered here, so every enclave-visible error must be a
subclass of :class:`FabteeError`.
"""

from __future__ import annotations


class FabteeError(Exception):
    """Base class for all errors raised by this package."""


_REGISTRY: dict[str, type[FabteeError]] = {}


def _register(cls: type[FabteeError]) -> type[FabteeError]:
    _REGISTRY[cls.__name__] = cls
    return cls


def by_name(name: str) -> type[FabteeError]:
    return _REGISTRY.get(name, FabteeError)


# crypto
@_register
class AuthenticationFailure(FabteeError):
    pass


@_register
class DecryptionFailure(FabteeError):
    pass


@_register
class NonceReuse(FabteeError):
    pass


# encoding / ledger
@_register
class EncodingError(FabteeError):
    pass


@_register
class MissingField(FabteeError):
    pass


@_register
class BadOrdererSignature(FabteeError):
    pass


@_register
class SequenceGap(FabteeError):
    pass


@_register
class HashChainBreak(FabteeError):
    pass


# tee
@_register
class UnknownEntryPoint(FabteeError):
    pass


@_register
class UncertifiedPlatform(FabteeError):
    pass


@_register
class UnsealAuthenticationFailure(FabteeError):
    pass


@_register
class MalformedInput(FabteeError):
    """Enclave entry point received arguments it could not interpret."""


@_register
class EnclaveCrashed(FabteeError):
    """Entry point called on an instance that has been destroyed."""


# ledger enclave
@_register
class MeasurementMismatch(FabteeError):
    pass


@_register
class MalformedGenesis(FabteeError):
    pass


@_register
class AlreadyInitialized(FabteeError):
    pass


@_register
class NotInitialized(FabteeError):
    pass


@_register
class ForeignBlockchain(FabteeError):
    pass


@_register
class InvalidVerdict(FabteeError):
    pass


@_register
class ValueHashMismatch(FabteeError):
    pass


@_register
class StaleDelta(FabteeError):
    pass


@_register
class CrosscheckMismatch(FabteeError):
    pass


# chaincode enclave
@_register
class AlreadySetup(FabteeError):
    pass


@_register
class NotReady(FabteeError):
    """Invocation before setup/bind/provisioning completed."""


@_register
class BindRejected(FabteeError):
    pass


@_register
class WrongMode(FabteeError):
    pass


@_register
class KeyAlreadyProvisioned(FabteeError):
    pass


@_register
class StateVerificationFailure(FabteeError):
    pass


@_register
class ChaincodeError(FabteeError):
    """Application-level failure; ``code`` is the stable error name."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


# registry
@_register
class AlreadyRegistered(FabteeError):
    pass


@_register
class ReportDataMismatch(FabteeError):
    pass


@_register
class InvalidAttestation(FabteeError):
    pass


# harness / cli
@_register
class ScriptReferenceError(FabteeError):
    pass


@_register
class ConfigError(FabteeError):
    pass
