"""Simulated enclave-protected chaincode execution for a permissioned blockchain."""

__version__ = "0.1.0"
