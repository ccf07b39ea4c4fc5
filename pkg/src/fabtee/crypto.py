"""Deterministic cryptographic primitives.

Algorithm choices: SHA-256 digests, Ed25519 signatures, AES-128-GCM for
authenticated encryption, X25519 + HKDF-SHA256 + AES-128-GCM for hybrid
public-key encryption, and HMAC-SHA256 for MACs and seal-key derivation.

Every operation that needs randomness takes an explicit :class:`Rng`, so a
whole simulation can be replayed from a single seed.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import os
import random
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AuthenticationFailure, DecryptionFailure, NonceReuse

DIGEST_SIZE = 32
KEY_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
MAC_SIZE = 32
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 64

Digest = bytes
Signature = bytes
SymmetricKey = bytes


class Rng:
    """Seedable byte source.  ``Rng(None)`` draws from the OS."""

    def __init__(self, seed: int | bytes | str | None = None):
        self._seed = seed
        self._random = None if seed is None else random.Random(_seed_int(seed))

    def bytes(self, n: int) -> bytes:
        if self._random is None:
            return os.urandom(n)
        return self._random.randbytes(n)

    def randint(self, lo: int, hi: int) -> int:
        if self._random is None:
            return random.SystemRandom().randint(lo, hi)
        return self._random.randint(lo, hi)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def fork(self, label: str) -> "Rng":
        """Independent child stream; deterministic when this stream is seeded."""
        if self._seed is None:
            return Rng(None)
        return Rng(hashlib.sha256(repr((self._seed, label)).encode()).digest())


def _seed_int(seed: int | bytes | str) -> int:
    if isinstance(seed, int):
        return seed
    if isinstance(seed, str):
        seed = seed.encode()
    return int.from_bytes(hashlib.sha256(seed).digest(), "big")


# -- hashing ---------------------------------------------------------------


def digest(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


# -- signatures --------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    """Identity key pair.

    ``secret`` is a 32-byte seed from which an Ed25519 signing key and an
    X25519 agreement key are derived; ``public`` is the 64-byte concatenation
    of both public keys.  One pair therefore serves both as a signature
    identity and as a hybrid-encryption recipient.
    """

    secret: bytes
    public: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public={self.public[:8].hex()}...)"


def _sub_secret(secret: bytes, label: bytes) -> bytes:
    return _hmac.new(secret, label, hashlib.sha256).digest()


def keypair_from_secret(secret: bytes) -> KeyPair:
    if len(secret) != 32:
        raise ValueError("secret must be 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(_sub_secret(secret, b"sign"))
    xk = X25519PrivateKey.from_private_bytes(_sub_secret(secret, b"kem"))
    raw = Encoding.Raw, PublicFormat.Raw
    public = sk.public_key().public_bytes(*raw) + xk.public_key().public_bytes(*raw)
    return KeyPair(secret=secret, public=public)


def keygen(rng: Rng) -> KeyPair:
    return keypair_from_secret(rng.bytes(32))


def sign(secret: bytes, message: bytes) -> Signature:
    sk = Ed25519PrivateKey.from_private_bytes(_sub_secret(secret, b"sign"))
    return sk.sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    if len(public) != PUBLIC_KEY_SIZE or len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public[:32]).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- AEAD ------------------------------------------------------------------

_nonce_debug = False
_nonce_seen: set[bytes] = set()
_nonce_lock = threading.Lock()


def set_nonce_debug(enabled: bool) -> None:
    """Toggle the global (key, nonce) reuse detector; clears history."""
    global _nonce_debug
    with _nonce_lock:
        _nonce_debug = enabled
        _nonce_seen.clear()


def _check_nonce(key: bytes, nonce: bytes) -> None:
    if not _nonce_debug:
        return
    tag = digest(key + nonce)
    with _nonce_lock:
        if tag in _nonce_seen:
            raise NonceReuse(f"nonce {nonce.hex()} reused under the same key")
        _nonce_seen.add(tag)


def aead_encrypt(key: SymmetricKey, nonce: bytes, plaintext: bytes,
                 associated_data: bytes = b"") -> bytes:
    """AES-128-GCM; returns ``ciphertext || tag``."""
    if len(key) != KEY_SIZE or len(nonce) != NONCE_SIZE:
        raise ValueError("bad key or nonce length")
    _check_nonce(key, nonce)
    return AESGCM(key).encrypt(nonce, plaintext, associated_data)


def aead_decrypt(key: SymmetricKey, nonce: bytes, ciphertext: bytes,
                 associated_data: bytes = b"") -> bytes:
    if len(key) != KEY_SIZE or len(nonce) != NONCE_SIZE:
        raise AuthenticationFailure("bad key or nonce length")
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, associated_data)
    except InvalidTag:
        raise AuthenticationFailure("AEAD authentication failed") from None


# -- hybrid encryption ------------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    recipient: bytes  # first 8 bytes of digest(recipient public key)
    ephemeral: bytes
    nonce: bytes
    ciphertext: bytes


def key_fingerprint(public: bytes) -> bytes:
    return digest(public)[:8]


def _hybrid_key(shared: bytes, ephemeral: bytes, public: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=None,
                info=b"fabtee-hybrid" + ephemeral + public).derive(shared)


def hybrid_encrypt(public: bytes, plaintext: bytes, rng: Rng,
                   associated_data: bytes = b"") -> Envelope:
    if len(public) != PUBLIC_KEY_SIZE:
        raise ValueError("recipient public key must be 64 bytes")
    eph = X25519PrivateKey.from_private_bytes(rng.bytes(32))
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(public[32:]))
    key = _hybrid_key(shared, eph_pub, public)
    nonce = rng.bytes(NONCE_SIZE)
    ct = aead_encrypt(key, nonce, plaintext, associated_data)
    return Envelope(key_fingerprint(public), eph_pub, nonce, ct)


def hybrid_decrypt(keypair: KeyPair, envelope: Envelope,
                   associated_data: bytes = b"") -> bytes:
    xk = X25519PrivateKey.from_private_bytes(_sub_secret(keypair.secret, b"kem"))
    try:
        shared = xk.exchange(X25519PublicKey.from_public_bytes(envelope.ephemeral))
    except ValueError:
        raise DecryptionFailure("malformed ephemeral key") from None
    key = _hybrid_key(shared, envelope.ephemeral, keypair.public)
    try:
        return aead_decrypt(key, envelope.nonce, envelope.ciphertext, associated_data)
    except AuthenticationFailure:
        raise DecryptionFailure("envelope does not decrypt under this key") from None


# -- MAC / KDF ---------------------------------------------------------------


def mac(key: bytes, message: bytes) -> bytes:
    return _hmac.new(key, message, hashlib.sha256).digest()


def mac_verify(key: bytes, message: bytes, tag: bytes) -> bool:
    return _hmac.compare_digest(mac(key, message), tag)


def derive_seal_key(platform_secret: SymmetricKey, measurement: Digest) -> SymmetricKey:
    return mac(platform_secret, b"seal-key" + measurement)[:KEY_SIZE]


def derive_key(root: bytes, label: bytes) -> SymmetricKey:
    return mac(root, label)[:KEY_SIZE]
