import pytest
from hypothesis import given, strategies as st

from fabtee import crypto
from fabtee.errors import AuthenticationFailure, DecryptionFailure, NonceReuse


def test_digest_size_and_determinism():
    assert len(crypto.digest(b"x")) == 32
    assert crypto.digest(b"x") == crypto.digest(b"x")
    assert crypto.digest(b"x") != crypto.digest(b"y")


def test_rng_is_reproducible_and_forks_independently():
    a, b = crypto.Rng(1), crypto.Rng(1)
    assert a.bytes(16) == b.bytes(16)
    assert crypto.Rng(1).fork("x").bytes(8) == crypto.Rng(1).fork("x").bytes(8)
    assert crypto.Rng(1).fork("x").bytes(8) != crypto.Rng(1).fork("y").bytes(8)


def test_keypair_shapes():
    kp = crypto.keygen(crypto.Rng(3))
    assert len(kp.secret) == 32 and len(kp.public) == crypto.PUBLIC_KEY_SIZE
    assert crypto.keypair_from_secret(kp.secret) == kp


@given(st.binary(max_size=200))
def test_sign_verify(message):
    kp = crypto.keygen(crypto.Rng(4))
    sig = crypto.sign(kp.secret, message)
    assert len(sig) == crypto.SIGNATURE_SIZE
    assert crypto.verify(kp.public, message, sig)
    assert not crypto.verify(kp.public, message + b"!", sig)


def test_verify_rejects_wrong_key_and_garbage():
    k1, k2 = crypto.keygen(crypto.Rng(5)), crypto.keygen(crypto.Rng(6))
    sig = crypto.sign(k1.secret, b"m")
    assert not crypto.verify(k2.public, b"m", sig)
    assert not crypto.verify(k1.public, b"m", b"\x00" * 64)
    assert not crypto.verify(b"short", b"m", sig)


@given(st.binary(max_size=200), st.binary(max_size=20))
def test_aead_round_trip(plaintext, ad):
    key, nonce = bytes(16), bytes(12)
    ct = crypto.aead_encrypt(key, nonce, plaintext, ad)
    assert len(ct) == len(plaintext) + crypto.TAG_SIZE
    assert crypto.aead_decrypt(key, nonce, ct, ad) == plaintext


def test_aead_tamper_and_wrong_ad():
    key, nonce = bytes(16), bytes(12)
    ct = crypto.aead_encrypt(key, nonce, b"secret", b"ad")
    with pytest.raises(AuthenticationFailure):
        crypto.aead_decrypt(key, nonce, ct, b"other")
    flipped = bytes([ct[0] ^ 1]) + ct[1:]
    with pytest.raises(AuthenticationFailure):
        crypto.aead_decrypt(key, nonce, flipped, b"ad")


def test_nonce_reuse_detector():
    crypto.set_nonce_debug(True)
    try:
        crypto.aead_encrypt(bytes(16), bytes(12), b"a")
        with pytest.raises(NonceReuse):
            crypto.aead_encrypt(bytes(16), bytes(12), b"b")
    finally:
        crypto.set_nonce_debug(False)


@given(st.binary(max_size=300))
def test_hybrid_round_trip(plaintext):
    rng = crypto.Rng(8)
    kp = crypto.keygen(rng)
    env = crypto.hybrid_encrypt(kp.public, plaintext, rng, b"ad")
    assert env.recipient == crypto.key_fingerprint(kp.public)
    assert crypto.hybrid_decrypt(kp, env, b"ad") == plaintext


def test_hybrid_wrong_recipient_or_ad():
    rng = crypto.Rng(9)
    alice, eve = crypto.keygen(rng), crypto.keygen(rng)
    env = crypto.hybrid_encrypt(alice.public, b"bid", rng, b"ad")
    with pytest.raises(DecryptionFailure):
        crypto.hybrid_decrypt(eve, env, b"ad")
    with pytest.raises(DecryptionFailure):
        crypto.hybrid_decrypt(alice, env, b"other")


def test_mac_and_derivations():
    tag = crypto.mac(b"k", b"m")
    assert crypto.mac_verify(b"k", b"m", tag)
    assert not crypto.mac_verify(b"k", b"n", tag)
    assert len(crypto.derive_seal_key(bytes(16), bytes(32))) == crypto.KEY_SIZE
    assert crypto.derive_seal_key(bytes(16), b"a" * 32) != crypto.derive_seal_key(bytes(16), b"b" * 32)
