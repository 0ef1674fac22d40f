import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cacsim.crypto import Ed25519Scheme, HmacScheme, get_provider


@pytest.fixture(params=["hmac", "ed25519"])
def provider(request):
    return get_provider(request.param)


def test_keygen_is_deterministic(provider):
    assert provider.keygen(7).public_key == provider.keygen(7).public_key


def test_keygen_seeds_do_not_collide():
    prov = get_provider("hmac")
    pks = {prov.keygen(s).public_key for s in range(10_000)}
    assert len(pks) == 10_000


def test_keygen_zero_round_trip(provider):
    kp = provider.keygen(0)
    assert provider.verify(kp.public_key, b"m", provider.sign(kp, b"m"))


def test_sign_binds_message_and_key(provider):
    kp, other = provider.keygen(1), provider.keygen(2)
    sig = provider.sign(kp, b"x")
    assert provider.verify(kp.public_key, b"x", sig)
    assert not provider.verify(kp.public_key, b"y", sig)
    assert not provider.verify(other.public_key, b"x", sig)


def test_empty_message(provider):
    kp = provider.keygen(3)
    assert provider.verify(kp.public_key, b"", provider.sign(kp, b""))


def test_random_tokens_never_verify():
    prov = get_provider("hmac")
    kp = prov.keygen(5)
    rng = random.Random(11)
    hits = sum(prov.verify(kp.public_key, b"m", rng.randbytes(prov.sig_len)) for _ in range(10_000))
    assert hits == 0


def test_unknown_key_fails():
    prov = HmacScheme()
    kp = get_provider("hmac").keygen(1)
    # a fresh registry has never seen this key
    assert not prov.verify(kp.public_key, b"m", get_provider("hmac").sign(kp, b"m"))


def test_knowledge_proofs(provider):
    kp, other = provider.keygen(4), provider.keygen(9)
    proof = provider.prove_knowledge(kp)
    assert provider.verify_knowledge(kp.public_key, proof)
    assert not provider.verify_knowledge(other.public_key, proof)
    for i in range(len(proof)):
        bad = bytearray(proof)
        bad[i] ^= 0x01
        assert not provider.verify_knowledge(kp.public_key, bytes(bad))


def test_knowledge_proof_is_not_a_plain_signature(provider):
    # a signature on the bare key must not pass as a proof of knowledge
    kp = provider.keygen(4)
    assert not provider.verify_knowledge(kp.public_key, provider.sign(kp, kp.public_key))


def test_ed25519_sizes():
    prov = Ed25519Scheme()
    kp = prov.keygen(1)
    assert len(kp.public_key) == 32
    assert len(prov.sign(kp, b"m")) == 64


def test_unknown_provider():
    with pytest.raises(ValueError):
        get_provider("rsa")


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=64), st.integers(min_value=0, max_value=2**64 - 1))
def test_hmac_round_trip(msg, seed):
    prov = get_provider("hmac")
    kp = prov.keygen(seed)
    assert prov.verify(kp.public_key, msg, prov.sign(kp, msg))
    assert not prov.verify(kp.public_key, msg + b"\x00", prov.sign(kp, msg))
