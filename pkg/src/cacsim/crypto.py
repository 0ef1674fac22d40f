"""Signature providers.

Two providers share one interface:

* ``HmacScheme``: a keyed digest. The secret is derived from the seed and
  the public key is a hash of the secret. Verification looks the secret up
  in the provider's key registry, which plays the part of an ideal
  signature oracle. Byzantine code only ever holds its own ``KeyPair``.
* ``Ed25519Scheme``: a real asymmetric scheme from ``cryptography``.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

SIG_LEN = 32
POK_TAG = b"cacsim/pok"


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret: bytes = field(repr=False)


class HmacScheme:
    name = "hmac"
    sig_len = SIG_LEN

    def __init__(self):
        self._secrets: dict[bytes, bytes] = {}

    def keygen(self, seed: int) -> KeyPair:
        seed_bytes = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big")
        secret = hashlib.sha256(b"cacsim/secret" + seed_bytes).digest()
        pk = hashlib.sha256(b"cacsim/pk" + secret).digest()
        self._secrets[pk] = secret
        return KeyPair(pk, secret)

    def sign(self, kp: KeyPair, msg: bytes) -> bytes:
        return hmac.digest(kp.secret, kp.public_key + msg, "sha256")

    def verify(self, pk: bytes, msg: bytes, sig: bytes) -> bool:
        secret = self._secrets.get(pk)
        if secret is None or len(sig) != SIG_LEN:
            return False
        return hmac.compare_digest(hmac.digest(secret, pk + msg, "sha256"), sig)

    def prove_knowledge(self, kp: KeyPair) -> bytes:
        return self.sign(kp, POK_TAG + kp.public_key)

    def verify_knowledge(self, pk: bytes, proof: bytes) -> bool:
        return self.verify(pk, POK_TAG + pk, proof)


class Ed25519Scheme:
    """Real signatures. Ed25519 tokens are 64 bytes; the codec length-prefixes
    signatures so the wire format does not depend on the provider."""

    name = "ed25519"
    sig_len = 64

    def keygen(self, seed: int) -> KeyPair:
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        seed_bytes = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big")
        raw = hashlib.sha256(b"cacsim/ed25519" + seed_bytes).digest()
        sk = Ed25519PrivateKey.from_private_bytes(raw)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(pk, raw)

    def sign(self, kp: KeyPair, msg: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(kp.secret).sign(msg)

    def verify(self, pk: bytes, msg: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(pk).verify(sig, msg)
        except (InvalidSignature, ValueError):
            return False
        return True

    def prove_knowledge(self, kp: KeyPair) -> bytes:
        return self.sign(kp, POK_TAG + kp.public_key)

    def verify_knowledge(self, pk: bytes, proof: bytes) -> bool:
        return self.verify(pk, POK_TAG + pk, proof)


_PROVIDERS = {}


def get_provider(name: str = "hmac"):
    """Process-wide provider instance. Keygen is deterministic, so sharing
    the registry between runs cannot change any outcome."""
    if name not in _PROVIDERS:
        if name == "hmac":
            _PROVIDERS[name] = HmacScheme()
        elif name == "ed25519":
            _PROVIDERS[name] = Ed25519Scheme()
        else:
            raise ValueError(f"unknown crypto provider {name!r}")
    return _PROVIDERS[name]
