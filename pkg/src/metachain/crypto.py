"""Hashing and Ed25519 signing helpers.

All randomness in the simulator flows from integer seeds; key material for
simulated nodes is derived deterministically so that equal seeds give
byte-identical runs.
"""

from __future__ import annotations

import hashlib

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SIGNATURE_LEN = 64
HASH_LEN = 32


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def subseed(seed: int, label: str) -> int:
    """Derive a named 64-bit sub-seed from a master seed."""
    digest = sha256(seed.to_bytes(16, "big", signed=True), label.encode())
    return int.from_bytes(digest[:8], "big")


class KeyPair:
    """Ed25519 key pair bound to an address string."""

    __slots__ = ("address", "_private", "public_bytes")

    def __init__(self, address: str, private: Ed25519PrivateKey):
        self.address = address
        self._private = private
        self.public_bytes = private.public_key().public_bytes_raw()

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def keypair_for(seed: int, address: str) -> KeyPair:
    """Deterministic key pair for a simulated address."""
    material = sha256(seed.to_bytes(16, "big", signed=True), b"key:", address.encode())
    return KeyPair(address, Ed25519PrivateKey.from_private_bytes(material))


def verify(public_bytes: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_bytes).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class KeyStore:
    """Lazily derived key pairs for a set of addresses, one master seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._pairs: dict[str, KeyPair] = {}

    def pair(self, address: str) -> KeyPair:
        kp = self._pairs.get(address)
        if kp is None:
            kp = keypair_for(self.seed, address)
            self._pairs[address] = kp
        return kp

    def public_bytes(self, address: str) -> bytes:
        return self.pair(address).public_bytes

    def sign(self, address: str, message: bytes) -> bytes:
        return self.pair(address).sign(message)
