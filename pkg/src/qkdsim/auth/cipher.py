"""Toy keyed stream cipher with a 64-bit integrity tag.

NOT SECURE. The keystream and tag both come from the SplitMix64 finalizer;
the construction is deterministic so transcripts are reproducible. Anything
exposing ``encrypt``/``decrypt`` with the same signatures can replace it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
KEY_BYTES = 16
TAG_BYTES = 8


class IntegrityError(Exception):
    """Tag check failed: wrong key or modified ciphertext."""


def mix64(z: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int, index: int) -> int:
    """Element ``index`` of the SplitMix64 stream started at ``seed``."""
    return mix64(seed + (index + 1) * GOLDEN_GAMMA)


@dataclass(frozen=True)
class SymmetricKey:
    key_bytes: bytes

    def __post_init__(self):
        if len(self.key_bytes) != KEY_BYTES:
            raise ValueError(f"keys are {KEY_BYTES} bytes, got {len(self.key_bytes)}")

    @classmethod
    def generate(cls, rng: np.random.Generator) -> "SymmetricKey":
        return cls(rng.bytes(KEY_BYTES))

    @property
    def words(self) -> tuple[int, int]:
        return (
            int.from_bytes(self.key_bytes[:8], "big"),
            int.from_bytes(self.key_bytes[8:], "big"),
        )

    def __repr__(self) -> str:
        return f"SymmetricKey({self.key_bytes.hex()[:8]}…)"


@dataclass(frozen=True)
class EncryptedBlock:
    ciphertext: bytes
    tag: bytes

    def __post_init__(self):
        if len(self.tag) != TAG_BYTES:
            raise ValueError(f"tags are {TAG_BYTES} bytes")

    def to_bytes(self) -> bytes:
        return self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedBlock":
        if len(data) < TAG_BYTES:
            raise ValueError("encrypted block shorter than its tag")
        return cls(data[:-TAG_BYTES], data[-TAG_BYTES:])


class Cipher(Protocol):
    def encrypt(self, key: SymmetricKey, plaintext: bytes) -> EncryptedBlock: ...

    def decrypt(self, key: SymmetricKey, block: EncryptedBlock) -> bytes: ...


class ToyCipher:
    def _keystream(self, key: SymmetricKey, length: int) -> bytes:
        k0, k1 = key.words
        blocks = (length + 7) // 8
        words = [mix64(k0 ^ splitmix64(k1, c)) for c in range(blocks)]
        return b"".join(w.to_bytes(8, "big") for w in words)[:length]

    def _tag(self, key: SymmetricKey, ciphertext: bytes) -> bytes:
        k0, k1 = key.words
        h = mix64(k1 ^ GOLDEN_GAMMA)
        padded = ciphertext + b"\x00" * (-len(ciphertext) % 8)
        # each step is a bijection of h, so any changed chunk changes the result
        for i in range(0, len(padded), 8):
            h = mix64(((h ^ int.from_bytes(padded[i : i + 8], "big")) + k0) & MASK64)
        h = mix64(h ^ len(ciphertext))
        return mix64((h + k1) & MASK64).to_bytes(TAG_BYTES, "big")

    def _xor(self, key: SymmetricKey, data: bytes) -> bytes:
        stream = np.frombuffer(self._keystream(key, len(data)), dtype=np.uint8)
        return (np.frombuffer(data, dtype=np.uint8) ^ stream).tobytes()

    def encrypt(self, key: SymmetricKey, plaintext: bytes) -> EncryptedBlock:
        ct = self._xor(key, plaintext)
        return EncryptedBlock(ct, self._tag(key, ct))

    def decrypt(self, key: SymmetricKey, block: EncryptedBlock) -> bytes:
        if self._tag(key, block.ciphertext) != block.tag:
            raise IntegrityError("tag mismatch")
        return self._xor(key, block.ciphertext)


DEFAULT_CIPHER: Cipher = ToyCipher()


def encrypt(key: SymmetricKey, plaintext: bytes, cipher: Cipher = DEFAULT_CIPHER) -> EncryptedBlock:
    return cipher.encrypt(key, plaintext)


def decrypt(key: SymmetricKey, block: EncryptedBlock, cipher: Cipher = DEFAULT_CIPHER) -> bytes:
    return cipher.decrypt(key, block)
