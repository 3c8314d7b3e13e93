"""Conversion between classical bits and computational-basis qubits."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..quantum import E0, E1, Basis, RandomStream, StateVector, measure_many


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size % 8:
        raise ValueError(f"bit count {arr.size} is not a multiple of 8")
    return np.packbits(arr).tobytes()


def parse_bits(text: str) -> list[int]:
    if any(c not in "01" for c in text):
        raise ValueError(f"not a bit string: {text!r}")
    return [int(c) for c in text]


def format_bits(bits: Sequence[int]) -> str:
    return "".join(str(int(b)) for b in bits)


def q_encode(bits: Sequence[int], redundancy: int = 1) -> list[StateVector]:
    """Each bit becomes ``redundancy`` copies of e0 or e1."""
    if redundancy < 1:
        raise ValueError("redundancy must be >= 1")
    out = []
    for b in bits:
        if b not in (0, 1):
            raise ValueError(f"not a bit: {b!r}")
        out.extend([E1 if b else E0] * redundancy)
    return out


def q_decode_detailed(
    states: Sequence[StateVector], redundancy: int, rng: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Measure rectilinearly and majority-vote each redundancy group.

    Returns ``(bits, ties)``; a tied group (even redundancy only) decodes to 0
    and is flagged in ``ties``.
    """
    if redundancy < 1:
        raise ValueError("redundancy must be >= 1")
    if len(states) % redundancy:
        raise ValueError(f"{len(states)} states do not split into groups of {redundancy}")
    raw = measure_many(states, Basis.RECTILINEAR, rng)
    groups = raw.reshape(-1, redundancy).astype(np.int64)
    ones = groups.sum(axis=1)
    bits = (2 * ones > redundancy).astype(np.uint8)
    ties = 2 * ones == redundancy
    return bits, ties


def q_decode(states: Sequence[StateVector], redundancy: int, rng: RandomStream) -> np.ndarray:
    return q_decode_detailed(states, redundancy, rng)[0]
