"""BB84 over a weak-pulse source, with intercept-resend and beam-splitting attacks.

The protocol runs as three steps: Alice prepares pulses with random polarizers,
Bob measures with random polarizers, and both keep only the detected,
basis-matched positions. A random sample of the sifted key is then compared
to estimate the quantum bit error rate (QBER).

Pulses are held column-wise in a :class:`PulseTrain` so 10⁵-pulse runs stay
vectorized; indexing a train yields individual :class:`Pulse` values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .quantum import (
    Basis,
    RandomStream,
    StateVector,
    make_state,
    outcome_one_probability,
    symbol_for,
)

DEFAULT_ABORT_THRESHOLD = 0.11

# row index = 2 * basis_code + bit; basis_code 0 rectilinear, 1 diagonal
_PREPARED_AMPS = np.stack(
    [make_state(bit, basis).amplitudes for basis in (Basis.RECTILINEAR, Basis.DIAGONAL) for bit in (0, 1)]
)
_BASIS_OF_CODE = (Basis.RECTILINEAR, Basis.DIAGONAL)
_SYMBOL_TABLE = np.array([symbol_for(bit, basis) for basis in _BASIS_OF_CODE for bit in (0, 1)])


def basis_codes(bases: Sequence[Basis]) -> np.ndarray:
    return np.array([b is Basis.DIAGONAL for b in bases], dtype=np.uint8)


def bases_from_codes(codes: np.ndarray) -> list[Basis]:
    return [_BASIS_OF_CODE[c] for c in codes]


class Adversary(str, enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept_resend"
    BEAM_SPLITTING = "beam_splitting"


@dataclass(frozen=True)
class Pulse:
    """One emitted pulse; every photon in it shares the prepared state."""

    photon_count: int
    origin_bit: int
    origin_basis: Basis

    @property
    def state(self) -> StateVector:
        return make_state(self.origin_bit, self.origin_basis)

    @property
    def symbol(self) -> str:
        return symbol_for(self.origin_bit, self.origin_basis)


@dataclass(frozen=True)
class PulseTrain:
    """Column-wise pulse storage: photon counts, prepared bits and basis codes."""

    photon_counts: np.ndarray
    bits: np.ndarray
    bases: np.ndarray

    def __post_init__(self):
        n = len(self.photon_counts)
        if len(self.bits) != n or len(self.bases) != n:
            raise ValueError("pulse train columns differ in length")

    def __len__(self) -> int:
        return len(self.photon_counts)

    def __getitem__(self, i: int) -> Pulse:
        return Pulse(int(self.photon_counts[i]), int(self.bits[i]), _BASIS_OF_CODE[self.bases[i]])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def amplitudes(self) -> np.ndarray:
        """Shared single-photon amplitudes per pulse, shape ``(n, 2)``."""
        return _PREPARED_AMPS[2 * self.bases.astype(np.intp) + self.bits]

    def symbols(self) -> str:
        return "".join(_SYMBOL_TABLE[2 * self.bases.astype(np.intp) + self.bits])


@dataclass(frozen=True)
class Bb84Config:
    n_pulses: int = 100_000
    mean_photon_number: float = 0.0
    sample_fraction: float = 0.5
    qber_abort_threshold: float = DEFAULT_ABORT_THRESHOLD
    adversary: Adversary = Adversary.NONE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adversary", Adversary(self.adversary))
        problems = self.problems()
        if problems:
            raise ValueError("invalid Bb84Config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.n_pulses, int) or self.n_pulses < 1:
            out.append(f"n_pulses must be a positive integer (got {self.n_pulses!r})")
        if not (self.mean_photon_number >= 0 and math.isfinite(self.mean_photon_number)):
            out.append(f"mean_photon_number must be >= 0 (got {self.mean_photon_number!r})")
        if not 0 < self.sample_fraction < 1:
            out.append(f"sample_fraction must lie in (0, 1) (got {self.sample_fraction!r})")
        if not 0 < self.qber_abort_threshold < 1:
            out.append(f"qber_abort_threshold must lie in (0, 1) (got {self.qber_abort_threshold!r})")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            out.append(f"seed must be a 64-bit unsigned integer (got {self.seed!r})")
        return out


def pulse_multiplicity(mu: float, rng: RandomStream) -> int:
    """Photon count of one pulse: Poisson(mu), or exactly 1 when ``mu == 0``."""
    if mu < 0:
        raise ValueError("mean photon number must be >= 0")
    if mu == 0:
        return 1
    return int(rng.poisson(mu))


def pulse_multiplicities(mu: float, n: int, rng: RandomStream) -> np.ndarray:
    if mu < 0:
        raise ValueError("mean photon number must be >= 0")
    if mu == 0:
        return np.ones(n, dtype=np.int64)
    return rng.poisson(mu, n).astype(np.int64)


def multiphoton_given_detected(mu: float) -> float:
    """P(count >= 2 | count >= 1) for Poisson(mu) photon counts."""
    if mu == 0:
        return 0.0
    p0 = math.exp(-mu)
    return (1 - p0 - mu * p0) / (1 - p0)


class Preparation(NamedTuple):
    bits: np.ndarray
    bases: np.ndarray
    pulses: PulseTrain


def alice_prepare(
    config: Bb84Config,
    rng: RandomStream,
    bits: Sequence[int] | None = None,
    bases: Sequence[Basis] | None = None,
) -> Preparation:
    """Draw random bits and polarizers and emit one pulse per bit.

    ``bits``/``bases`` force the choices (used to replay a fixed example);
    their length then overrides ``config.n_pulses``.
    """
    n = config.n_pulses
    if bits is not None:
        bits_arr = np.asarray(bits, dtype=np.uint8)
        n = len(bits_arr)
    if bases is not None:
        basis_arr = basis_codes(bases)
        n = len(basis_arr)
    if bits is None:
        bits_arr = rng.integers(0, 2, n, dtype=np.uint8)
    if bases is None:
        basis_arr = rng.integers(0, 2, n, dtype=np.uint8)
    if len(bits_arr) != len(basis_arr):
        raise ValueError("forced bits and bases differ in length")
    counts = pulse_multiplicities(config.mean_photon_number, n, rng)
    return Preparation(bits_arr, basis_arr, PulseTrain(counts, bits_arr, basis_arr))


class BobMeasurement(NamedTuple):
    bases: np.ndarray
    outcomes: np.ndarray
    detected: np.ndarray


def bob_measure(
    pulses: PulseTrain,
    rng: RandomStream,
    bases: Sequence[Basis] | None = None,
    forced_outcomes: dict[int, int] | None = None,
) -> BobMeasurement:
    """Measure each pulse with a random polarizer; vacuum pulses go undetected.

    ``forced_outcomes`` pins the outcome at given positions, but only where the
    Born probability of that outcome is non-zero.
    """
    n = len(pulses)
    basis_arr = rng.integers(0, 2, n, dtype=np.uint8) if bases is None else basis_codes(bases)
    if len(basis_arr) != n:
        raise ValueError("one basis per pulse required")
    amps = pulses.amplitudes
    p1 = np.where(
        basis_arr == 1,
        outcome_one_probability(amps, Basis.DIAGONAL),
        outcome_one_probability(amps, Basis.RECTILINEAR),
    )
    draws = rng.random(n)
    outcomes = (draws < p1).astype(np.uint8)
    detected = pulses.photon_counts >= 1
    for i, bit in (forced_outcomes or {}).items():
        prob = p1[i] if bit == 1 else 1 - p1[i]
        if prob <= 1e-12:
            raise ValueError(f"outcome {bit} at position {i} has zero probability")
        outcomes[i] = bit
    outcomes[~detected] = 0
    return BobMeasurement(basis_arr, outcomes, detected)


class SiftResult(NamedTuple):
    alice_key: np.ndarray
    bob_key: np.ndarray
    kept_positions: np.ndarray


def sift(alice_bases, bob_bases, alice_bits, bob_outcomes, detected_flags) -> SiftResult:
    """Keep positions that were detected and measured in Alice's basis."""
    arrays = [np.asarray(a) for a in (alice_bases, bob_bases, alice_bits, bob_outcomes, detected_flags)]
    if len({len(a) for a in arrays}) > 1:
        raise ValueError("sift inputs differ in length")
    a_bases, b_bases, a_bits, b_out, det = arrays
    if a_bases.dtype == object:
        a_bases = basis_codes(a_bases)
    if b_bases.dtype == object:
        b_bases = basis_codes(b_bases)
    kept = np.flatnonzero(det.astype(bool) & (a_bases == b_bases))
    return SiftResult(a_bits[kept].astype(np.uint8), b_out[kept].astype(np.uint8), kept)


class QberEstimate(NamedTuple):
    qber: float
    remaining_alice: np.ndarray
    remaining_bob: np.ndarray
    sample_positions: np.ndarray
    degenerate: bool = False


def estimate_qber(alice_key, bob_key, sample_fraction: float, rng: RandomStream) -> QberEstimate:
    """Compare and discard a random ⌈fraction·len⌉ sample of the sifted key."""
    a = np.asarray(alice_key, dtype=np.uint8)
    b = np.asarray(bob_key, dtype=np.uint8)
    if len(a) != len(b):
        raise ValueError("keys differ in length")
    if not 0 < sample_fraction < 1:
        raise ValueError("sample_fraction must lie in (0, 1)")
    n = len(a)
    if n == 0:
        empty = np.zeros(0, dtype=np.intp)
        return QberEstimate(0.0, a, b, empty, degenerate=True)
    k = math.ceil(sample_fraction * n)
    sample = np.sort(rng.choice(n, size=k, replace=False))
    qber = float(np.count_nonzero(a[sample] != b[sample])) / k
    keep = np.ones(n, dtype=bool)
    keep[sample] = False
    return QberEstimate(qber, a[keep], b[keep], sample)


class InterceptResult(NamedTuple):
    forwarded: PulseTrain
    eve_bits: np.ndarray
    eve_bases: np.ndarray


def attack_intercept_resend(pulses: PulseTrain, rng: RandomStream) -> InterceptResult:
    """Eve measures every pulse in a random basis and resends what she saw.

    Vacuum pulses give her nothing (``eve_bits`` is -1 there) and stay vacuum.
    """
    n = len(pulses)
    eve_bases = rng.integers(0, 2, n, dtype=np.uint8)
    measured = bob_measure(pulses, rng, bases=bases_from_codes(eve_bases))
    eve_bits = np.where(measured.detected, measured.outcomes, -1).astype(np.int8)
    fwd = PulseTrain(pulses.photon_counts.copy(), measured.outcomes, eve_bases)
    return InterceptResult(fwd, eve_bits, eve_bases)


class SplitResult(NamedTuple):
    forwarded: PulseTrain
    eve_stored_states: dict[int, StateVector]


def attack_beam_splitting(pulses: PulseTrain) -> SplitResult:
    """Eve keeps one photon from every multi-photon pulse; single photons pass."""
    multi = pulses.photon_counts >= 2
    counts = pulses.photon_counts - multi.astype(np.int64)
    stored = {int(i): pulses[int(i)].state for i in np.flatnonzero(multi)}
    return SplitResult(PulseTrain(counts, pulses.bits, pulses.bases), stored)


def beam_splitting_readout(
    stored: dict[int, StateVector],
    kept_positions: np.ndarray,
    announced_bases: np.ndarray,
    rng: RandomStream,
) -> dict[int, int]:
    """Eve measures her stored photons in the publicly announced basis.

    Returns a map from sifted position to the bit Eve read.
    """
    out = {}
    for pos in kept_positions:
        state = stored.get(int(pos))
        if state is None:
            continue
        basis = _BASIS_OF_CODE[announced_bases[pos]]
        p1 = float(outcome_one_probability(state.amplitudes, basis))
        out[int(pos)] = int(rng.random() < p1)
    return out


@dataclass(frozen=True)
class Bb84Report:
    sifted_length: int
    detected_pulses: int
    sift_rate: float
    qber: float
    eve_known_fraction: float
    aborted: bool
    alice_key: np.ndarray = field(repr=False)
    bob_key: np.ndarray = field(repr=False)
    qber_degenerate: bool = False
    sample_size: int = 0


@dataclass(frozen=True)
class Bb84Run:
    """Everything a run produced, kept for transcripts and inspection."""

    config: Bb84Config
    preparation: Preparation
    delivered: PulseTrain
    bob: BobMeasurement
    sifted: SiftResult
    estimate: QberEstimate
    eve_knowledge: dict[int, int]
    report: Bb84Report


def simulate_bb84(config: Bb84Config) -> Bb84Run:
    rng = np.random.default_rng(config.seed)
    prep = alice_prepare(config, rng)
    delivered = prep.pulses
    stored: dict[int, StateVector] = {}
    eve_bits = eve_bases = None
    if config.adversary is Adversary.INTERCEPT_RESEND:
        delivered, eve_bits, eve_bases = attack_intercept_resend(delivered, rng)
    elif config.adversary is Adversary.BEAM_SPLITTING:
        delivered, stored = attack_beam_splitting(delivered)

    bob = bob_measure(delivered, rng)
    sifted = sift(prep.bases, bob.bases, prep.bits, bob.outcomes, bob.detected)
    kept = sifted.kept_positions

    # bases and detected positions are announced publicly; Eve hears them
    knowledge: dict[int, int] = {}
    if config.adversary is Adversary.BEAM_SPLITTING:
        knowledge = beam_splitting_readout(stored, kept, prep.bases, rng)
    elif config.adversary is Adversary.INTERCEPT_RESEND:
        lucky = kept[eve_bases[kept] == prep.bases[kept]]
        knowledge = {int(i): int(eve_bits[i]) for i in lucky}

    est = estimate_qber(sifted.alice_key, sifted.bob_key, config.sample_fraction, rng)
    detected = int(np.count_nonzero(bob.detected))
    sifted_len = len(kept)
    report = Bb84Report(
        sifted_length=sifted_len,
        detected_pulses=detected,
        sift_rate=sifted_len / detected if detected else 0.0,
        qber=est.qber,
        eve_known_fraction=len(knowledge) / sifted_len if sifted_len else 0.0,
        aborted=est.qber > config.qber_abort_threshold,
        alice_key=est.remaining_alice,
        bob_key=est.remaining_bob,
        qber_degenerate=est.degenerate,
        sample_size=len(est.sample_positions),
    )
    return Bb84Run(config, prep, delivered, bob, sifted, est, knowledge, report)


def run_bb84(config: Bb84Config) -> Bb84Report:
    """Prepare, (attack), measure, sift and estimate QBER for one seeded run."""
    return simulate_bb84(config).report
