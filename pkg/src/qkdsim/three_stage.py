"""Kak's three-stage protocol and the man-in-the-middle attack against it.

Alice locks the message with a secret unitary ``u_a``, Bob adds his own lock
``u_b``, Alice removes hers with ``u_a†`` and Bob finally removes his. This
only works when the two locks commute, which is guaranteed here by drawing
both secrets as per-qubit rotations.

Secrets are applied per transmitted unit (usually one qubit) through
:class:`ProductOperator`, never as one 2ⁿ×2ⁿ matrix; ``ProductOperator.full``
builds the monolithic tensor product for cross-checks on small registers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple, Sequence, Union

import numpy as np

from . import quantum as q
from .quantum import Operator, RandomStream, StateVector


@dataclass(frozen=True)
class ProductOperator:
    """Tensor product of per-unit operators, kept factored."""

    factors: tuple[Operator, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("a product operator needs at least one factor")

    @property
    def n_qubits(self) -> int:
        return sum(f.n_qubits for f in self.factors)

    def full(self) -> Operator:
        return q.tensor_all(self.factors)

    def dagger(self) -> "ProductOperator":
        return ProductOperator(tuple(q.dagger(f) for f in self.factors))


Secret = Union[Operator, ProductOperator]


def dagger(u: Secret) -> Secret:
    return u.dagger() if isinstance(u, ProductOperator) else q.dagger(u)


def _unit_factors(u: Secret, payload: Sequence[StateVector]) -> tuple[Operator, ...]:
    if isinstance(u, ProductOperator):
        if len(u.factors) != len(payload):
            raise q.QuantumError(
                f"operator has {len(u.factors)} factors but payload has {len(payload)} units"
            )
        factors = u.factors
    else:
        factors = (u,) * len(payload)
    for f, s in zip(factors, payload):
        if f.dim != s.dim:
            raise q.QuantumError(f"dimension mismatch: operator {f.dim} vs unit {s.dim}")
    return factors


def apply_secret(u: Secret, payload: Sequence[StateVector]) -> list[StateVector]:
    """Apply ``u`` to every unit of ``payload`` (factor i acts on unit i)."""
    return [q.apply(f, s) for f, s in zip(_unit_factors(u, payload), payload)]


def secrets_commute_up_to_phase(a: Secret, b: Secret, n_units: int) -> tuple[bool, complex | None]:
    """Factor-wise phase commutation; the overall phase is the product of factor phases."""
    fa = a.factors if isinstance(a, ProductOperator) else (a,) * n_units
    fb = b.factors if isinstance(b, ProductOperator) else (b,) * n_units
    if len(fa) != len(fb):
        raise q.QuantumError("secrets have different factor counts")
    phase = 1 + 0j
    for x, y in zip(fa, fb):
        ok, lam = q.commutes_up_to_phase(x, y)
        if not ok:
            return False, None
        phase *= lam
    return True, phase


def pick_commuting_operator(n_qubits: int, rng: RandomStream) -> ProductOperator:
    """Per-qubit rotations R(θ) with θ uniform in [0, 2π)."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    thetas = rng.uniform(0.0, 2 * np.pi, n_qubits)
    return ProductOperator(tuple(q.rotation(float(t)) for t in thetas))


@dataclass(frozen=True)
class ThreeStageSession:
    u_a: Secret
    u_b: Secret
    payload: tuple[StateVector, ...]

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(self.payload))
        _unit_factors(self.u_a, self.payload)
        _unit_factors(self.u_b, self.payload)
        ok, _ = secrets_commute_up_to_phase(self.u_a, self.u_b, len(self.payload))
        if not ok:
            raise q.QuantumError("u_a and u_b do not commute, even up to phase")

    @property
    def n_qubits(self) -> int:
        return sum(s.n_qubits for s in self.payload)


@dataclass(frozen=True)
class PassRecord:
    pass_index: int
    in_flight_states: tuple[StateVector, ...]
    sender: str
    receiver: str


class HonestResult(NamedTuple):
    recovered: list[StateVector]
    passes: list[PassRecord]


def run_honest(session: ThreeStageSession, alice: str = "alice", bob: str = "bob") -> HonestResult:
    x = session.payload
    pass1 = apply_secret(session.u_a, x)
    pass2 = apply_secret(session.u_b, pass1)
    pass3 = apply_secret(dagger(session.u_a), pass2)
    recovered = apply_secret(dagger(session.u_b), pass3)
    passes = [
        PassRecord(1, tuple(pass1), alice, bob),
        PassRecord(2, tuple(pass2), bob, alice),
        PassRecord(3, tuple(pass3), alice, bob),
    ]
    return HonestResult(recovered, passes)


class MultiphotonResult(NamedTuple):
    recovered: list[StateVector]
    recovered_copies: list[list[StateVector]]
    passes: list[PassRecord]


def run_honest_multiphoton(session: ThreeStageSession, photon_count: int) -> MultiphotonResult:
    """Run the protocol with every unit carried by ``photon_count`` identical photons.

    Pass records list the copies unit-major: unit 0's copies first, then unit 1's.
    A copy peeled off any pass is in a locked state, never the bare message.
    """
    if photon_count < 1:
        raise ValueError("photon_count must be >= 1")
    k = photon_count
    copies = [list(session.payload) for _ in range(k)]
    stages = [
        (session.u_a, "alice", "bob"),
        (session.u_b, "bob", "alice"),
        (dagger(session.u_a), "alice", "bob"),
    ]
    passes = []
    for index, (u, sender, receiver) in enumerate(stages, start=1):
        copies = [apply_secret(u, c) for c in copies]
        flat = tuple(copies[j][i] for i in range(len(session.payload)) for j in range(k))
        passes.append(PassRecord(index, flat, sender, receiver))
    final = [apply_secret(dagger(session.u_b), c) for c in copies]
    return MultiphotonResult(final[0], final, passes)


@dataclass(frozen=True)
class MitmConfig:
    u_c: Secret
    u_d: Secret
    fake_payload: tuple[StateVector, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "fake_payload", tuple(self.fake_payload))


class MitmResult(NamedTuple):
    eve_recovered: list[StateVector]
    bob_received: list[StateVector]
    detected_at_quantum_layer: bool
    alice_side: list[PassRecord]
    bob_side: list[PassRecord]


def run_mitm(session: ThreeStageSession, mitm: MitmConfig) -> MitmResult:
    """Eve plays Bob toward Alice (secret ``u_c``) and Alice toward Bob (``u_d``).

    Both legs are ordinary three-stage runs, so neither endpoint sees anything
    unusual at the quantum layer.
    """
    y = mitm.fake_payload or session.payload
    with_alice = ThreeStageSession(session.u_a, mitm.u_c, session.payload)
    with_bob = ThreeStageSession(mitm.u_d, session.u_b, y)
    eve_x, alice_side = run_honest(with_alice, alice="alice", bob="eve")
    bob_y, bob_side = run_honest(with_bob, alice="eve", bob="bob")
    return MitmResult(eve_x, bob_y, False, alice_side, bob_side)


def monolithic(states: Sequence[StateVector]) -> StateVector:
    """Joint register state of a sequence of units (for small cross-checks)."""
    return reduce(lambda a, b: a.kron(b), states)
