"""State vectors, unitary operators and single-qubit measurement.

Amplitude convention for the two polarizer settings::

    rectilinear   "—" (0) -> e0            "|"  (1) -> e1
    diagonal      "/" (0) -> (e0+e1)/√2    "\\" (1) -> (e0-e1)/√2

All stochastic functions take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

NORM_TOL = 1e-9
EXACT_TOL = 1e-12

RandomStream = np.random.Generator


class QuantumError(ValueError):
    """Dimension or validity problem with a state or operator."""


class Basis(enum.Enum):
    RECTILINEAR = "+"
    DIAGONAL = "x"

    @classmethod
    def parse(cls, text: str) -> "Basis":
        key = text.strip().lower()
        if key in ("+", "rectilinear", "r", "z"):
            return cls.RECTILINEAR
        if key in ("x", "×", "diagonal", "d"):
            return cls.DIAGONAL
        raise ValueError(f"unknown basis {text!r}")


# (basis, bit) <-> polarization symbol
SYMBOLS = {
    (Basis.RECTILINEAR, 0): "—",
    (Basis.RECTILINEAR, 1): "|",
    (Basis.DIAGONAL, 0): "/",
    (Basis.DIAGONAL, 1): "\\",
}
_SYMBOL_LOOKUP = {sym: key for key, sym in SYMBOLS.items()}
_SYMBOL_LOOKUP["-"] = (Basis.RECTILINEAR, 0)


def symbol_for(bit: int, basis: Basis) -> str:
    return SYMBOLS[(basis, int(bit))]


def parse_symbol(symbol: str) -> tuple[Basis, int]:
    """Return ``(basis, bit)`` for a polarization symbol such as ``"/"``."""
    try:
        return _SYMBOL_LOOKUP[symbol]
    except KeyError:
        raise ValueError(f"unknown polarization symbol {symbol!r}") from None


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class StateVector:
    """Normalized pure state of ``n_qubits`` qubits.

    Instances are immutable; the amplitude array is read-only.
    """

    __slots__ = ("_amps", "n_qubits")

    def __init__(self, amplitudes, *, check: bool = True):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        dim = amps.size
        if dim < 2 or dim & (dim - 1):
            raise QuantumError(f"state dimension {dim} is not a power of two >= 2")
        if check:
            if not np.all(np.isfinite(amps)):
                raise QuantumError("state has non-finite amplitudes")
            norm = float(np.vdot(amps, amps).real)
            if abs(norm - 1.0) > NORM_TOL:
                raise QuantumError(f"state is not normalized (norm² = {norm!r})")
        self._amps = _frozen(amps)
        self.n_qubits = dim.bit_length() - 1

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    @property
    def dim(self) -> int:
        return self._amps.size

    @classmethod
    def basis_state(cls, index: int, n_qubits: int = 1) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(amps, check=False)

    @classmethod
    def normalized(cls, amplitudes) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise QuantumError("cannot normalize the zero vector")
        return cls(amps / norm)

    @classmethod
    def random(cls, rng: RandomStream, n_qubits: int = 1) -> "StateVector":
        dim = 2**n_qubits
        return cls.normalized(rng.normal(size=dim) + 1j * rng.normal(size=dim))

    def kron(self, other: "StateVector") -> "StateVector":
        return StateVector(np.kron(self._amps, other._amps), check=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self._amps, other._amps))

    def __hash__(self) -> int:
        return hash(self._amps.tobytes())

    def isclose(self, other: "StateVector", tol: float = NORM_TOL) -> bool:
        return self.dim == other.dim and float(np.max(np.abs(self._amps - other._amps))) < tol

    def __repr__(self) -> str:
        return f"StateVector({np.array2string(self._amps, precision=4)})"


E0 = StateVector.basis_state(0)
E1 = StateVector.basis_state(1)
_DIAG0 = StateVector(np.array([1, 1], dtype=complex) / np.sqrt(2))
_DIAG1 = StateVector(np.array([1, -1], dtype=complex) / np.sqrt(2))
_PREPARED = {
    (Basis.RECTILINEAR, 0): E0,
    (Basis.RECTILINEAR, 1): E1,
    (Basis.DIAGONAL, 0): _DIAG0,
    (Basis.DIAGONAL, 1): _DIAG1,
}


def make_state(bit: int, basis: Basis) -> StateVector:
    """Single-photon polarization state for ``bit`` prepared in ``basis``."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return _PREPARED[(basis, int(bit))]


class Operator:
    """Unitary operator on ``n_qubits`` qubits; validated on construction."""

    __slots__ = ("_m", "n_qubits")

    def __init__(self, matrix, *, check: bool = True):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise QuantumError(f"operator must be square, got shape {m.shape}")
        dim = m.shape[0]
        if dim < 2 or dim & (dim - 1):
            raise QuantumError(f"operator dimension {dim} is not a power of two >= 2")
        if check:
            if not np.all(np.isfinite(m)):
                raise QuantumError("operator has non-finite entries")
            err = unitarity_error(m)
            if err >= NORM_TOL:
                raise QuantumError(f"operator is not unitary (‖U†U − I‖ = {err:.3g})")
        self._m = _frozen(m)
        self.n_qubits = dim.bit_length() - 1

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def __matmul__(self, other: "Operator") -> "Operator":
        _same_dim(self.dim, other.dim)
        return Operator(self._m @ other._m, check=False)

    def __neg__(self) -> "Operator":
        return Operator(-self._m, check=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Operator):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self._m, other._m))

    def __hash__(self) -> int:
        return hash(self._m.tobytes())

    def isclose(self, other: "Operator", tol: float = EXACT_TOL) -> bool:
        return self.dim == other.dim and max_abs_diff(self._m, other._m) < tol

    def __repr__(self) -> str:
        return f"Operator(n_qubits={self.n_qubits})"


def unitarity_error(m: np.ndarray) -> float:
    return max_abs_diff(m.conj().T @ m, np.eye(m.shape[0]))


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


def _same_dim(a: int, b: int) -> None:
    if a != b:
        raise QuantumError(f"dimension mismatch: {a} vs {b}")


def identity(n_qubits: int = 1) -> Operator:
    return Operator(np.eye(2**n_qubits), check=False)


def rotation(theta: float) -> Operator:
    """Real 2×2 rotation by ``theta`` radians."""
    if not np.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    c, s = np.cos(theta), np.sin(theta)
    return Operator(np.array([[c, -s], [s, c]]), check=False)


_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(which: str) -> Operator:
    try:
        return Operator(_PAULI[which.upper()], check=False)
    except KeyError:
        raise ValueError(f"unknown Pauli {which!r}; expected X, Y or Z") from None


def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product ``a ⊗ b``."""
    return Operator(np.kron(a.matrix, b.matrix), check=False)


def tensor_all(factors: Sequence[Operator]) -> Operator:
    if not factors:
        raise ValueError("need at least one factor")
    out = factors[0]
    for f in factors[1:]:
        out = tensor(out, f)
    return out


def dagger(u: Operator) -> Operator:
    return Operator(u.matrix.conj().T, check=False)


def apply(u: Operator, s: StateVector) -> StateVector:
    _same_dim(u.dim, s.dim)
    return StateVector(u.matrix @ s.amplitudes, check=False)


def inner_product(a: StateVector, b: StateVector) -> complex:
    """⟨a|b⟩, conjugate-linear in ``a``."""
    _same_dim(a.dim, b.dim)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: StateVector, b: StateVector) -> float:
    return abs(inner_product(a, b)) ** 2


def commutes(a: Operator, b: Operator, tol: float = EXACT_TOL) -> bool:
    _same_dim(a.dim, b.dim)
    return max_abs_diff(a.matrix @ b.matrix, b.matrix @ a.matrix) < tol


def commutes_up_to_phase(
    a: Operator, b: Operator, tol: float = NORM_TOL
) -> tuple[bool, complex | None]:
    """Check ``ab = λ·ba`` for some unit-modulus λ.

    Returns ``(True, λ)`` on success and ``(False, None)`` otherwise.
    """
    _same_dim(a.dim, b.dim)
    ab = a.matrix @ b.matrix
    ba = b.matrix @ a.matrix
    # ba is unitary, so it has an entry of modulus >= 1/sqrt(dim); use the largest
    idx = np.unravel_index(np.argmax(np.abs(ba)), ba.shape)
    lam = ab[idx] / ba[idx]
    if abs(abs(lam) - 1.0) >= tol:
        return False, None
    if max_abs_diff(ab, lam * ba) >= tol:
        return False, None
    # snap to an exact value when the phase is numerically ±1 or ±i
    for exact in (1, -1, 1j, -1j):
        if abs(lam - exact) < tol:
            lam = exact
            break
    return True, complex(lam)


def outcome_one_probability(amps: np.ndarray, basis: Basis) -> np.ndarray | float:
    """Born probability of reading bit 1 from 1-qubit amplitudes.

    ``amps`` is either shape ``(2,)`` or a stack of shape ``(n, 2)``.
    """
    a0 = amps[..., 0]
    a1 = amps[..., 1]
    if basis is Basis.RECTILINEAR:
        p = np.abs(a1) ** 2
    else:
        p = np.abs(a0 - a1) ** 2 / 2.0
    return np.clip(p, 0.0, 1.0)


def measure(s: StateVector, basis: Basis, rng: RandomStream) -> tuple[int, StateVector]:
    """Projective measurement of a single qubit; returns the bit and collapsed state."""
    if s.n_qubits != 1:
        raise QuantumError(f"measure expects a 1-qubit state, got {s.n_qubits} qubits")
    p1 = float(outcome_one_probability(s.amplitudes, basis))
    bit = int(rng.random() < p1)
    return bit, make_state(bit, basis)


def measure_many(
    states: Sequence[StateVector], basis: Basis | Sequence[Basis], rng: RandomStream
) -> np.ndarray:
    """Measure a batch of 1-qubit states, one uniform draw per state, in order.

    Same Born rule as :func:`measure`; returns the outcome bits as ``uint8``.
    """
    if not states:
        return np.zeros(0, dtype=np.uint8)
    if any(s.n_qubits != 1 for s in states):
        raise QuantumError("measure_many expects 1-qubit states")
    amps = np.stack([s.amplitudes for s in states])
    if isinstance(basis, Basis):
        p1 = outcome_one_probability(amps, basis)
    else:
        diag = np.array([b is Basis.DIAGONAL for b in basis])
        if diag.size != len(states):
            raise QuantumError("one basis per state required")
        p1 = np.where(
            diag,
            outcome_one_probability(amps, Basis.DIAGONAL),
            outcome_one_probability(amps, Basis.RECTILINEAR),
        )
    return (rng.random(len(states)) < p1).astype(np.uint8)
