"""Dense density-matrix kernel.

Registers are small (the networks handled here never exceed a dozen qubits),
so every operator is kept as a dense ``complex128`` array.  Basis states are
indexed big-endian: the first qubit of ``qubits`` is the most significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
EIGEN_TOL = 1e-9
KRAUS_TOL = 1e-9
UNITARY_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S_GATE = np.array([[1, 0], [0, 1j]], dtype=complex)


class StateError(ValueError):
    """Raised when a state, channel or gate violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _check_qubits(qubits: Sequence[int], n: int) -> tuple[int, ...]:
    qubits = tuple(int(q) for q in qubits)
    if len(qubits) != n:
        raise StateError(f"expected {n} qubit ids, got {len(qubits)}")
    if len(set(qubits)) != n:
        raise StateError(f"duplicate qubit ids in {qubits}")
    return qubits


def _n_qubits(dim: int) -> int:
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 0 or 2**n != dim:
        raise StateError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    qubits: tuple[int, ...] = ()

    def __post_init__(self):
        amp = _frozen(np.ravel(self.amplitudes))
        n = _n_qubits(amp.size)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "qubits", _check_qubits(self.qubits or range(n), n))
        if abs(np.linalg.norm(amp) - 1.0) > 1e-10:
            raise StateError("state vector is not normalized")

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density_matrix(self, qubits: Sequence[int] | None = None) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), qubits or self.qubits)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite operator on ``qubits``.

    ``check=False`` skips the eigenvalue test; it is meant for internal hot
    paths that only ever produce states from valid states.
    """

    data: np.ndarray
    qubits: tuple[int, ...] = ()
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        rho = _frozen(self.data)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise StateError(f"density matrix must be square, got shape {rho.shape}")
        n = _n_qubits(rho.shape[0])
        object.__setattr__(self, "data", rho)
        object.__setattr__(self, "qubits", _check_qubits(self.qubits or range(n), n))
        if self.check:
            validate_density(rho)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    def relabel(self, qubits: Sequence[int]) -> "DensityMatrix":
        return DensityMatrix(self.data, qubits, check=False)


def validate_density(rho: np.ndarray) -> None:
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise StateError("matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > TRACE_TOL:
        raise StateError(f"trace is {np.trace(rho).real!r}, not 1")
    if np.linalg.eigvalsh(rho).min() < -EIGEN_TOL:
        raise StateError("matrix has negative eigenvalues")


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    label: str = ""

    def __post_init__(self):
        ops = tuple(_frozen(k) for k in self.operators)
        if not ops:
            raise StateError("a channel needs at least one Kraus operator")
        dim = ops[0].shape[0]
        _n_qubits(dim)
        if any(k.shape != (dim, dim) for k in ops):
            raise StateError("Kraus operators must share one square shape")
        completeness = sum(k.conj().T @ k for k in ops)
        if np.max(np.abs(completeness - np.eye(dim))) > KRAUS_TOL:
            raise StateError("Kraus operators are not trace preserving")
        object.__setattr__(self, "operators", ops)

    @property
    def arity(self) -> int:
        return _n_qubits(self.operators[0].shape[0])


@dataclass(frozen=True)
class UnitaryGate:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        u = _frozen(self.matrix)
        _n_qubits(u.shape[0])
        if np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > UNITARY_TOL:
            raise StateError(f"gate {self.label!r} is not unitary")
        object.__setattr__(self, "matrix", u)

    @property
    def arity(self) -> int:
        return _n_qubits(self.matrix.shape[0])


# --------------------------------------------------------------------------
# Source states
# --------------------------------------------------------------------------

SOURCE_KINDS = ("ghz", "epr", "w", "gepr")


def make_source_state(kind: str, n_qubits: int | None = None, angle: float | None = None) -> PureState:
    """Pure state emitted by an entanglement source.

    ``kind`` is one of ``ghz`` (needs ``n_qubits >= 2``), ``epr``, ``w``
    (three qubits unless ``n_qubits`` says otherwise) or ``gepr``, the
    generalized EPR state ``cos(angle)|00> + sin(angle)|11>``.
    """
    kind = kind.lower()
    if kind == "epr":
        kind, n_qubits = "ghz", 2 if n_qubits is None else n_qubits
        if n_qubits != 2:
            raise StateError("an EPR source has exactly two qubits")
    if kind == "ghz":
        if n_qubits is None or n_qubits < 2:
            raise StateError(f"GHZ source needs at least 2 qubits, got {n_qubits}")
        amp = np.zeros(2**n_qubits, dtype=complex)
        amp[0] = amp[-1] = 1 / np.sqrt(2)
        return PureState(amp)
    if kind == "w":
        n = 3 if n_qubits is None else n_qubits
        if n < 2:
            raise StateError("W source needs at least 2 qubits")
        amp = np.zeros(2**n, dtype=complex)
        amp[[1 << k for k in range(n)]] = 1 / np.sqrt(n)
        return PureState(amp)
    if kind == "gepr":
        if angle is None or not 0 <= angle < np.pi / 2:
            raise StateError(f"generalized EPR angle must lie in [0, pi/2), got {angle}")
        if n_qubits not in (None, 2):
            raise StateError("a generalized EPR source has exactly two qubits")
        amp = np.array([np.cos(angle), 0, 0, np.sin(angle)], dtype=complex)
        return PureState(amp)
    raise StateError(f"unknown source kind {kind!r}")


# --------------------------------------------------------------------------
# Register manipulation
# --------------------------------------------------------------------------

def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    overlap = set(a.qubits) & set(b.qubits)
    if overlap:
        raise StateError(f"overlapping qubit ids {sorted(overlap)}")
    return DensityMatrix(np.kron(a.data, b.data), a.qubits + b.qubits, check=False)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduce ``rho`` to the qubits in ``keep``, preserving their register order."""
    keep_set = set(keep)
    if not keep_set:
        raise StateError("cannot trace out every qubit")
    unknown = keep_set - set(rho.qubits)
    if unknown:
        raise StateError(f"unknown qubit ids {sorted(unknown)}")
    kept = [k for k, q in enumerate(rho.qubits) if q in keep_set]
    order = tuple(rho.qubits[k] for k in kept)
    if len(kept) == rho.n_qubits:
        return rho
    return DensityMatrix(_reduce(rho.data, rho.n_qubits, kept), order, check=False)


def _reduce(data: np.ndarray, n: int, kept: Sequence[int]) -> np.ndarray:
    t = data.reshape((2,) * (2 * n))
    kept_set = set(kept)
    ket = list(range(n))
    bra = [n + k if k in kept_set else k for k in range(n)]
    out = [k for k in kept] + [n + k for k in kept]
    r = np.einsum(t, ket + bra, out)
    d = 2 ** len(kept)
    return r.reshape(d, d)


def reorder(rho: DensityMatrix, qubits: Sequence[int]) -> DensityMatrix:
    """Permute the register of ``rho`` so that it follows ``qubits``."""
    qubits = tuple(qubits)
    if sorted(qubits) != sorted(rho.qubits):
        raise StateError("reorder needs a permutation of the register")
    if qubits == rho.qubits:
        return rho
    n = rho.n_qubits
    perm = [rho.qubits.index(q) for q in qubits]
    t = rho.data.reshape((2,) * (2 * n)).transpose(perm + [n + p for p in perm])
    return DensityMatrix(t.reshape(rho.dim, rho.dim), qubits, check=False)


def apply_local(data: np.ndarray, n: int, op: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    """Return ``op @ rho @ op^dagger`` with ``op`` acting on register slots ``positions``."""
    k = len(positions)
    t = data.reshape((2,) * (2 * n))
    o = op.reshape((2,) * (2 * k))
    ket_in = list(range(n))
    bra_in = list(range(n, 2 * n))
    fresh = list(range(2 * n, 2 * n + k))
    ket_out = list(ket_in)
    for f, p in zip(fresh, positions):
        ket_out[p] = f
    t = np.einsum(o, fresh + [ket_in[p] for p in positions], t, ket_in + bra_in, ket_out + bra_in)
    fresh_b = list(range(2 * n, 2 * n + k))
    bra_out = list(bra_in)
    for f, p in zip(fresh_b, positions):
        bra_out[p] = f
    t = np.einsum(o.conj(), fresh_b + [bra_in[p] for p in positions], t, ket_in + bra_in, ket_in + bra_out)
    return t.reshape(2**n, 2**n)


def _positions(rho: DensityMatrix, targets: Sequence[int]) -> list[int]:
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise StateError("duplicate target qubits")
    try:
        return [rho.qubits.index(q) for q in targets]
    except ValueError:
        raise StateError(f"targets {targets} not all in register {rho.qubits}") from None


def apply_unitary(rho: DensityMatrix, gate: UnitaryGate | np.ndarray, targets: Sequence[int]) -> DensityMatrix:
    u = gate.matrix if isinstance(gate, UnitaryGate) else np.asarray(gate, dtype=complex)
    pos = _positions(rho, targets)
    if u.shape[0] != 2 ** len(pos):
        raise StateError("gate arity does not match the number of targets")
    return DensityMatrix(apply_local(rho.data, rho.n_qubits, u, pos), rho.qubits, check=False)


def apply_channel(rho: DensityMatrix, ch: KrausChannel, targets: Sequence[int]) -> DensityMatrix:
    pos = _positions(rho, targets)
    if ch.arity != len(pos):
        raise StateError(f"channel acts on {ch.arity} qubits but {len(pos)} targets were given")
    out = sum(apply_local(rho.data, rho.n_qubits, k, pos) for k in ch.operators)
    return DensityMatrix(out, rho.qubits, check=False)


# --------------------------------------------------------------------------
# Channels
# --------------------------------------------------------------------------

def phase_damping(gamma: float) -> KrausChannel:
    if not 0 <= gamma <= 1:
        raise StateError(f"phase damping parameter must lie in [0, 1], got {gamma}")
    if gamma == 0:
        return KrausChannel((I2,), "phase_damping(0)")
    k0 = np.diag([1, np.sqrt(1 - gamma)])
    k1 = np.diag([0, np.sqrt(gamma)])
    return KrausChannel((k0, k1), f"phase_damping({gamma})")


def depolarizing(gamma: float) -> KrausChannel:
    if not 0 <= gamma <= 0.75:
        raise StateError(f"depolarizing probability must lie in [0, 3/4], got {gamma}")
    w = np.sqrt(gamma / 3)
    return KrausChannel((np.sqrt(1 - gamma) * I2, w * X, w * Y, w * Z), f"depolarizing({gamma})")


def white_noise_mix(rho: DensityMatrix, p: float) -> DensityMatrix:
    """``p * rho + (1 - p) * I / d``."""
    if not 0 <= p <= 1:
        raise StateError(f"mixing weight must lie in [0, 1], got {p}")
    return DensityMatrix(p * rho.data + (1 - p) * np.eye(rho.dim) / rho.dim, rho.qubits, check=False)


def standard_channel(name: str, param: float) -> KrausChannel:
    try:
        factory = {"phase_damping": phase_damping, "depolarizing": depolarizing}[name]
    except KeyError:
        raise StateError(f"unknown channel {name!r}") from None
    return factory(param)


# --------------------------------------------------------------------------
# Measurement rotations
# --------------------------------------------------------------------------

def rz(t: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * t), 0], [0, np.exp(0.5j * t)]])


def ry(t: float) -> np.ndarray:
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def euler_zyz(theta) -> np.ndarray:
    t1, t2, t3 = theta
    return rz(t3) @ ry(t2) @ rz(t1)


def measurement_unitary(theta) -> UnitaryGate:
    """``U(theta) = Rz(theta_3) Ry(theta_2) Rz(theta_1)``.

    The Z-type projectors of a qubit are ``U^dag |x><x| U`` and the X-type
    projectors are ``U^dag H |z><z| H U``.
    """
    return UnitaryGate(euler_zyz(theta), "U(theta)")


def basis_vectors(theta, basis: str) -> np.ndarray:
    """Columns are the measurement eigenvectors for outcomes 0 and 1."""
    u = euler_zyz(theta)
    v = u if basis == "Z" else HADAMARD @ u
    return v.conj().T


def random_density(n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    d = 2**n_qubits
    g = rng.normal(size=(d, rank or d)) + 1j * rng.normal(size=(d, rank or d))
    rho = g @ g.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def random_unitary(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))
