"""Born-rule probabilities, seeded finite-shot sampling and marginals.

Randomness
----------
Every stochastic routine takes either an integer seed or a
``numpy.random.Generator``.  Integer seeds are expanded with
:func:`make_rng`, which feeds ``SeedSequence(seed, spawn_key=keys)`` into a
Philox counter-based bit generator.  Sub-streams are addressed by key tuples,
e.g. ``(entry_index, trial_index)`` in the optimizer, so parallel trials never
share random numbers and never depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .qstate import HADAMARD, DensityMatrix, StateError, euler_zyz, partial_trace, reorder

BASES = ("Z", "X")


def make_rng(seed, *keys: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("sub-stream keys need an integer master seed")
        return seed
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class QubitSetting:
    theta: tuple[float, float, float] = (0.0, 0.0, 0.0)
    basis: str = "Z"

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"basis must be 'Z' or 'X', got {self.basis!r}")
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))


@dataclass(frozen=True)
class MeasurementFrame:
    """One measurement setting per qubit id."""

    settings: Mapping[int, QubitSetting]

    @classmethod
    def uniform(cls, qubits: Sequence[int], basis: str = "Z", thetas=None) -> "MeasurementFrame":
        if thetas is None:
            thetas = np.zeros((len(qubits), 3))
        return cls({q: QubitSetting(tuple(t), basis) for q, t in zip(qubits, np.asarray(thetas).reshape(-1, 3))})

    @classmethod
    def from_arrays(cls, qubits: Sequence[int], thetas, bases: Sequence[str]) -> "MeasurementFrame":
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 3)
        return cls({q: QubitSetting(tuple(t), b) for q, t, b in zip(qubits, thetas, bases)})

    def with_basis(self, basis: str) -> "MeasurementFrame":
        return MeasurementFrame({q: QubitSetting(s.theta, basis) for q, s in self.settings.items()})

    def arrays(self, qubits: Sequence[int]) -> tuple[np.ndarray, list[str]]:
        try:
            s = [self.settings[q] for q in qubits]
        except KeyError as e:
            raise ValueError(f"frame has no setting for qubit {e.args[0]}") from None
        return np.array([x.theta for x in s]), [x.basis for x in s]


@dataclass(frozen=True)
class OutcomeDistribution:
    """Probabilities over bitstrings of ``subset`` (first qubit = most significant bit)."""

    subset: tuple[int, ...]
    probs: np.ndarray
    shots: int | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        subset = tuple(int(q) for q in self.subset)
        if p.shape != (2 ** len(subset),):
            raise ValueError(f"expected {2 ** len(subset)} probabilities, got shape {p.shape}")
        if p.min() < -1e-9 or abs(p.sum() - 1) > 1e-9:
            raise ValueError("not a probability distribution")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "subset", subset)

    def as_dict(self) -> dict[str, float]:
        n = len(self.subset)
        return {format(k, f"0{n}b"): float(v) for k, v in enumerate(self.probs)}


# --------------------------------------------------------------------------
# Born rule
# --------------------------------------------------------------------------

def basis_rotation(thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
    """Kronecker product of the per-qubit rotations that map the frame onto the computational basis."""
    v = np.ones((1, 1), dtype=complex)
    for t, b in zip(thetas, bases):
        u = euler_zyz(t)
        v = np.kron(v, u if b == "Z" else HADAMARD @ u)
    return v


def frame_probabilities(rho: np.ndarray, thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
    """Outcome probabilities of a reduced state ``rho`` already ordered like ``thetas``."""
    v = basis_rotation(thetas, bases)
    p = np.einsum("ij,jk,ik->i", v, rho, v.conj()).real
    return np.clip(p, 0.0, None)


def born_probabilities(rho: DensityMatrix, frame: MeasurementFrame, subset: Sequence[int]) -> OutcomeDistribution:
    subset = tuple(subset)
    unknown = set(subset) - set(rho.qubits)
    if unknown:
        raise StateError(f"unknown qubit ids {sorted(unknown)}")
    reduced = reorder(partial_trace(rho, subset), subset)
    thetas, bases = frame.arrays(subset)
    p = frame_probabilities(reduced.data, thetas, bases)
    return OutcomeDistribution(subset, p / p.sum())


# --------------------------------------------------------------------------
# Sampling and marginals
# --------------------------------------------------------------------------

def sample_probs(p: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    if shots < 1:
        raise ValueError("shots must be a positive integer")
    p = np.clip(p, 0.0, None)
    counts = rng.multinomial(shots, p / p.sum())
    return counts / shots


def sample_counts(dist: OutcomeDistribution, shots: int, seed) -> OutcomeDistribution:
    rng = make_rng(seed)
    return OutcomeDistribution(dist.subset, sample_probs(dist.probs, shots, rng), shots=shots)


def marginal_probs(p: np.ndarray, n: int, keep: Sequence[int]) -> np.ndarray:
    """Sum out every bit position not listed in ``keep`` (positions, in output order)."""
    keep = list(keep)
    drop = tuple(k for k in range(n) if k not in keep)
    t = p.reshape((2,) * n).sum(axis=drop) if drop else p.reshape((2,) * n)
    remaining = sorted(keep)
    return t.transpose([remaining.index(k) for k in keep]).reshape(-1)


def marginalize(dist: OutcomeDistribution, keep: Sequence[int]) -> OutcomeDistribution:
    keep = tuple(keep)
    if not keep:
        raise ValueError("cannot marginalize onto an empty set")
    missing = set(keep) - set(dist.subset)
    if missing:
        raise ValueError(f"qubits {sorted(missing)} are not in the distribution")
    pos = [dist.subset.index(q) for q in keep]
    return OutcomeDistribution(keep, marginal_probs(dist.probs, len(dist.subset), pos), shots=dist.shots)
