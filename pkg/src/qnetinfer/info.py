"""Entropic and covariance correlation measures, in bits.

Array-level helpers (``entropy_bits``, ``conditional_entropy_bits`` ...) work
on raw probability vectors indexed big-endian, and are what the optimizer
calls in its inner loop.  The state-level functions wrap them with the
measurement-frame plumbing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .correlation import CorrelationMatrix
from .measurement import MeasurementFrame, OutcomeDistribution, frame_probabilities, marginal_probs
from .qstate import DensityMatrix, StateError, partial_trace, reorder

INVALID_EIG = -1e-6


@dataclass(frozen=True)
class CorrelationValue:
    kind: str
    value: float
    frame: MeasurementFrame | None = None

    def __float__(self) -> float:
        return self.value


# --------------------------------------------------------------------------
# Shannon machinery on arrays
# --------------------------------------------------------------------------

def entropy_bits(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def conditional_entropy_bits(p: np.ndarray, n: int, given: Sequence[int]) -> float:
    """``H(all) - H(given)`` for a joint over ``n`` bits; ``given`` are bit positions."""
    if not given:
        return entropy_bits(p)
    return entropy_bits(p) - entropy_bits(marginal_probs(p, n, given))


def mutual_information_bits(p: np.ndarray, n: int, part_a: Sequence[int]) -> float:
    part_b = [k for k in range(n) if k not in part_a]
    return entropy_bits(marginal_probs(p, n, part_a)) + entropy_bits(marginal_probs(p, n, part_b)) - entropy_bits(p)


def spins(n: int, position: int) -> np.ndarray:
    """``+1`` for outcome bit 0 and ``-1`` for bit 1 at ``position`` over all ``2**n`` strings."""
    bits = (np.arange(2**n) >> (n - 1 - position)) & 1
    return 1.0 - 2.0 * bits


def covariance_from_probs(p: np.ndarray) -> float:
    a, b = spins(2, 0), spins(2, 1)
    return float(p @ (a * b) - (p @ a) * (p @ b))


def variance_from_probs(p: np.ndarray) -> float:
    return float(1.0 - (p @ spins(1, 0)) ** 2)


# --------------------------------------------------------------------------
# Distribution-level API
# --------------------------------------------------------------------------

def shannon_entropy(dist: OutcomeDistribution | np.ndarray) -> float:
    p = dist.probs if isinstance(dist, OutcomeDistribution) else dist
    return entropy_bits(p)


def conditional_entropy(joint: OutcomeDistribution, given: Sequence[int]) -> float:
    given = tuple(given)
    if set(given) >= set(joint.subset):
        raise ValueError("conditioning on every variable leaves nothing to measure")
    missing = set(given) - set(joint.subset)
    if missing:
        raise ValueError(f"qubits {sorted(missing)} are not in the distribution")
    pos = [joint.subset.index(q) for q in given]
    return conditional_entropy_bits(joint.probs, len(joint.subset), pos)


# --------------------------------------------------------------------------
# State-level measures
# --------------------------------------------------------------------------

def _frame_arrays(rho: DensityMatrix, frame: MeasurementFrame | None, order: Sequence[int]):
    if frame is None:
        frame = MeasurementFrame.uniform(order)
    thetas, _ = frame.arrays(order)
    return frame, thetas


def basis_pair_probs(rho: DensityMatrix, frame: MeasurementFrame | None, order: Sequence[int]):
    """Joint X-type and Z-type probabilities of ``rho`` over ``order`` under the frame angles."""
    order = tuple(order)
    frame, thetas = _frame_arrays(rho, frame, order)
    data = reorder(partial_trace(rho, order), order).data
    n = len(order)
    return frame_probabilities(data, thetas, ["X"] * n), frame_probabilities(data, thetas, ["Z"] * n), frame


def uncertainty(rho: DensityMatrix, target: Sequence[int], given: Sequence[int] = (), frame=None) -> float:
    """``H(X_target | X_given) + H(Z_target | Z_given)``; both bases share the frame angles."""
    order = tuple(target) + tuple(given)
    px, pz, _ = basis_pair_probs(rho, frame, order)
    pos = list(range(len(target), len(order)))
    return conditional_entropy_bits(px, len(order), pos) + conditional_entropy_bits(pz, len(order), pos)


def two_qubit_uncertainty(rho_ij: DensityMatrix, frame: MeasurementFrame | None = None, target=None, given=None) -> CorrelationValue:
    if rho_ij.n_qubits != 2:
        raise StateError("two-qubit uncertainty needs a two-qubit state")
    i = rho_ij.qubits[0] if target is None else target
    j = rho_ij.qubits[1] if given is None else given
    frame = frame or MeasurementFrame.uniform(rho_ij.qubits)
    return CorrelationValue("uncertainty2", uncertainty(rho_ij, [i], [j], frame), frame)


def one_qubit_uncertainty(rho_i: DensityMatrix, frame: MeasurementFrame | None = None) -> CorrelationValue:
    if rho_i.n_qubits != 1:
        raise StateError("one-qubit uncertainty needs a one-qubit state")
    frame = frame or MeasurementFrame.uniform(rho_i.qubits)
    return CorrelationValue("uncertainty1", uncertainty(rho_i, rho_i.qubits, (), frame), frame)


def _single_setting_probs(rho_ij: DensityMatrix, frame: MeasurementFrame | None) -> np.ndarray:
    if rho_ij.n_qubits != 2:
        raise StateError("pair measures need a two-qubit state")
    _, pz, _ = basis_pair_probs(rho_ij, frame, rho_ij.qubits)
    return pz


def mutual_information(rho_ij: DensityMatrix, frame: MeasurementFrame | None = None) -> CorrelationValue:
    """Mutual information of one local projective setting per qubit (the frame's rotated Z basis)."""
    p = _single_setting_probs(rho_ij, frame)
    return CorrelationValue("mutualinfo", mutual_information_bits(p, 2, [0]), frame)


def covariance(rho_ij: DensityMatrix, frame: MeasurementFrame | None = None) -> CorrelationValue:
    """``E(a b) - E(a) E(b)`` with outcomes encoded as +1 (bit 0) and -1 (bit 1)."""
    p = _single_setting_probs(rho_ij, frame)
    return CorrelationValue("covariance", covariance_from_probs(p), frame)


def _spectrum(rho: DensityMatrix | np.ndarray) -> np.ndarray:
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    lam = np.linalg.eigvalsh(data)
    if lam.min() < INVALID_EIG:
        raise StateError(f"eigenvalue {lam.min():.3g} is too negative for a quantum state")
    return np.clip(lam, 0.0, None)


def von_neumann_entropy(rho: DensityMatrix | np.ndarray) -> float:
    return entropy_bits(_spectrum(rho))


def renyi2_entropy(rho: DensityMatrix | np.ndarray) -> float:
    lam = _spectrum(rho)
    return float(-np.log2((lam**2).sum()))


def conditional_von_neumann(rho: DensityMatrix, given: Sequence[int]) -> float:
    """``S(rho) - S(rho_given)``."""
    return von_neumann_entropy(rho) - von_neumann_entropy(partial_trace(rho, given))


# --------------------------------------------------------------------------
# Bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EntanglementBounds:
    distill_lb: float
    key_lb: float
    steering_witness: bool


def entanglement_bounds(h_u: float | CorrelationValue) -> EntanglementBounds:
    """Distillable entanglement, secret key and steering implied by a two-qubit uncertainty.

    ``1 - H_u`` lower-bounds both the one-way distillable entanglement and the
    extractable key; ``H_u < 1`` violates the steering inequality.
    """
    h = float(h_u)
    return EntanglementBounds(1 - h, 1 - h, h < 1)


def tripartite_bound(rho_ijk: DensityMatrix, frame: MeasurementFrame | None = None) -> float:
    """Measurable lower bound on the tripartite entanglement of formation.

    ``1 - sum_k [H(X_k | X_rest) + H(Z_k | Z_rest)]`` from three-qubit
    X- and Z-statistics.
    """
    if rho_ijk.n_qubits != 3:
        raise StateError("the tripartite bound needs a three-qubit state")
    px, pz, _ = basis_pair_probs(rho_ijk, frame, rho_ijk.qubits)
    total = 0.0
    for k in range(3):
        rest = [m for m in range(3) if m != k]
        total += conditional_entropy_bits(px, 3, rest) + conditional_entropy_bits(pz, 3, rest)
    return 1.0 - total


def total_key_capacity(u_q: CorrelationMatrix) -> float:
    """``sum_{i<j} max(1 - min(U_ij, U_ji), 0)`` over a qubitwise uncertainty matrix."""
    if not isinstance(u_q, CorrelationMatrix):
        raise TypeError("expected a CorrelationMatrix")
    u_q.require("qubitwise-uncertainty")
    v = u_q.values
    iu = np.triu_indices(len(u_q), k=1)
    return float(np.maximum(1 - np.minimum(v[iu], v.T[iu]), 0).sum())
