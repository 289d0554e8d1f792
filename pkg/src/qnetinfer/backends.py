"""Measurement backends: where outcome probabilities come from.

A backend answers one question: given an ordered tuple of qubits, a batch of
frame angles ``(B, k, 3)`` and one basis letter per qubit, what are the
outcome distributions ``(B, 2**k)``?  The plain backend applies the Born rule
to a density matrix; the error-mitigation pipelines in :mod:`qnetinfer.qem`
provide their own backends with the same interface.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .qstate import HADAMARD, DensityMatrix, partial_trace, reorder


def euler_zyz_batch(thetas: np.ndarray) -> np.ndarray:
    """Vectorized ``Rz(t3) Ry(t2) Rz(t1)`` over the leading axes of ``thetas[..., 3]``."""
    t1, t2, t3 = thetas[..., 0], thetas[..., 1], thetas[..., 2]
    c, s = np.cos(t2 / 2), np.sin(t2 / 2)
    em, ep = np.exp(-0.5j * (t1 + t3)), np.exp(-0.5j * (t3 - t1))
    u = np.empty(thetas.shape[:-1] + (2, 2), dtype=complex)
    u[..., 0, 0] = em * c
    u[..., 0, 1] = -ep * s
    u[..., 1, 0] = ep.conj() * s
    u[..., 1, 1] = em.conj() * c
    return u


def rotation_batch(thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
    """Batched Kronecker product of per-qubit frame rotations, shape ``(B, 2**k, 2**k)``."""
    u = euler_zyz_batch(np.asarray(thetas, dtype=float))
    xmask = np.array([b == "X" for b in bases])
    if xmask.any():
        u[:, xmask] = HADAMARD @ u[:, xmask]
    v = u[:, 0]
    for k in range(1, u.shape[1]):
        b, d = v.shape[0], v.shape[1] * 2
        v = np.einsum("bij,bkl->bikjl", v, u[:, k]).reshape(b, d, d)
    return v


def born_batch(rho: np.ndarray, thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
    v = rotation_batch(thetas, bases)
    p = np.einsum("bij,jk,bik->bi", v, rho, v.conj(), optimize=True).real
    return np.clip(p, 0.0, None)


def sample_batch(p: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=-1, keepdims=True)
    return rng.multinomial(shots, p) / shots


class Backend:
    """Base class; subclasses implement :meth:`exact_batch`."""

    #: name recorded in matrix provenance
    mitigation: str | None = None
    #: True when ``exact_batch`` is available (finite-shot-only backends set False)
    has_exact = True
    #: qubit ids the backend can measure
    qubits: tuple[int, ...] = ()

    def exact_batch(self, qubits: tuple[int, ...], thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def sampled_batch(self, qubits, thetas, bases, shots: int, rng: np.random.Generator) -> np.ndarray:
        return sample_batch(self.exact_batch(qubits, thetas, bases), shots, rng)

    def probs_batch(self, qubits, thetas, bases, shots: int | None = None, rng=None) -> np.ndarray:
        qubits = tuple(qubits)
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim == 2:
            thetas = thetas[None]
        if shots is None:
            return self.exact_batch(qubits, thetas, bases)
        return self.sampled_batch(qubits, thetas, bases, shots, rng)

    def probs(self, qubits, thetas, bases, shots=None, rng=None) -> np.ndarray:
        return self.probs_batch(qubits, np.asarray(thetas, dtype=float)[None], bases, shots, rng)[0]


class StateBackend(Backend):
    """Born rule on a fixed density matrix; reduced states are cached per qubit tuple."""

    def __init__(self, state: DensityMatrix):
        self.state = state
        self.qubits = tuple(state.qubits)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def reduced(self, qubits: tuple[int, ...]) -> np.ndarray:
        if qubits not in self._cache:
            self._cache[qubits] = reorder(partial_trace(self.state, qubits), qubits).data
        return self._cache[qubits]

    def exact_batch(self, qubits, thetas, bases):
        return born_batch(self.reduced(tuple(qubits)), thetas, bases)
