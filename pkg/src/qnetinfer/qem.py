"""Error mitigation for the outcome statistics that feed the optimizer.

Three pipelines, each exposed both as plain functions and as a measurement
backend (see :mod:`qnetinfer.backends`) so that mitigated probabilities drop
straight into frame optimization:

PEC   inverse of known phase damping as a signed mix of Z insertions.
VD    two-copy virtual distillation with the B and D diagonalization gates,
      estimating probabilities of ``rho^2 / Tr rho^2``.
SD    the same estimator evaluated on classical-shadow snapshots.

Mitigated probability vectors can go negative; :func:`project_to_simplex`
returns the nearest valid distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backends import Backend, born_batch, rotation_batch
from .measurement import OutcomeDistribution, make_rng
from .qstate import HADAMARD, I2, S_GATE, Z, DensityMatrix, StateError, partial_trace, reorder

PURITY_FLOOR = 1e-9
QUASI_SUM_TOL = 1e-6


# --------------------------------------------------------------------------
# Simplex projection
# --------------------------------------------------------------------------

def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{p : p >= 0, sum p = 1}`` (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("cannot project non-finite values")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def project_rows(p: np.ndarray) -> np.ndarray:
    """Project each row that has a negative entry; leave valid rows untouched."""
    p = np.array(p, dtype=float)
    for r in np.flatnonzero((p < 0).any(axis=1)):
        p[r] = project_to_simplex(p[r])
    return p


# --------------------------------------------------------------------------
# Probabilistic error cancellation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuasiDecomposition:
    """Signed combination of circuit variants; ``terms`` maps a Z-insertion pattern to its coefficient.

    A pattern is a tuple of booleans, one per qubit in ``qubits``, marking
    where a Pauli Z is inserted right after the noise.
    """

    qubits: tuple[int, ...]
    terms: tuple[tuple[tuple[bool, ...], float], ...]

    def __post_init__(self):
        total = sum(c for _, c in self.terms)
        if abs(total - 1) > 1e-9:
            raise ValueError(f"quasi-probability coefficients sum to {total}, not 1")

    @property
    def one_norm(self) -> float:
        return float(sum(abs(c) for _, c in self.terms))

    def sampling_probs(self) -> np.ndarray:
        c = np.array([abs(c) for _, c in self.terms])
        return c / c.sum()


def pec_coefficients(gamma: float) -> tuple[float, float]:
    """Identity and Z coefficients of the inverse single-qubit phase damping."""
    if not 0 <= gamma < 1:
        raise StateError(f"phase damping with gamma={gamma} cannot be inverted")
    r = math.sqrt(1 - gamma)
    return (1 + r) / (2 * r), -(1 - r) / (2 * r)


def z_insertion_probability(gamma: float) -> float:
    return (1 - math.sqrt(1 - gamma)) / 2


def pec_decomposition_phase_damping(gamma: float | Sequence[float], qubits: Sequence[int] | None = None) -> QuasiDecomposition:
    """Tensor product of per-qubit inverses; zero coefficients are dropped."""
    gammas = [gamma] if np.isscalar(gamma) else list(gamma)
    qubits = tuple(range(len(gammas))) if qubits is None else tuple(qubits)
    if len(qubits) != len(gammas):
        raise ValueError("one gamma per qubit")
    per_qubit = []
    for g in gammas:
        ci, cz = pec_coefficients(g)
        per_qubit.append([(False, ci)] + ([(True, cz)] if cz != 0 else []))
    terms = []
    for combo in itertools.product(*per_qubit):
        terms.append((tuple(z for z, _ in combo), float(np.prod([c for _, c in combo]))))
    return QuasiDecomposition(qubits, tuple(terms))


def _apply_z(data: np.ndarray, pattern: Sequence[bool]) -> np.ndarray:
    op = np.ones((1, 1))
    for z in pattern:
        op = np.kron(op, Z if z else I2)
    return op @ data @ op.conj().T


def _rotate(data: np.ndarray, angles: Sequence) -> np.ndarray:
    from .qstate import euler_zyz

    op = np.ones((1, 1))
    for a in angles:
        op = np.kron(op, I2 if a is None else euler_zyz(a))
    return op @ data @ op.conj().T


class PECBackend(Backend):
    """Probabilities of a phase-damped network with the noise cancelled.

    Z insertions act between the noise and any frame misalignment.  Exact
    mode sums the variants' Born probabilities with their signed
    coefficients.  Shot mode samples a variant per shot with probability
    ``|c| / ||c||_1``, weights the outcome by ``sign(c) ||c||_1`` and projects
    the resulting quasi-distribution onto the simplex.
    """

    mitigation = "pec"

    def __init__(self, topology):
        from .network import apply_noise, source_product_state

        self.topology = topology
        self.qubits = tuple(topology.qubits)
        for q, spec in topology.noise.items():
            if spec.name != "phase_damping":
                raise ValueError(f"qubit {q}: PEC here inverts phase damping only, got {spec.name}")
        self.gamma = {q: spec.param for q, spec in topology.noise.items()}
        self._noisy = apply_noise(source_product_state(topology), topology.noise)
        self._cache: dict[tuple[int, ...], list[tuple[float, np.ndarray]]] = {}

    def variants(self, qubits: tuple[int, ...]):
        if qubits not in self._cache:
            red = reorder(partial_trace(self._noisy, qubits), qubits).data
            noisy = [q for q in qubits if self.gamma.get(q, 0) > 0]
            dec = pec_decomposition_phase_damping([self.gamma[q] for q in noisy], noisy)
            mis = [self.topology.misalignment.get(q) for q in qubits]
            out = []
            for pattern, c in dec.terms:
                full = [False] * len(qubits)
                for q, z in zip(noisy, pattern):
                    full[qubits.index(q)] = z
                out.append((c, _rotate(_apply_z(red, full), mis)))
            self._cache[qubits] = out
        return self._cache[qubits]

    def exact_batch(self, qubits, thetas, bases):
        return sum(c * born_batch(v, thetas, bases) for c, v in self.variants(tuple(qubits)))

    def sampled_batch(self, qubits, thetas, bases, shots, rng):
        var = self.variants(tuple(qubits))
        coef = np.array([c for c, _ in var])
        norm = np.abs(coef).sum()
        pick = np.abs(coef) / norm
        per_variant = [born_batch(v, thetas, bases) for _, v in var]
        out = np.zeros_like(per_variant[0])
        for b in range(out.shape[0]):
            n_v = rng.multinomial(shots, pick)
            for k, (n, p) in enumerate(zip(n_v, per_variant)):
                if n:
                    out[b] += np.sign(coef[k]) * rng.multinomial(n, p[b] / p[b].sum())
        return project_rows(out * norm / shots)


def pec_mitigated_probabilities(topology, frame, subset=None, shots: int | None = None, seed=0) -> OutcomeDistribution:
    subset = tuple(subset) if subset is not None else tuple(sorted(frame.settings))
    thetas, bases = frame.arrays(subset)
    be = PECBackend(topology)
    rng = make_rng(seed) if shots is not None else None
    p = be.probs(subset, thetas, bases, shots, rng)
    if shots is None:
        p = project_to_simplex(p) if (p < 0).any() else np.clip(p, 0, None) / p.sum()
    return OutcomeDistribution(subset, p, shots)


# --------------------------------------------------------------------------
# Two-copy virtual distillation
# --------------------------------------------------------------------------

_A = 1 / math.sqrt(2)
#: diagonalizes the copy swap on (k, k'): B S B^dag = diag(1, -1, 1, 1)
B_GATE = np.array([[1, 0, 0, 0], [0, _A, -_A, 0], [0, _A, _A, 0], [0, 0, 0, 1]], dtype=complex)
#: diagonalizes (Z x I) S on (k, k'): eigenvalues (1, i, -i, -1)
D_GATE = B_GATE @ np.diag([1, 1, 1j, 1])

SWAP_EIG = np.array([1, -1, 1, 1], dtype=float)
ZSWAP_EIG_B = np.array([1, 0, 0, -1], dtype=float)
ZSWAP_EIG_D = np.array([1, 1j, -1j, -1])


def _two_copy_probs(rho_b: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """Outcome probabilities of ``gate`` applied to every (k, k') pair of two copies.

    ``rho_b`` is a batch ``(B, 2**m, 2**m)``; the result is ``(B, 4**m)``
    with the pair outcomes of qubit 1 most significant.
    """
    bsz, d = rho_b.shape[0], rho_b.shape[1]
    m = int(round(math.log2(d)))
    # two copies in register order (1..m, 1'..m') -> (1,1',2,2',...)
    r = np.einsum("bij,bkl->bikjl", rho_b, rho_b).reshape((bsz,) + (2,) * (4 * m))
    row = [val for k in range(m) for val in (k, m + k)]
    perm = [0] + [1 + x for x in row] + [1 + 2 * m + x for x in row]
    r = r.transpose(perm).reshape(bsz, d * d, d * d)
    g = np.ones((1, 1))
    for _ in range(m):
        g = np.kron(g, gate)
    p = np.einsum("ij,bjk,ik->bi", g, r, g.conj(), optimize=True).real
    return np.clip(p, 0.0, None)


def _pair_eigs(m: int, per_pair: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for e in per_pair:
        out = np.kron(out, e)
    return out


def _vd_expectations(pb: np.ndarray, pd: np.ndarray | None, m: int):
    """``<Z_k>_VD`` for each qubit and ``<Z_1 Z_2>_VD`` from two-copy statistics."""
    tr_s = pb @ _pair_eigs(m, [SWAP_EIG] * m)
    if (tr_s <= PURITY_FLOOR).any():
        raise FloatingPointError("estimated Tr(S rho x rho) is not positive; too few copies")
    z = []
    for k in range(m):
        eig = _pair_eigs(m, [ZSWAP_EIG_B if j == k else SWAP_EIG for j in range(m)])
        z.append((pb @ eig) / tr_s)
    zz = None
    if pd is not None:
        zz = (pd @ _pair_eigs(m, [ZSWAP_EIG_D] * m)).real / tr_s
    return tr_s, z, zz


def _vd_assemble(z, zz, m) -> np.ndarray:
    if m == 1:
        return 0.5 * np.stack([1 + z[0], 1 - z[0]], axis=-1)
    cols = []
    for mm in (0, 1):
        for nn in (0, 1):
            sm, sn = (-1) ** mm, (-1) ** nn
            cols.append(0.25 * (1 + sm * z[0] + sn * z[1] + sm * sn * zz))
    return np.stack(cols, axis=-1)


class VDBackend(Backend):
    """Two-copy virtual distillation on one- or two-qubit marginals.

    The frame rotation is applied to each copy before the diagonalizing
    gates.  In shot mode each basis setting gets ``shots`` two-copy runs,
    split between B runs and D runs by ``b_fraction``.
    """

    mitigation = "vd"

    def __init__(self, state: DensityMatrix, b_fraction: float = 0.5):
        if not 0 < b_fraction < 1:
            raise ValueError("b_fraction must lie strictly between 0 and 1")
        self.state = state
        self.qubits = tuple(state.qubits)
        self.b_fraction = b_fraction
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def reduced(self, qubits):
        if len(qubits) > 2:
            raise ValueError("virtual distillation is implemented for one or two qubits")
        if qubits not in self._cache:
            self._cache[qubits] = reorder(partial_trace(self.state, qubits), qubits).data
        return self._cache[qubits]

    def _rotated(self, qubits, thetas, bases):
        v = rotation_batch(thetas, bases)
        rho = self.reduced(tuple(qubits))
        return np.einsum("bij,jk,blk->bil", v, rho, v.conj(), optimize=True)

    def raw_batch(self, qubits, thetas, bases):
        rr = self._rotated(qubits, thetas, bases)
        pb = _two_copy_probs(rr, B_GATE)
        pd = _two_copy_probs(rr, D_GATE) if len(qubits) == 2 else None
        return pb, pd

    def exact_batch(self, qubits, thetas, bases):
        m = len(qubits)
        pb, pd = self.raw_batch(qubits, thetas, bases)
        _, z, zz = _vd_expectations(pb, pd, m)
        return _vd_assemble(z, zz, m)

    def sampled_batch(self, qubits, thetas, bases, shots, rng):
        m = len(qubits)
        pb, pd = self.raw_batch(qubits, thetas, bases)
        n_b = max(1, int(round(shots * self.b_fraction))) if m == 2 else shots
        n_d = max(1, shots - n_b)
        fb = rng.multinomial(n_b, pb / pb.sum(-1, keepdims=True)) / n_b
        fd = rng.multinomial(n_d, pd / pd.sum(-1, keepdims=True)) / n_d if pd is not None else None
        _, z, zz = _vd_expectations(fb, fd, m)
        return project_rows(_vd_assemble(z, zz, m))


def vd_mitigated_pair_probabilities(rho: DensityMatrix, frame=None, shots: int | None = None, seed=0,
                                    b_fraction: float = 0.5) -> OutcomeDistribution:
    """Virtually distilled outcome distribution of a one- or two-qubit state."""
    from .measurement import MeasurementFrame

    frame = frame or MeasurementFrame.uniform(rho.qubits)
    thetas, bases = frame.arrays(rho.qubits)
    be = VDBackend(rho, b_fraction)
    rng = make_rng(seed) if shots is not None else None
    p = be.probs(rho.qubits, thetas, bases, shots, rng)
    p = np.clip(p, 0, None) if shots is None else p
    return OutcomeDistribution(rho.qubits, p / p.sum(), shots)


@dataclass(frozen=True)
class RenyiPair:
    s2_pair: float
    s2_first: float
    entangled: bool


def vd_renyi2_pair(rho: DensityMatrix, shots: int | None = None, seed=0) -> RenyiPair:
    """Second Renyi entropies of a pair and of its first qubit from the same B-gate statistics.

    ``S2(rho_ij) < S2(rho_i)`` cannot happen for separable states, so it flags entanglement.
    """
    if rho.n_qubits != 2:
        raise StateError("expected a two-qubit state")
    pb = _two_copy_probs(rho.data[None], B_GATE)[0]
    if shots is not None:
        pb = make_rng(seed).multinomial(shots, pb / pb.sum(-1, keepdims=True)) / shots
    tr_pair = float(pb @ _pair_eigs(2, [SWAP_EIG, SWAP_EIG]))
    tr_first = float(pb @ _pair_eigs(2, [SWAP_EIG, np.ones(4)]))
    if min(tr_pair, tr_first) <= PURITY_FLOOR:
        raise FloatingPointError("purity estimate is not positive; too few copies")
    s_pair, s_first = -math.log2(tr_pair), -math.log2(tr_first)
    return RenyiPair(s_pair, s_first, s_pair < s_first - 1e-12)


# --------------------------------------------------------------------------
# Classical shadows and shadow distillation
# --------------------------------------------------------------------------

SHADOW_BASES = ("Z", "X", "Y")
#: rotations taking each Pauli eigenbasis to the computational basis
SHADOW_UNITARIES = (I2, HADAMARD, HADAMARD @ S_GATE.conj().T)


def _snapshot_factors() -> np.ndarray:
    """The six single-qubit snapshot matrices, indexed ``2 * basis + bit``."""
    out = np.empty((6, 2, 2), dtype=complex)
    for b, u in enumerate(SHADOW_UNITARIES):
        for bit in (0, 1):
            ket = u.conj().T[:, bit]
            out[2 * b + bit] = 3 * np.outer(ket, ket.conj()) - I2
    return out


SNAPSHOT_FACTORS = _snapshot_factors()
_PAIR_PRODUCTS = np.einsum("sij,tjk->stik", SNAPSHOT_FACTORS, SNAPSHOT_FACTORS)


@dataclass(frozen=True)
class ShadowSnapshot:
    """Randomized Pauli measurement records: ``bases[t, k]`` in {0: Z, 1: X, 2: Y}, ``bits[t, k]``."""

    qubits: tuple[int, ...]
    bases: np.ndarray
    bits: np.ndarray

    def __len__(self) -> int:
        return self.bases.shape[0]

    def split(self, k: int = 2) -> list["ShadowSnapshot"]:
        """``k`` disjoint, contiguous blocks of the record."""
        edges = np.linspace(0, len(self), k + 1).astype(int)
        return [ShadowSnapshot(self.qubits, self.bases[a:b], self.bits[a:b]) for a, b in zip(edges, edges[1:])]

    def codes(self, subset: Sequence[int]) -> np.ndarray:
        cols = [self.qubits.index(q) for q in subset]
        return 2 * self.bases[:, cols] + self.bits[:, cols]

    def factor(self, t: int, subset: Sequence[int] | None = None) -> np.ndarray:
        """Reconstructed snapshot ``kron_k (3 U_k^dag |b_k><b_k| U_k - I)``."""
        subset = self.qubits if subset is None else tuple(subset)
        out = np.ones((1, 1), dtype=complex)
        for c in self.codes(subset)[t]:
            out = np.kron(out, SNAPSHOT_FACTORS[c])
        return out

    def mean_state(self, subset: Sequence[int] | None = None) -> np.ndarray:
        subset = self.qubits if subset is None else tuple(subset)
        codes = self.codes(subset)
        m = len(subset)
        hist = np.bincount(codes @ (6 ** np.arange(m - 1, -1, -1)), minlength=6**m).reshape((6,) * m)
        out = hist.astype(complex)
        for _ in range(m):
            out = np.tensordot(out, SNAPSHOT_FACTORS, axes=([0], [0]))
        # axes are now (r1, c1, r2, c2, ...)
        perm = list(range(0, 2 * m, 2)) + list(range(1, 2 * m, 2))
        d = 2**m
        return out.transpose(perm).reshape(d, d) / len(self)


def shadow_snapshot(state: DensityMatrix, n_snapshots: int, seed=0) -> ShadowSnapshot:
    """Random single-qubit Pauli measurements of every qubit of ``state``."""
    rng = make_rng(seed)
    n = state.n_qubits
    bases = rng.integers(0, 3, size=(n_snapshots, n))
    bits = np.zeros((n_snapshots, n), dtype=np.int64)
    keys = bases @ (3 ** np.arange(n - 1, -1, -1))
    for key in np.unique(keys):
        rows = np.flatnonzero(keys == key)
        setting = bases[rows[0]]
        u = np.ones((1, 1), dtype=complex)
        for b in setting:
            u = np.kron(u, SHADOW_UNITARIES[b])
        p = np.clip(np.einsum("ij,jk,ik->i", u, state.data, u.conj()).real, 0, None)
        outcomes = rng.choice(p.size, size=rows.size, p=p / p.sum())
        for k in range(n):
            bits[rows, k] = (outcomes >> (n - 1 - k)) & 1
    return ShadowSnapshot(tuple(state.qubits), bases, bits)


_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


def _shadow_moments(snap: ShadowSnapshot, subset: Sequence[int]):
    """Histogram of snapshot codes over ``subset`` and ``S @ S`` with ``S = sum_s rho_s``."""
    m = len(subset)
    codes = snap.codes(subset)
    hist = np.bincount(codes @ (6 ** np.arange(m - 1, -1, -1)), minlength=6**m).reshape((6,) * m)
    total = snap.mean_state(subset) * len(snap)
    return hist.astype(complex), total @ total


_SNAPSHOT_SQUARES = np.einsum("sij,sjk->sik", SNAPSHOT_FACTORS, SNAPSHOT_FACTORS)


def _kron_projector_trace(projectors: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``Tr(kron_k pi_{k, a_k} M)`` for every batch row and outcome string, shape ``(B, 2**m)``."""
    bsz, m = projectors.shape[:2]
    t = np.broadcast_to(mat.reshape((2,) * (2 * m)), (bsz,) + (2,) * (2 * m))
    for k in range(m):
        # axes: b, r_k..r_m, c_k..c_m, a_1..a_{k-1}
        t = np.einsum("baij,bji...->b...a", projectors[:, k], np.moveaxis(t, 1 + (m - k), 2))
    return t.reshape(bsz, 2**m)


def sd_numerators(snap: ShadowSnapshot, subset: Sequence[int], projectors: np.ndarray, moments=None) -> np.ndarray:
    """U-statistic sums ``sum_{s != t} Tr(Pi_a rho_s rho_t)`` for every outcome string ``a``.

    ``projectors`` has shape ``(B, m, 2, 2, 2)``: batch, qubit, outcome bit,
    then the 2x2 projector.  Returns ``(B, 2**m)`` real sums.  The pair sum is
    ``Tr(Pi_a S S)`` with ``S = sum_s rho_s``, minus the ``s == t`` terms,
    which factorize over qubits and reduce to a histogram contraction.
    """
    subset = tuple(subset)
    m = len(subset)
    hist, s2 = moments if moments is not None else _shadow_moments(snap, subset)
    full = _kron_projector_trace(projectors, s2)
    g = np.einsum("bkaij,sji->bkas", projectors, _SNAPSHOT_SQUARES)
    left, outs = _LETTERS[:m], _LETTERS[m : 2 * m]
    diag = np.einsum(
        f"{left}," + ",".join(f"Z{outs[k]}{left[k]}" for k in range(m)) + f"->Z{outs}",
        hist, *[g[:, k] for k in range(m)], optimize="greedy",
    )
    return (full - diag.reshape(full.shape)).real


def _frame_projectors(thetas: np.ndarray, bases: Sequence[str]) -> np.ndarray:
    from .backends import euler_zyz_batch

    u = euler_zyz_batch(np.asarray(thetas, dtype=float))
    xmask = np.array([b == "X" for b in bases])
    if xmask.any():
        u[:, xmask] = HADAMARD @ u[:, xmask]
    # pi[b, k, a] = u^dag |a><a| u
    return np.einsum("bkai,bkaj->bkaij", u.conj(), u)


class ShadowBackend(Backend):
    """Shadow-distilled probabilities from one shared snapshot record.

    ``route="projector"`` estimates ``Tr(Pi_a rho^2) / Tr(rho^2)`` for each
    outcome directly; ``route="pauli"`` estimates ``<Z_k>`` and ``<Z_1 Z_2>``
    and assembles the four-term formula as in two-copy VD.  Either way rows
    with negative entries are projected onto the simplex.
    """

    mitigation = "sd"
    has_exact = False

    def __init__(self, snapshots: ShadowSnapshot, route: str = "projector"):
        if route not in ("projector", "pauli"):
            raise ValueError("route must be 'projector' or 'pauli'")
        self.snapshots = snapshots
        self.qubits = tuple(snapshots.qubits)
        self.route = route
        self._moments: dict[tuple[int, ...], tuple] = {}

    def exact_batch(self, qubits, thetas, bases):
        qubits = tuple(qubits)
        if qubits not in self._moments:
            self._moments[qubits] = _shadow_moments(self.snapshots, qubits)
        proj = _frame_projectors(thetas, bases)
        num = sd_numerators(self.snapshots, qubits, proj, self._moments[qubits])
        den = num.sum(axis=1, keepdims=True)
        if (den <= 0).any():
            raise FloatingPointError("shadow purity estimate is not positive; too few snapshots")
        p = num / den
        if self.route == "pauli":
            m = len(qubits)
            if m > 2:
                raise ValueError("the Pauli route handles one or two qubits")
            s = [1.0 - 2.0 * ((np.arange(2**m) >> (m - 1 - k)) & 1) for k in range(m)]
            z = [p @ sk for sk in s]
            zz = p @ (s[0] * s[1]) if m == 2 else None
            p = _vd_assemble(z, zz, m)
        return project_rows(p)

    def sampled_batch(self, qubits, thetas, bases, shots, rng):
        # the snapshot record already fixes the statistics
        return self.exact_batch(qubits, thetas, bases)


def sd_expectation(observable: np.ndarray, snapshots: ShadowSnapshot, subset: Sequence[int] | None = None) -> float:
    """``sum_{s!=t} Tr(O rho_s rho_t) / sum_{s!=t} Tr(rho_s rho_t)`` over the snapshot record.

    Direct pairwise evaluation; quadratic in the number of snapshots, so
    meant for small records and for checking :func:`sd_numerators`.
    """
    subset = snapshots.qubits if subset is None else tuple(subset)
    mats = np.array([snapshots.factor(t, subset) for t in range(len(snapshots))])
    total = mats.sum(axis=0)
    # sum_{s != t} rho_s rho_t = total @ total - sum_s rho_s rho_s
    sq = np.einsum("sij,sjk->ik", mats, mats)
    pair = total @ total - sq
    den = np.trace(pair).real
    if den <= 0:
        raise FloatingPointError("shadow purity estimate is not positive; too few snapshots")
    return float(np.trace(observable @ pair).real / den)


BACKENDS: Mapping[str, type] = {"pec": PECBackend, "vd": VDBackend, "sd": ShadowBackend}
