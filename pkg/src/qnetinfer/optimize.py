"""Gradient-descent optimization of local measurement frames.

Every correlation-matrix entry is an extremum over local frames: each qubit
carries Euler angles ``theta = (t1, t2, t3)`` and is measured in the rotated
Z-type or X-type basis.  An :class:`EntryObjective` turns a backend plus a
(target, given) pair of qubit tuples into a scalar cost; :func:`optimize_entry`
runs independent random restarts of plain gradient descent on it.

Gradients
    exact mode   parameter shift on the outcome probabilities, chained
                 through the analytic derivative of the cost.
    shot mode    central differences with step ``h`` (default pi/64).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .backends import Backend, StateBackend
from .correlation import CorrelationMatrix, EntryProvenance
from .measurement import MeasurementFrame, make_rng
from .qstate import DensityMatrix

PROB_FLOOR = 1e-12
INV_LN2 = 1.0 / math.log(2.0)

COST_KINDS = ("uncertainty", "vnentropy", "mutualinfo", "covariance", "variance")
MAXIMIZE = {"mutualinfo", "covariance", "variance"}
DEFAULT_STEPS = {
    "uncertainty": 0.1,
    "vnentropy": 0.1,
    "mutualinfo": 0.25,
    "covariance": 0.3,
    "variance": 0.3,
}


@dataclass
class OptimizerConfig:
    """Hyperparameters shared by every entry.

    ``step_size`` may be a number, a mapping from cost kind to number, or a
    callable ``f(cost_kind) -> float``; ``None`` uses per-cost defaults.
    ``shots=None`` means exact probabilities.  With ``shot_split="per_basis"``
    each of the X and Z settings gets ``shots`` samples; ``"total"`` halves the
    budget between them.
    """

    step_size: float | Mapping[str, float] | Callable[[str], float] | None = None
    steps: int = 30
    trials: int = 20
    shots: int | None = None
    seed: int = 0
    gradient_mode: str = "auto"
    fd_step: float = math.pi / 64
    shot_split: str = "per_basis"

    def __post_init__(self):
        if self.steps < 1 or self.trials < 1:
            raise ValueError("steps and trials must be at least 1")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive or None")
        if self.gradient_mode not in ("auto", "parameter_shift", "finite_difference"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.shot_split not in ("per_basis", "total"):
            raise ValueError("shot_split must be 'per_basis' or 'total'")
        for kind in COST_KINDS:
            if self.step_for(kind) <= 0:
                raise ValueError("step size must be positive")

    def step_for(self, kind: str) -> float:
        s = self.step_size
        if s is None:
            return DEFAULT_STEPS[kind]
        if callable(s):
            return float(s(kind))
        if isinstance(s, Mapping):
            return float(s.get(kind, DEFAULT_STEPS[kind]))
        return float(s)

    def resolved_gradient(self) -> str:
        if self.gradient_mode != "auto":
            return self.gradient_mode
        return "parameter_shift" if self.shots is None else "finite_difference"


# --------------------------------------------------------------------------
# Cost functions on (batched) probability vectors
# --------------------------------------------------------------------------

def _h(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -t.sum(axis=-1)


def _marg(p: np.ndarray, n: int, keep: Sequence[int]) -> np.ndarray:
    """Marginal over bit positions ``keep`` with the dropped axes kept as size 1."""
    drop = tuple(1 + k for k in range(n) if k not in keep)
    t = p.reshape((p.shape[0],) + (2,) * n)
    return t.sum(axis=drop, keepdims=True) if drop else t


def _h_marg(p, n, keep):
    m = _marg(p, n, keep)
    return _h(m.reshape(m.shape[0], -1))


def _dh(p: np.ndarray) -> np.ndarray:
    return -(np.log2(np.maximum(p, PROB_FLOOR)) + INV_LN2)


def _dh_marg(p, n, keep):
    m = _marg(p, n, keep)
    return np.broadcast_to(_dh(m), (p.shape[0],) + (2,) * n).reshape(p.shape)


def _spin(n, pos):
    return 1.0 - 2.0 * ((np.arange(2**n) >> (n - 1 - pos)) & 1)


class EntryObjective:
    """Scalar cost of one matrix entry as a function of the frame angles.

    ``value_batch`` returns the *measure* (entropy, information, covariance);
    ``signed`` flips it for maximized kinds so that descent always minimizes.
    """

    def __init__(self, cost: str, backend: Backend, target: Sequence[int], given: Sequence[int] = (),
                 shots: int | None = None, shot_split: str = "per_basis"):
        if cost not in COST_KINDS:
            raise ValueError(f"unknown cost kind {cost!r}")
        self.cost = cost
        self.backend = backend
        self.target, self.given = tuple(target), tuple(given)
        if set(self.target) & set(self.given):
            raise ValueError("target and given qubits overlap")
        self.order = self.target + self.given
        self.n = len(self.order)
        self.t_pos = list(range(len(self.target)))
        self.g_pos = list(range(len(self.target), self.n))
        if cost in ("mutualinfo", "covariance") and not self.given:
            raise ValueError(f"{cost} needs two parties")
        if cost == "covariance" and (len(self.target), len(self.given)) != (1, 1):
            raise ValueError("covariance is defined for single qubits")
        if cost in ("variance", "vnentropy") and self.given:
            raise ValueError(f"{cost} takes no conditioning qubits")
        if cost == "variance" and len(self.target) != 1:
            raise ValueError("variance is defined for a single qubit")
        self.bases = ("X", "Z") if cost in ("uncertainty", "vnentropy") else ("Z",)
        self.shots = shots
        if shots is not None and shot_split == "total" and len(self.bases) == 2:
            self.shots = max(1, shots // 2)
        self.sign = -1.0 if cost in MAXIMIZE else 1.0

    @property
    def maximize(self) -> bool:
        return self.sign < 0

    def probs(self, thetas_b: np.ndarray, rng=None, exact=False) -> dict[str, np.ndarray]:
        shots = None if exact else self.shots
        return {b: self.backend.probs_batch(self.order, thetas_b, (b,) * self.n, shots, rng) for b in self.bases}

    def measure(self, pd: dict[str, np.ndarray]) -> np.ndarray:
        n, c = self.n, self.cost
        if c in ("uncertainty", "vnentropy"):
            v = 0.0
            for p in pd.values():
                v = v + _h(p) - (_h_marg(p, n, self.g_pos) if self.g_pos else 0.0)
            return v - len(self.target) if c == "vnentropy" else v
        p = pd["Z"]
        if c == "mutualinfo":
            return _h_marg(p, n, self.t_pos) + _h_marg(p, n, self.g_pos) - _h(p)
        a = _spin(n, 0)
        if c == "variance":
            return 1.0 - (p @ a) ** 2
        b = _spin(n, 1)
        return p @ (a * b) - (p @ a) * (p @ b)

    def dmeasure(self, pd: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Derivative of the measure with respect to each probability vector."""
        n, c = self.n, self.cost
        if c in ("uncertainty", "vnentropy"):
            return {b: _dh(p) - (_dh_marg(p, n, self.g_pos) if self.g_pos else 0.0) for b, p in pd.items()}
        p = pd["Z"]
        if c == "mutualinfo":
            return {"Z": _dh_marg(p, n, self.t_pos) + _dh_marg(p, n, self.g_pos) - _dh(p)}
        a = _spin(n, 0)
        if c == "variance":
            return {"Z": -2.0 * (p @ a)[:, None] * a}
        b = _spin(n, 1)
        return {"Z": a * b - np.outer(p @ b, a) - np.outer(p @ a, b)}

    def value_batch(self, thetas_b, rng=None, exact=False) -> np.ndarray:
        return self.measure(self.probs(np.asarray(thetas_b, dtype=float), rng, exact))

    def value(self, thetas, rng=None, exact=False) -> float:
        return float(self.value_batch(np.asarray(thetas, dtype=float)[None], rng, exact)[0])

    def signed(self, thetas, rng=None) -> float:
        return self.sign * self.value(thetas, rng)

    # -- gradients ---------------------------------------------------------

    def _shifted(self, thetas: np.ndarray, h: float) -> np.ndarray:
        m = thetas.size
        eye = np.eye(m).reshape(m, *thetas.shape) * h
        return np.concatenate([thetas[None] + eye, thetas[None] - eye])

    def gradient(self, thetas, mode: str = "parameter_shift", h: float = math.pi / 64, rng=None):
        """Gradient of the signed cost.  Returns ``(grad, clamped)``."""
        thetas = np.asarray(thetas, dtype=float)
        m = thetas.size
        if mode == "parameter_shift":
            if not self.backend.has_exact:
                raise ValueError("parameter shift needs exact probabilities")
            pd0 = self.probs(thetas[None], exact=True)
            dv = self.dmeasure(pd0)
            clamped = any(bool((p < PROB_FLOOR).any()) for p in pd0.values())
            pd = self.probs(self._shifted(thetas, math.pi / 2), exact=True)
            g = np.zeros(m)
            for b, p in pd.items():
                g += 0.5 * (p[:m] - p[m:]) @ dv[b][0]
            return self.sign * g.reshape(thetas.shape), clamped
        if mode == "finite_difference":
            v = self.value_batch(self._shifted(thetas, h), rng)
            return self.sign * ((v[:m] - v[m:]) / (2 * h)).reshape(thetas.shape), False
        raise ValueError(f"unknown gradient mode {mode!r}")


def gradient(objective: EntryObjective, thetas, mode: str = "parameter_shift", h: float = math.pi / 64, rng=None) -> np.ndarray:
    return objective.gradient(thetas, mode, h, rng)[0]


# --------------------------------------------------------------------------
# Optimization
# --------------------------------------------------------------------------

@dataclass
class OptimizationTrace:
    params: list[np.ndarray] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.costs)

    def best_so_far(self, maximize=False) -> np.ndarray:
        c = np.asarray(self.costs)
        return np.maximum.accumulate(c) if maximize else np.minimum.accumulate(c)


@dataclass
class EntryResult:
    value: float
    frame: MeasurementFrame
    trace: OptimizationTrace
    best_trial: int | None
    trials_run: int
    traces: list[OptimizationTrace] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def _run_trial(obj: EntryObjective, cfg: OptimizerConfig, theta0: np.ndarray, rng) -> tuple[float, np.ndarray, OptimizationTrace]:
    step = cfg.step_for(obj.cost)
    mode = cfg.resolved_gradient()
    if mode == "parameter_shift" and not obj.backend.has_exact:
        mode = "finite_difference"
    exact = obj.shots is None
    tr = OptimizationTrace()
    theta = theta0.copy()
    tr.params.append(theta.copy())
    tr.costs.append(obj.value(theta, rng))
    clamped = False
    for _ in range(cfg.steps):
        g, c = obj.gradient(theta, mode, cfg.fd_step, rng)
        clamped |= c
        theta = theta - step * g
        tr.params.append(theta.copy())
        tr.costs.append(obj.value(theta, rng))
    if clamped:
        tr.flags.append("prob-clamped")
    if not np.isfinite(tr.costs).all():
        raise FloatingPointError("non-finite cost during optimization")
    if exact:
        k = int(np.argmin(obj.sign * np.asarray(tr.costs)))
        return tr.costs[k], tr.params[k], tr
    # under shots the last trace point is a fresh estimate at the final frame
    return tr.costs[-1], tr.params[-1], tr


def optimize_objective(obj: EntryObjective, cfg: OptimizerConfig, entry_index: int = 0) -> EntryResult:
    """Random restarts; the extremal trial value wins, ties go to the lowest trial index."""
    best = None
    traces = []
    for t in range(cfg.trials):
        rng_init = make_rng(cfg.seed, entry_index, t, 0)
        rng = make_rng(cfg.seed, entry_index, t, 1)
        theta0 = rng_init.uniform(-math.pi, math.pi, size=(obj.n, 3))
        val, theta, tr = _run_trial(obj, cfg, theta0, rng)
        traces.append(tr)
        if best is None or obj.sign * val < obj.sign * best[0]:
            best = (val, theta, t)
    val, theta, t = best
    flags = sorted({f for tr in traces for f in tr.flags})
    frame = MeasurementFrame.from_arrays(obj.order, theta, ["Z"] * obj.n)
    return EntryResult(float(val), frame, traces[t], t, cfg.trials, traces, flags)


def fixed_frame_value(obj: EntryObjective, cfg: OptimizerConfig, entry_index: int = 0, thetas=None) -> EntryResult:
    """Evaluate at a declared frame (default theta = 0) without optimizing."""
    theta = np.zeros((obj.n, 3)) if thetas is None else np.asarray(thetas, dtype=float)
    rng = make_rng(cfg.seed, entry_index, 0, 1)
    v = obj.value(theta, rng)
    tr = OptimizationTrace([theta], [v])
    frame = MeasurementFrame.from_arrays(obj.order, theta, ["Z"] * obj.n)
    return EntryResult(float(v), frame, tr, None, 0, [tr])


def _as_backend(source) -> Backend:
    if isinstance(source, Backend):
        return source
    if isinstance(source, DensityMatrix):
        return StateBackend(source)
    from .network import NetworkTopology, assemble_global_state

    if isinstance(source, NetworkTopology):
        return StateBackend(assemble_global_state(source))
    raise TypeError(f"cannot measure a {type(source).__name__}")


def optimize_entry(cost_kind: str, state, qubits, cfg: OptimizerConfig | None = None, *,
                   shared_frame: bool = False, entry_index: int = 0) -> EntryResult:
    """Optimize one entry.

    ``qubits`` is ``target`` or ``(target, given)``; each part is a qubit id
    or a tuple of ids (a node).  For ``mutualinfo`` and ``covariance`` the two
    parts are the two parties.
    """
    cfg = cfg or OptimizerConfig()
    if cost_kind == "vnentropy-proxy":
        cost_kind = "vnentropy"
    target, given = _split_parties(cost_kind, qubits)
    obj = EntryObjective(cost_kind, _as_backend(state), target, given, cfg.shots, cfg.shot_split)
    if shared_frame:
        return fixed_frame_value(obj, cfg, entry_index)
    return optimize_objective(obj, cfg, entry_index)


def _tup(x) -> tuple[int, ...]:
    return tuple(int(q) for q in x) if isinstance(x, (tuple, list)) else (int(x),)


def _split_parties(kind, qubits):
    if isinstance(qubits, (int, np.integer)):
        return (int(qubits),), ()
    qubits = list(qubits)
    if kind in ("mutualinfo", "covariance") or (len(qubits) == 2 and kind == "uncertainty"):
        if len(qubits) == 2:
            return _tup(qubits[0]), _tup(qubits[1])
    if all(isinstance(q, (int, np.integer)) for q in qubits):
        return tuple(int(q) for q in qubits), ()
    if len(qubits) == 1:
        return _tup(qubits[0]), ()
    raise ValueError(f"cannot read parties from {qubits!r}")


# --------------------------------------------------------------------------
# Matrices
# --------------------------------------------------------------------------

_KIND_COSTS = {
    # kind: (diagonal cost, off-diagonal cost, symmetric)
    "qubitwise-uncertainty": ("uncertainty", "uncertainty", False),
    "qubitwise-characteristic": ("vnentropy", "mutualinfo", True),
    "covariance": ("variance", "covariance", True),
    "nodewise-uncertainty": ("uncertainty", "uncertainty", False),
    "nodewise-characteristic": ("vnentropy", "mutualinfo", True),
}


def build_matrix(kind: str, source, cfg: OptimizerConfig | None = None, *, shared_frame: bool = False,
                 groups: Mapping | None = None, qubits: Sequence[int] | None = None,
                 progress: Callable[[int, int], None] | None = None) -> CorrelationMatrix:
    """Build one of the five correlation matrices, optimizing every entry independently.

    ``source`` is a density matrix, a network topology or a measurement
    backend.  Nodewise kinds take their qubit groups from ``groups`` (label to
    qubit tuple) or from the topology's nodes.
    """
    if kind not in _KIND_COSTS:
        raise ValueError(f"unknown matrix kind {kind!r}")
    cfg = cfg or OptimizerConfig()
    backend = _as_backend(source)
    if kind.startswith("nodewise"):
        if groups is None:
            topo = source if hasattr(source, "nodes") else getattr(backend, "topology", None)
            if topo is None:
                raise ValueError("nodewise matrices need node groups or a topology")
            groups = {n.id: tuple(n.qubits) for n in topo.nodes}
        labels = list(groups)
        parts = [tuple(groups[k]) for k in labels]
        empty = [k for k, p in zip(labels, parts) if not p]
        if empty:
            raise ValueError(f"nodes {empty} hold no qubits")
    else:
        labels = list(qubits if qubits is not None else backend.qubits)
        parts = [(q,) for q in labels]

    diag_cost, off_cost, symmetric = _KIND_COSTS[kind]
    n = len(parts)
    values = np.zeros((n, n))
    prov = {}
    todo = [(i, j) for i in range(n) for j in range(n) if not (symmetric and j < i)]
    for count, (i, j) in enumerate(todo):
        cost = diag_cost if i == j else off_cost
        given = () if i == j else parts[j]
        obj = EntryObjective(cost, backend, parts[i], given, cfg.shots, cfg.shot_split)
        idx = i * n + j
        res = fixed_frame_value(obj, cfg, idx) if shared_frame else optimize_objective(obj, cfg, idx)
        values[i, j] = res.value
        frame = {q: s.theta for q, s in res.frame.settings.items()}
        prov[(i, j)] = EntryProvenance(
            cost=cost,
            frame=frame,
            trials_run=res.trials_run,
            best_trial=res.best_trial,
            trace=list(res.trace.costs),
            all_traces=[list(t.costs) for t in res.traces],
            flags=list(res.flags),
            mitigation=backend.mitigation,
        )
        if symmetric and i != j:
            values[j, i] = res.value
            prov[(j, i)] = prov[(i, j)]
        if progress:
            progress(count + 1, len(todo))
    m = CorrelationMatrix(kind, values, tuple(labels), prov, backend.mitigation)
    bad = m.check_invariants()
    if bad and cfg.shots is None and backend.mitigation is None:
        warnings.warn(f"{kind} matrix violates {bad}", RuntimeWarning)
    return m


def crossfit_matrix(kind: str, folds: Sequence[Backend], cfg: OptimizerConfig | None = None, *,
                    groups: Mapping | None = None, qubits: Sequence[int] | None = None) -> CorrelationMatrix:
    """Optimize frames on one fold, score them on the other, then swap and average.

    Meant for backends whose estimates come from one fixed data record (the
    shadow backend): optimizing and scoring on the same record rewards frames
    that happen to fit its noise.  Provenance is taken from the first fit.
    """
    if len(folds) != 2:
        raise ValueError("cross-fitting needs exactly two folds")
    cfg = cfg or OptimizerConfig()
    fits = [build_matrix(kind, b, cfg, groups=groups, qubits=qubits) for b in folds]
    groups = groups or {lab: lab for lab in fits[0].labels}
    parts = [_tup(groups[lab]) for lab in fits[0].labels]
    values = np.zeros_like(fits[0].values)
    for fit, other in ((fits[0], folds[1]), (fits[1], folds[0])):
        for (i, j), p in fit.provenance.items():
            given = () if i == j else parts[j]
            theta = np.array([p.frame[q] for q in parts[i] + given])
            values[i, j] += EntryObjective(p.cost, other, parts[i], given).value(theta) / 2
    return CorrelationMatrix(kind, values, fits[0].labels, dict(fits[0].provenance), fits[0].mitigation)


def write_traces_csv(matrices: Mapping[str, CorrelationMatrix] | CorrelationMatrix, path) -> int:
    """Rows ``(matrix, step, entry, trial, cost)``; returns the number of rows written."""
    if isinstance(matrices, CorrelationMatrix):
        matrices = {matrices.kind: matrices}
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["matrix", "step", "entry", "trial", "cost"])
        for name, m in matrices.items():
            for (i, j), p in sorted(m.provenance.items()):
                entry = f"{m.labels[i]}|{m.labels[j]}"
                for t, costs in enumerate(p.all_traces):
                    for s, c in enumerate(costs):
                        w.writerow([name, s, entry, t, f"{c:.12g}"])
                        rows += 1
    return rows
