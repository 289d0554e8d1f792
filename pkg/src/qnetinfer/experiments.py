"""Desk-scale experiment drivers: noise sweeps, threshold crossings, shot-noise studies."""

from __future__ import annotations

import csv
import math
from dataclasses import replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .backends import Backend, StateBackend
from .correlation import CorrelationMatrix, matrix_distance
from .inference import hardened_epr_count, infer_from_uqm
from .network import ChannelSpec, NetworkTopology, Source, Node, assemble_global_state, topology_equal
from .optimize import OptimizerConfig, build_matrix, crossfit_matrix, optimize_entry
from .qem import PECBackend, ShadowBackend, VDBackend, shadow_snapshot
from .qstate import DensityMatrix, apply_channel, make_source_state, partial_trace, standard_channel


def h2(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def phase_damped_epr_uncertainty(gamma: float) -> float:
    """Minimal uncertainty of an EPR pair with phase damping ``gamma`` on both qubits."""
    return h2(gamma / 2)


def noisy_pair(kind: str, channel: str, gamma: float) -> DensityMatrix:
    """EPR pair (``kind="epr"``) or two-qubit GHZ marginal (``"tau2"``) with the channel on both qubits."""
    if kind == "epr":
        rho = make_source_state("epr").density_matrix()
    elif kind == "tau2":
        g = make_source_state("ghz", 3).density_matrix()
        rho = partial_trace(g, g.qubits[:2])
    else:
        raise ValueError(f"unknown pair kind {kind!r}")
    ch = standard_channel(channel, gamma)
    for q in rho.qubits:
        rho = apply_channel(rho, ch, [q])
    return rho


def pair_network(channel: str, gamma: float) -> NetworkTopology:
    """One EPR source over qubits 1 and 2, each in its own node, both noisy."""
    return NetworkTopology(
        (Source("A1", "epr", (1, 2)),),
        (Node("C1", (1,)), Node("C2", (2,))),
        {1: ChannelSpec(channel, gamma), 2: ChannelSpec(channel, gamma)},
    )


def depolarized_epr_step(gamma: float, mitigated: bool) -> float:
    """Noise-dependent step size for uncertainty descent on a depolarized EPR pair."""
    return 0.05 + (gamma if mitigated else gamma / 2)


def depolarized_tau2_step(gamma: float, mitigated: bool) -> float:
    return 0.2 + 2 * gamma if mitigated else 0.3 + gamma


def make_backend(rho_or_net, qem: str | None, shots=None, seed=0, snapshots=10_000) -> Backend:
    """Backend for ``qem`` in {None, "none", "pec", "vd", "sd"}; PEC needs the network, not just its state."""
    if qem in (None, "none"):
        rho = rho_or_net if isinstance(rho_or_net, DensityMatrix) else assemble_global_state(rho_or_net)
        return StateBackend(rho)
    if qem == "pec":
        if not isinstance(rho_or_net, NetworkTopology):
            raise ValueError("PEC needs the network description to know the noise")
        return PECBackend(rho_or_net)
    rho = rho_or_net if isinstance(rho_or_net, DensityMatrix) else assemble_global_state(rho_or_net)
    if qem == "vd":
        return VDBackend(rho)
    if qem == "sd":
        return ShadowBackend(shadow_snapshot(rho, snapshots, seed))
    raise ValueError(f"unknown mitigation {qem!r}")


def optimized_pair_value(cost: str, source, cfg: OptimizerConfig, qem: str | None = None) -> float:
    be = make_backend(source, qem, cfg.shots, cfg.seed)
    q = be.qubits
    parties = (q[0], q[1]) if cost != "variance" else q[0]
    return optimize_entry(cost, be, parties, cfg).value


def sweep_noise(
    gammas: Iterable[float],
    channel: str = "phase_damping",
    pair: str = "epr",
    costs: Sequence[str] = ("uncertainty", "mutualinfo", "covariance"),
    cfg: OptimizerConfig | None = None,
    qem: str | None = None,
    step_fn: Callable[[float, bool], float] | None = None,
) -> list[dict]:
    """Optimized pair correlations vs noise strength, unmitigated and (optionally) mitigated.

    ``step_fn(gamma, mitigated)`` overrides the step size per grid point.
    """
    cfg = cfg or OptimizerConfig(steps=30, trials=20)
    rows = []
    for g in gammas:
        g = float(g)
        row = {"gamma": g}
        rho = noisy_pair(pair, channel, g)
        for mitigated in ([False, True] if qem else [False]):
            c = cfg if step_fn is None else replace(cfg, step_size=step_fn(g, mitigated))
            src = pair_network(channel, g) if (mitigated and qem == "pec") else rho
            for cost in costs:
                col = f"{cost}_{qem}" if mitigated else cost
                row[col] = optimized_pair_value(cost, src, c, qem if mitigated else None)
        if channel == "phase_damping" and pair == "epr":
            row["uncertainty_theory"] = phase_damped_epr_uncertainty(g)
        rows.append(row)
    return rows


def find_crossing(fn: Callable[[float], float], lo: float, hi: float, level: float = 1.0, xtol: float = 1e-5) -> float:
    """Root of ``fn(x) - level`` in ``[lo, hi]``."""
    return float(brentq(lambda x: fn(x) - level, lo, hi, xtol=xtol))


def uncertainty_crossing(
    qem: str | None = None,
    pair: str = "epr",
    channel: str = "depolarizing",
    cfg: OptimizerConfig | None = None,
    bracket: tuple[float, float] = (0.01, 0.5),
    step_fn: Callable[[float, bool], float] | None = depolarized_epr_step,
    level: float = 1.0,
) -> float:
    """Noise strength at which the optimized pair uncertainty reaches ``level``."""
    cfg = cfg or OptimizerConfig(steps=20, trials=20)
    mitigated = qem not in (None, "none")

    def value(g):
        c = cfg if step_fn is None else replace(cfg, step_size=step_fn(g, mitigated))
        src = pair_network(channel, g) if qem == "pec" else noisy_pair(pair, channel, g)
        return optimized_pair_value("uncertainty", src, c, qem if mitigated else None)

    return find_crossing(value, *bracket, level=level)


def ideal_matrices(topology: NetworkTopology, kinds: Sequence[str]) -> dict[str, CorrelationMatrix]:
    """Noiseless, reference-frame-aligned matrices (only valid when theta = 0 is optimal, as for GHZ networks)."""
    return {k: build_matrix(k, topology, OptimizerConfig(steps=1, trials=1), shared_frame=True) for k in kinds}


def shot_noise_study(
    topology: NetworkTopology,
    shots_grid: Sequence[int] = (100, 300, 1000, 3000, 10000),
    seeds: Sequence[int] = tuple(range(20)),
    kinds: Sequence[str] = ("qubitwise-uncertainty", "covariance"),
    cfg: OptimizerConfig | None = None,
    reference: Mapping[str, CorrelationMatrix] | None = None,
    keep_matrices: bool = False,
) -> dict:
    """Mean Frobenius distance to the ideal matrices for each shot budget.

    Returns ``{"rows": [...], "matrices": {(kind, shots, seed): matrix}}``.
    """
    cfg = cfg or OptimizerConfig(steps=20, trials=1)
    reference = reference or ideal_matrices(topology, kinds)
    be = StateBackend(assemble_global_state(topology))
    rows, mats = [], {}
    for shots in shots_grid:
        row = {"shots": int(shots)}
        for kind in kinds:
            d = []
            for seed in seeds:
                m = build_matrix(kind, be, replace(cfg, shots=int(shots), seed=int(seed)))
                d.append(matrix_distance(m, reference[kind]))
                if keep_matrices:
                    mats[(kind, int(shots), int(seed))] = m
            row[f"{kind}_mean"] = float(np.mean(d))
            row[f"{kind}_min"] = float(np.min(d))
            row[f"{kind}_sem"] = float(np.std(d, ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
        rows.append(row)
    return {"rows": rows, "matrices": mats}


def sd_hardened_counts(topology: NetworkTopology, snapshots: int = 10_000, seed: int = 0,
                       cfg: OptimizerConfig | None = None) -> dict:
    """Shadow-distilled nodewise U and M (cross-fitted, one snapshot record each) and hardened pair counts."""
    cfg = cfg or OptimizerConfig(steps=30, trials=3)
    rho = assemble_global_state(topology)
    groups = {n.id: tuple(n.qubits) for n in topology.nodes}
    mats = {}
    for k, kind in enumerate(("nodewise-uncertainty", "nodewise-characteristic")):
        snap = shadow_snapshot(rho, snapshots, seed=2 * seed + k)
        mats[kind] = crossfit_matrix(kind, [ShadowBackend(h) for h in snap.split(2)], cfg, groups=groups)
    u, m = mats["nodewise-uncertainty"], mats["nodewise-characteristic"]
    labels = list(groups)
    counts = {
        (labels[a], labels[b]): hardened_epr_count(u, m, a, b)
        for a in range(len(labels)) for b in range(a + 1, len(labels))
    }
    return {"U": u, "M": m, "counts": counts}


def count_inversions(values: Sequence[float]) -> int:
    """Adjacent increases in a sequence that should be non-increasing."""
    return int(sum(1 for a, b in zip(values, values[1:]) if b > a))


def grouping_recovered(u_q: CorrelationMatrix, truth: NetworkTopology, **kw) -> bool:
    rep = infer_from_uqm(u_q, truth.nodes, **kw)
    return topology_equal(rep.inferred, truth)


def write_rows_csv(rows: Sequence[Mapping], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def _fmt(x):
    return f"{x:.12g}" if isinstance(x, float) else x
