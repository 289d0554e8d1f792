"""Command-line driver.

    qnetinfer <task> --config net.yaml [--shots N] [--seed S] [--trials T]
              [--steps K] [--step-size X] [--qem none|pec|vd|sd] [--out DIR]

Tasks: build-matrices, infer, optimize-traces, qem-compare, sweep-noise,
census.  Exit codes: 0 ok, 1 bad input (missing file, schema, incompatible
options), 2 assumption violation, 3 numeric failure.

The default worker count for sweeps and multi-matrix runs comes from the
``QNETINFER_THREADS`` environment variable (1 if unset).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .correlation import MATRIX_KINDS, CorrelationMatrix, MatrixKindError, write_matrix_csv
from .experiments import (
    depolarized_epr_step,
    depolarized_tau2_step,
    make_backend,
    sweep_noise,
    uncertainty_crossing,
    write_rows_csv,
)
from .inference import (
    CountingError,
    census_3_4,
    infer_from_uqm,
    node_pair_report,
    total_epr_count,
)
from .network import (
    AssumptionViolation,
    NetworkTopology,
    TopologyError,
    assemble_global_state,
    load_network,
    validate,
)
from .optimize import COST_KINDS, OptimizerConfig, build_matrix, crossfit_matrix, write_traces_csv
from .qem import ShadowBackend, shadow_snapshot

log = logging.getLogger("qnetinfer")

TASKS = ("build-matrices", "infer", "optimize-traces", "qem-compare", "sweep-noise", "census")
QEMS = ("none", "pec", "vd", "sd")
THREADS_ENV = "QNETINFER_THREADS"

EXIT_OK, EXIT_INPUT, EXIT_ASSUMPTION, EXIT_NUMERIC = 0, 1, 2, 3


class SpecError(ValueError):
    """Incompatible or missing task options."""


@dataclass
class ExperimentSpec:
    task: str
    config: Path | None = None
    kinds: tuple[str, ...] = ()
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    qem: str = "none"
    out: Path = Path("out")
    shared_frame: bool = False
    snapshots: int = 10_000
    gammas: tuple[float, ...] = ()
    channel: str | None = None
    pair: str = "epr"
    costs: tuple[str, ...] = ("uncertainty", "mutualinfo", "covariance")
    eps: float = 0.05
    threshold: float | None = None
    coarse: bool = False
    hardened: bool | None = None
    check_assumptions: bool = True
    threads: int = 1

    def validate(self) -> None:
        if self.task not in TASKS:
            raise SpecError(f"unknown task {self.task!r}")
        if self.qem not in QEMS:
            raise SpecError(f"unknown mitigation {self.qem!r}")
        needs_config = self.task in ("build-matrices", "infer", "optimize-traces", "census")
        if needs_config and self.config is None:
            raise SpecError(f"{self.task} needs --config")
        bad = [k for k in self.kinds if k not in MATRIX_KINDS]
        if bad:
            raise SpecError(f"unknown matrix kinds {bad}")
        bad = [c for c in self.costs if c not in COST_KINDS]
        if bad:
            raise SpecError(f"unknown costs {bad}")
        if self.task == "qem-compare" and self.qem == "none":
            raise SpecError("qem-compare needs --qem pec, vd or sd")
        if self.qem == "pec" and self.task in ("qem-compare", "sweep-noise") and self.channel not in (None, "phase_damping"):
            raise SpecError("PEC is implemented for phase damping only")
        if self.qem == "vd" and any(k.startswith("nodewise") for k in self.kinds):
            raise SpecError("VD is implemented for one- and two-qubit reductions; nodewise kinds need more")
        if self.qem == "vd" and self.task == "census":
            raise SpecError("VD cannot produce the nodewise matrices this task needs")
        if self.threads < 1:
            raise SpecError("thread count must be positive")
        if self.snapshots < 4:
            raise SpecError("shadow distillation needs at least four snapshots")
        if self.task == "sweep-noise" and self.qem == "sd":
            raise SpecError("sweep-noise supports --qem none, pec or vd")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_yaml(path: Path, data) -> None:
    path.write_text(yaml.safe_dump(data, sort_keys=False))


def _write_matrix(m: CorrelationMatrix, out: Path) -> None:
    write_matrix_csv(m, out / f"{m.kind}.csv")
    _write_yaml(out / f"{m.kind}.yaml", m.to_dict())


def _load(spec: ExperimentSpec) -> NetworkTopology:
    topo = load_network(spec.config)
    violations = validate(topo)
    if violations and spec.check_assumptions and spec.task in ("infer", "census"):
        raise AssumptionViolation(violations)
    for v in violations:
        log.warning("assumption %s", v)
    return topo


def _matrices(spec: ExperimentSpec, topo: NetworkTopology, kinds: Sequence[str]) -> dict[str, CorrelationMatrix]:
    cfg = spec.optimizer
    groups = {n.id: tuple(n.qubits) for n in topo.nodes}

    def one(kind):
        g = groups if kind.startswith("nodewise") else None
        if spec.qem == "sd":
            # one snapshot record per matrix, split for cross-fitting
            k = list(MATRIX_KINDS).index(kind)
            snap = shadow_snapshot(assemble_global_state(topo), spec.snapshots, seed=2 * cfg.seed + k)
            folds = [ShadowBackend(h) for h in snap.split(2)]
            return crossfit_matrix(kind, folds, cfg, groups=g)
        be = make_backend(topo, spec.qem, cfg.shots, cfg.seed, spec.snapshots)
        return build_matrix(kind, be, cfg, shared_frame=spec.shared_frame, groups=g)

    return dict(zip(kinds, _pmap(one, list(kinds), spec.threads)))


def _noisy(spec: ExperimentSpec, topo: NetworkTopology) -> bool:
    return spec.optimizer.shots is not None or spec.qem != "none" or bool(topo.noise)


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------

def _build(spec: ExperimentSpec) -> None:
    topo = _load(spec)
    kinds = spec.kinds or ("qubitwise-uncertainty", "qubitwise-characteristic", "covariance")
    for m in _matrices(spec, topo, kinds).values():
        _write_matrix(m, spec.out)


def _traces(spec: ExperimentSpec) -> None:
    topo = _load(spec)
    kinds = spec.kinds or ("qubitwise-uncertainty",)
    mats = _matrices(spec, topo, kinds)
    for m in mats.values():
        _write_matrix(m, spec.out)
    write_traces_csv(mats, spec.out / "traces.csv")


def _node_counts(spec, topo, u, m) -> tuple[dict, dict]:
    """Per-pair counts (raw quantities alongside) and, in noiseless mode, the source census."""
    hardened = _noisy(spec, topo) if spec.hardened is None else spec.hardened
    pairs = node_pair_report(u, m, hardened=hardened)
    out = {"hardened": hardened, "pairs": {f"{a}-{b}": row for (a, b), row in pairs.items()}}
    n = int(sum(row["n_epr"] for row in pairs.values())) if hardened else total_epr_count(u, m)
    out["total_epr"] = n
    if not hardened:
        out["census"] = census_3_4(m, n)
    return out, pairs


def _infer(spec: ExperimentSpec) -> None:
    topo = _load(spec)
    kinds = ["qubitwise-uncertainty"]
    multi = any(len(n.qubits) > 1 for n in topo.nodes)
    if multi and spec.qem == "vd":
        raise SpecError("VD cannot produce the nodewise matrices needed for multi-qubit nodes")
    if multi:
        kinds += ["nodewise-uncertainty", "nodewise-characteristic"]
    mats = _matrices(spec, topo, kinds)
    for m in mats.values():
        _write_matrix(m, spec.out)
    rep = infer_from_uqm(
        mats["qubitwise-uncertainty"], topo.nodes, eps=spec.eps, threshold=spec.threshold, coarse_grained=spec.coarse
    )
    if multi:
        counts, pairs = _node_counts(spec, topo, mats["nodewise-uncertainty"], mats["nodewise-characteristic"])
        rep.epr_counts = {k: v["n_epr"] for k, v in pairs.items()}
        rep.source_census = counts.get("census")
        rep.raw["node_pairs"] = counts["pairs"]
    rep.raw["mitigation"] = spec.qem
    if spec.qem != "none":
        # mitigation corrects statistics, not the state, so these bounds can overstate entanglement
        rep.raw["distill_lb_scope"] = "statistics"
        rep.warnings.append(f"distill_lb and total_key_lb come from {spec.qem}-mitigated statistics, "
                            "not from the physical state")
    _write_yaml(spec.out / "report.yaml", rep.to_dict())


def _census(spec: ExperimentSpec) -> None:
    topo = _load(spec)
    mats = _matrices(spec, topo, ["nodewise-uncertainty", "nodewise-characteristic"])
    for m in mats.values():
        _write_matrix(m, spec.out)
    counts, _ = _node_counts(spec, topo, mats["nodewise-uncertainty"], mats["nodewise-characteristic"])
    _write_yaml(spec.out / "census.yaml", counts)


def _step_fn(spec: ExperimentSpec, channel: str):
    if spec.optimizer.step_size is not None or channel != "depolarizing":
        return None
    return depolarized_tau2_step if spec.pair == "tau2" else depolarized_epr_step


def _sweep(spec: ExperimentSpec) -> None:
    channel = spec.channel or "phase_damping"
    gammas = spec.gammas or tuple(np.round(np.linspace(0.0, 0.9, 10), 10))
    qem = None if spec.qem == "none" else spec.qem
    cfg = spec.optimizer

    def one(g):
        return sweep_noise([g], channel, spec.pair, spec.costs, cfg, qem, _step_fn(spec, channel))[0]

    rows = _pmap(one, list(gammas), spec.threads)
    write_rows_csv(rows, spec.out / "sweep.csv")


def _qem_compare(spec: ExperimentSpec) -> None:
    channel = spec.channel or ("phase_damping" if spec.qem == "pec" else "depolarizing")
    gammas = spec.gammas or tuple(np.round(np.linspace(0.0, 0.5, 11), 10))
    cfg = spec.optimizer
    step = _step_fn(spec, channel)

    def one(g):
        return sweep_noise([g], channel, spec.pair, ("uncertainty",), cfg, spec.qem, step)[0]

    rows = _pmap(one, list(gammas), spec.threads)
    write_rows_csv(rows, spec.out / "qem_compare.csv")
    crossings = {}
    for label, qem in (("unmitigated", None), (spec.qem, spec.qem)):
        try:
            crossings[label] = uncertainty_crossing(qem, spec.pair, channel, cfg, step_fn=step)
        except ValueError as e:  # no sign change inside the bracket
            log.warning("no crossing for %s: %s", label, e)
            crossings[label] = None
    _write_yaml(spec.out / "crossings.yaml", {"channel": channel, "pair": spec.pair, "level": 1.0, "gamma": crossings})


RUNNERS = {
    "build-matrices": _build,
    "infer": _infer,
    "optimize-traces": _traces,
    "qem-compare": _qem_compare,
    "sweep-noise": _sweep,
    "census": _census,
}


def run(spec: ExperimentSpec) -> int:
    """Validate and execute ``spec``; returns the process exit code."""
    try:
        spec.validate()
        spec.out.mkdir(parents=True, exist_ok=True)
        RUNNERS[spec.task](spec)
    except AssumptionViolation as e:
        log.error("assumption violation: %s", e)
        return EXIT_ASSUMPTION
    except (CountingError, FloatingPointError, np.linalg.LinAlgError) as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    except (OSError, yaml.YAMLError, TopologyError, MatrixKindError, SpecError, ValueError) as e:
        log.error("%s", e)
        return EXIT_INPUT
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _step_size(text: str):
    """``0.1`` or ``uncertainty=0.1,mutualinfo=0.25``."""
    if "=" not in text:
        return float(text)
    out = {}
    for part in text.split(","):
        k, v = part.split("=", 1)
        if k.strip() not in COST_KINDS:
            raise argparse.ArgumentTypeError(f"unknown cost {k!r}")
        out[k.strip()] = float(v)
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as an assumption violation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qnetinfer", description="Quantum network topology inference experiments.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", type=Path, help="network description (YAML)")
    p.add_argument("--kinds", type=_names, default=(), help="comma-separated matrix kinds")
    p.add_argument("--shots", type=int, default=None, help="shots per basis setting; omit for exact probabilities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--step-size", type=_step_size, default=None)
    p.add_argument("--qem", choices=QEMS, default="none")
    p.add_argument("--snapshots", type=int, default=10_000, help="shadow snapshots per matrix (--qem sd)")
    p.add_argument("--shared-frame", action="store_true", help="measure in the reference frame, no optimization")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--gammas", type=_floats, default=(), help="comma-separated noise strengths")
    p.add_argument("--channel", choices=("phase_damping", "depolarizing"), default=None)
    p.add_argument("--pair", choices=("epr", "tau2"), default="epr")
    p.add_argument("--costs", type=_names, default=("uncertainty", "mutualinfo", "covariance"))
    p.add_argument("--eps", type=float, default=0.05, help="GHZ band is [1, 2 - eps)")
    p.add_argument("--threshold", type=float, default=None, help="explicit GHZ band upper edge")
    p.add_argument("--coarse", action="store_true", help="group every pair below the threshold into one source")
    p.add_argument("--hardened", action=argparse.BooleanOptionalAction, default=None,
                   help="ceil/floor EPR counting (default: on for noisy runs)")
    p.add_argument("--no-check", dest="check_assumptions", action="store_false",
                   help="run inference even if the config breaks its assumptions")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def spec_from_args(ns: argparse.Namespace) -> ExperimentSpec:
    try:
        cfg = OptimizerConfig(step_size=ns.step_size, steps=ns.steps, trials=ns.trials, shots=ns.shots, seed=ns.seed)
    except ValueError as e:
        raise SpecError(str(e)) from e
    threads = ns.threads if ns.threads is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
    return ExperimentSpec(
        task=ns.task, config=ns.config, kinds=ns.kinds, optimizer=cfg, qem=ns.qem, out=ns.out,
        shared_frame=ns.shared_frame, snapshots=ns.snapshots, gammas=ns.gammas, channel=ns.channel,
        pair=ns.pair, costs=ns.costs, eps=ns.eps, threshold=ns.threshold, coarse=ns.coarse,
        hardened=ns.hardened, check_assumptions=ns.check_assumptions, threads=threads,
    )


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        spec = spec_from_args(ns)
    except (SpecError, ValueError) as e:
        log.error("%s", e)
        return EXIT_INPUT
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
