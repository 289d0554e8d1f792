"""From correlation matrices to topology claims.

Two entry points:

* :func:`infer_from_uqm` reads a qubitwise uncertainty matrix.  Pairs below 1
  share an EPR source, pairs in ``[1, threshold)`` share a multipartite GHZ
  source, and everything else is unconnected.
* :func:`count_epr_between_nodes` and friends read nodewise uncertainty and
  characteristic matrices and count the sources shared between nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .correlation import CorrelationMatrix, symmetrize_min
from .network import AssumptionViolation, Node, NetworkTopology, Source, Violation

DEFAULT_EPS = 0.05
INT_SNAP = 1e-9
COUNT_TOL = 1e-6
NOISY_INT_TOL = 0.05
# floating-point guard on the EPR edge; exact GHZ pairs evaluate to 1 - 1e-15
EDGE_TOL = 1e-9


class CountingError(ValueError):
    """Counts that no noiseless network satisfying the assumptions can produce."""


@dataclass
class InferenceReport:
    inferred: NetworkTopology
    distill_lb: dict[tuple[Any, Any], float] = field(default_factory=dict)
    total_key_lb: float = 0.0
    epr_counts: dict[tuple[Any, Any], float] = field(default_factory=dict)
    source_census: dict[str, int] | None = None
    warnings: list[str] = field(default_factory=list)
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def groups(self) -> list[tuple[int, ...]]:
        return [s.qubits for s in self.inferred.sources]

    def to_dict(self) -> dict[str, Any]:
        def key(k):
            return f"{k[0]}-{k[1]}"

        return {
            "inferred": self.inferred.to_dict(),
            "distill_lb": {key(k): float(v) for k, v in self.distill_lb.items()},
            "total_key_lb": float(self.total_key_lb),
            "epr_counts": {key(k): _num(v) for k, v in self.epr_counts.items()},
            "source_census": self.source_census,
            "warnings": list(self.warnings),
            "raw": _plain(self.raw),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def _plain(x):
    if isinstance(x, dict):
        return {str(k) if isinstance(k, tuple) else k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# --------------------------------------------------------------------------
# Qubitwise protocol
# --------------------------------------------------------------------------

def uncertainty_threshold_for_mixture(kinds: Iterable[str], gepr_angle: float = math.pi / 8) -> float:
    """Uncertainty at or above which a qubit pair is read as uncorrelated.

    Networks of GHZ and EPR sources only put uncorrelated pairs at 2.  A
    generalized EPR source ``cos a |00> + sin a |11>`` has reduced qubits that
    are not maximally mixed, so an uncorrelated pair that includes one of them
    can sit as low as ``1 + H(cos^2 a)``.  W sources keep reduced qubits at
    entropy ``H(1/3)`` and their two-qubit marginals above that floor.
    """
    kinds = {k.lower() for k in kinds}
    if not kinds:
        raise ValueError("at least one source kind is required")
    unknown = kinds - {"ghz", "epr", "w", "gepr"}
    if unknown:
        raise ValueError(f"unknown source kinds {sorted(unknown)}")
    floor = 2.0
    if "gepr" in kinds:
        c2 = math.cos(gepr_angle) ** 2
        floor = min(floor, 1.0 + _h2(c2))
    if "w" in kinds:
        # one-qubit marginal of W3 is diag(2/3, 1/3); its minimal one-qubit
        # uncertainty bounds an uncorrelated pair from below
        floor = min(floor, 1.0 + _h2(1 / 3))
    return floor


def _h2(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def _affiliation(u: np.ndarray, q: int, group: Sequence[int]) -> float:
    others = [k for k in group if k != q]
    return float(np.mean(u[q, others])) if others else math.inf


def _resolve_groups(u: np.ndarray, candidates: list[frozenset], warn: list[str], labels) -> list[frozenset]:
    """Drop subsumed groups, then give each contested qubit to its lowest-uncertainty group."""
    uniq = sorted(set(candidates), key=lambda g: (-len(g), sorted(g)))
    kept = [g for g in uniq if not any(g < h for h in uniq)]
    owners: dict[int, list[int]] = {}
    for gi, g in enumerate(kept):
        for q in g:
            owners.setdefault(q, []).append(gi)
    members = [set(g) for g in kept]
    for q, gs in sorted(owners.items()):
        if len(gs) < 2:
            continue
        scores = [(_affiliation(u, q, kept[gi]), gi) for gi in gs]
        best = min(scores)[1]
        warn.append(
            f"qubit {labels[q]} claimed by {len(gs)} groups; kept in "
            f"{sorted(labels[k] for k in kept[best])}"
        )
        for gi in gs:
            if gi != best:
                members[gi].discard(q)
    out = sorted({frozenset(m) for m in members if m}, key=lambda g: sorted(g))
    return out


def infer_from_uqm(
    u_q: CorrelationMatrix | np.ndarray,
    node_assignment: Mapping[Any, Any] | Sequence[Node] | None = None,
    *,
    eps: float = DEFAULT_EPS,
    threshold: float | None = None,
    coarse_grained: bool = False,
    labels: Sequence[int] | None = None,
) -> InferenceReport:
    """Run the uncertainty protocol on a qubitwise uncertainty matrix.

    ``threshold`` replaces ``2 - eps`` as the upper edge of the GHZ band (see
    :func:`uncertainty_threshold_for_mixture`).  ``node_assignment`` is either
    a qubit-to-node mapping or a sequence of nodes; without it every qubit is
    its own node.
    """
    if isinstance(u_q, CorrelationMatrix):
        u_q.require("qubitwise-uncertainty")
        labels = list(u_q.labels) if labels is None else list(labels)
        values = u_q.values
    else:
        values = np.asarray(u_q, dtype=float)
        labels = list(range(1, len(values) + 1)) if labels is None else list(labels)
    n = len(values)
    u = symmetrize_min(values)
    thr = (2.0 - eps) if threshold is None else float(threshold)
    if thr <= 1.0:
        raise ValueError("GHZ band upper edge must exceed 1")
    warn: list[str] = []
    off = ~np.eye(n, dtype=bool)
    below_one = u < 1.0 - EDGE_TOL

    candidates: list[frozenset] = []
    for i in range(n):
        if coarse_grained:
            candidates.append(frozenset([i, *np.flatnonzero(off[i] & (u[i] < thr))]))
            continue
        for j in np.flatnonzero(off[i] & below_one[i]):
            candidates.append(frozenset((i, int(j))))
        band = np.flatnonzero(off[i] & ~below_one[i] & (u[i] < thr))
        if band.size:
            candidates.append(frozenset([i, *band]))
    groups = _resolve_groups(u, candidates, warn, labels)
    covered = set().union(*groups) if groups else set()
    groups += [frozenset([q]) for q in range(n) if q not in covered]
    groups.sort(key=lambda g: min(g))

    sources = []
    for k, g in enumerate(groups):
        qs = tuple(sorted(labels[q] for q in g))
        if len(g) == 1:
            kind = "unknown"
        elif len(g) == 2 and below_one[tuple(sorted(g))]:
            kind = "epr"
        else:
            kind = "ghz"
        sources.append(Source(f"S{k + 1}", kind, qs))

    if node_assignment is None:
        nodes = tuple(Node(f"C{lab}", (lab,)) for lab in labels)
    elif isinstance(node_assignment, Mapping):
        by_node: dict[Any, list] = {}
        for q in labels:
            if q not in node_assignment:
                raise ValueError(f"qubit {q} has no node")
            by_node.setdefault(node_assignment[q], []).append(q)
        nodes = tuple(Node(str(k), tuple(v)) for k, v in by_node.items())
    else:
        nodes = tuple(node_assignment)

    distill = {}
    for i in range(n):
        for j in range(i + 1, n):
            if below_one[i, j]:
                distill[(labels[i], labels[j])] = float(max(1.0 - u[i, j], 0.0))
    inferred = NetworkTopology(tuple(sources), nodes)
    return InferenceReport(
        inferred=inferred,
        distill_lb=distill,
        total_key_lb=float(sum(distill.values())),
        warnings=warn,
        raw={"threshold": thr, "coarse_grained": coarse_grained},
    )


# --------------------------------------------------------------------------
# Nodewise counting
# --------------------------------------------------------------------------

def _vals(m) -> np.ndarray:
    return m.values if isinstance(m, CorrelationMatrix) else np.asarray(m, dtype=float)


def _index(m, i) -> int:
    """Integers are row positions; anything else is looked up among the labels."""
    if isinstance(i, (int, np.integer)):
        return int(i)
    if not isinstance(m, CorrelationMatrix):
        raise TypeError("label lookup needs a CorrelationMatrix")
    return list(m.labels).index(i)


@dataclass(frozen=True)
class PairCounts:
    n_epr: float
    n_ghz: float
    n_iR: float
    n_jR: float

    def as_dict(self) -> dict[str, float]:
        return {"n_epr": self.n_epr, "n_ghz": self.n_ghz, "n_iR": self.n_iR, "n_jR": self.n_jR}


def count_epr_between_nodes(u, m, i, j, tol: float = COUNT_TOL) -> PairCounts:
    """Solve for the four source counts seen by nodes ``i`` and ``j``.

    Needs the nodewise uncertainty ``H_u(C_i)``, ``H_u(C_j)``, both
    conditional uncertainties and the measured mutual information.
    """
    if isinstance(u, CorrelationMatrix):
        u.require("nodewise-uncertainty")
    if isinstance(m, CorrelationMatrix):
        m.require("nodewise-characteristic")
    a, b = _index(u, i), _index(u, j)
    U, M = _vals(u), _vals(m)
    hi, hj, hij, hji, info = U[a, a], U[b, b], U[a, b], U[b, a], M[a, b]
    epr_i, epr_j = hi - hij - info, hj - hji - info
    ghz_i, ghz_j = 2 * info + hij - hi, 2 * info + hji - hj
    if abs(epr_i - epr_j) > tol or abs(ghz_i - ghz_j) > tol:
        raise CountingError(
            f"nodes {i},{j}: the two expressions disagree (EPR {epr_i:.6g} vs {epr_j:.6g}); "
            "assumptions violated or noise too strong"
        )
    out = PairCounts(float(epr_i), float(ghz_i), float(hi / 2 - info), float(hj / 2 - info))
    if min(out.as_dict().values()) < -tol:
        raise CountingError(f"nodes {i},{j}: negative source count {out}")
    return out


def total_epr_count(u, m=None, noisy: bool = False) -> int:
    """Half the sum of pairwise EPR counts over ordered node pairs.

    Takes either the two nodewise matrices or a mapping from ordered node
    pairs to counts.  Noiseless mode requires an integer to 1e-6;
    ``noisy=True`` accepts values within 0.05 of an integer and skips the
    symmetric cross-check.
    """
    if m is None:
        if not isinstance(u, Mapping):
            raise TypeError("pass both matrices or a mapping of pair counts")
        total = sum(float(getattr(v, "n_epr", v)) for (a, b), v in u.items() if a != b)
    else:
        U, M = _vals(u), _vals(m)
        total = 0.0
        for a in range(len(U)):
            for b in range(len(U)):
                if a == b:
                    continue
                if noisy:
                    total += U[a, a] - U[a, b] - M[a, b]
                else:
                    total += count_epr_between_nodes(u, m, a, b).n_epr
    total /= 2
    tol = NOISY_INT_TOL if noisy else COUNT_TOL
    r = round(total)
    if abs(total - r) > tol:
        raise CountingError(f"EPR total {total:.6g} is not an integer")
    return int(r)


def census_3_4(m, n_epr: int) -> dict[str, int]:
    """Numbers of three- and four-qubit GHZ sources from the characteristic matrix.

    Every qubit adds one to the diagonal sum, and each m-partite source adds
    ``m (m - 1)`` to the off-diagonal sum.
    """
    if isinstance(m, CorrelationMatrix):
        m.require("nodewise-characteristic")
    M = _vals(m)
    diag = float(np.trace(M))
    off = float(M.sum() - diag)
    for name, v in (("diagonal", diag), ("off-diagonal", off)):
        if abs(v - round(v)) > COUNT_TOL:
            raise CountingError(f"{name} sum {v:.6g} is not an integer")
    d, o = round(diag) - 2 * n_epr, round(off) - 2 * n_epr
    # 3 n3 + 4 n4 = d and 6 n3 + 12 n4 = o  =>  n4 = (o - 2d) / 4, n3 = (d - 4 n4) / 3
    if (o - 2 * d) % 4 or o - 2 * d < 0:
        raise AssumptionViolation([Violation("census", f"no nonnegative integer solution for d={d}, o={o}")])
    n4 = (o - 2 * d) // 4
    if (d - 4 * n4) % 3 or d - 4 * n4 < 0:
        raise AssumptionViolation([Violation("census", f"no nonnegative integer solution for d={d}, o={o}")])
    return {"n_epr": int(n_epr), "n_3ghz": (d - 4 * n4) // 3, "n_4ghz": int(n4)}


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= INT_SNAP else float(x)


def hardened_epr_count(u, m, i, j) -> int:
    """``ceil H_u(C_i) - floor H_u(C_i|C_j) - ceil I(C_i, C_j)``, clamped at 0.

    Values within 1e-9 of an integer are snapped first so that floating-point
    dust cannot flip a ceiling or floor.
    """
    a, b = _index(u, i), _index(u, j)
    U, M = _vals(u), _vals(m)
    n = math.ceil(_snap(U[a, a])) - math.floor(_snap(U[a, b])) - math.ceil(_snap(M[a, b]))
    if n < 0:
        warnings.warn(f"hardened count for nodes {i},{j} is {n}; clamped to 0", RuntimeWarning)
        n = 0
    return int(n)


def node_pair_report(u, m, hardened: bool = False) -> dict[tuple[Any, Any], dict[str, float]]:
    """Counts for every unordered node pair, with the raw quantities alongside."""
    U, M = _vals(u), _vals(m)
    labels = list(u.labels) if isinstance(u, CorrelationMatrix) else list(range(len(U)))
    out = {}
    for a in range(len(U)):
        for b in range(a + 1, len(U)):
            row = {
                "H_i": float(U[a, a]), "H_j": float(U[b, b]),
                "H_i|j": float(U[a, b]), "H_j|i": float(U[b, a]), "I": float(M[a, b]),
            }
            if hardened:
                row["n_epr"] = hardened_epr_count(u, m, a, b)
            else:
                row.update(count_epr_between_nodes(u, m, a, b).as_dict())
            out[(labels[a], labels[b])] = row
    return out
