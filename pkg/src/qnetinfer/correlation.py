"""Correlation matrices and the per-entry bookkeeping that travels with them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

MATRIX_KINDS = (
    "qubitwise-uncertainty",
    "qubitwise-characteristic",
    "covariance",
    "nodewise-uncertainty",
    "nodewise-characteristic",
)

RANGE_TOL = 1e-9


class MatrixKindError(ValueError):
    pass


@dataclass
class EntryProvenance:
    """How one matrix entry was obtained."""

    cost: str
    frame: dict[int, tuple[float, float, float]] | None = None
    trials_run: int = 0
    best_trial: int | None = None
    trace: list[float] = field(default_factory=list)
    all_traces: list[list[float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    mitigation: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "cost": self.cost,
            "frame": None if self.frame is None else {int(q): [float(t) for t in th] for q, th in self.frame.items()},
            "trials_run": self.trials_run,
            "best_trial": self.best_trial,
            "flags": list(self.flags),
            "mitigation": self.mitigation,
        }


@dataclass
class CorrelationMatrix:
    kind: str
    values: np.ndarray
    labels: tuple = ()
    provenance: dict[tuple[int, int], EntryProvenance] = field(default_factory=dict)
    mitigation: str | None = None

    def __post_init__(self):
        if self.kind not in MATRIX_KINDS:
            raise MatrixKindError(f"unknown matrix kind {self.kind!r}")
        self.values = np.array(self.values, dtype=float)
        n = self.values.shape[0]
        if self.values.shape != (n, n):
            raise ValueError("correlation matrix must be square")
        if not self.labels:
            self.labels = tuple(range(n))
        self.labels = tuple(self.labels)
        if len(self.labels) != n:
            raise ValueError("one label per row is required")

    def __len__(self) -> int:
        return self.values.shape[0]

    def check_invariants(self) -> list[str]:
        """Violated range invariants (empty when the matrix is consistent with its kind)."""
        v, problems = self.values, []
        d = np.diag(v)
        if self.kind == "qubitwise-uncertainty" and ((d < -RANGE_TOL) | (d > 2 + RANGE_TOL)).any():
            problems.append("one-qubit uncertainty outside [0, 2]")
        if self.kind.endswith("characteristic") and (d < -RANGE_TOL).any():
            problems.append("negative entropy on the diagonal")
        if self.kind == "covariance" and (np.abs(v) > 1 + RANGE_TOL).any():
            problems.append("covariance outside [-1, 1]")
        if not np.isfinite(v).all():
            problems.append("non-finite entries")
        return problems

    def require(self, *kinds: str) -> None:
        if self.kind not in kinds:
            raise MatrixKindError(f"expected a {' or '.join(kinds)} matrix, got {self.kind}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "labels": [_plain(x) for x in self.labels],
            "values": self.values.tolist(),
            "mitigation": self.mitigation,
            "provenance": [
                {"row": int(i), "col": int(j), **p.to_dict()} for (i, j), p in sorted(self.provenance.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CorrelationMatrix":
        prov = {}
        for p in d.get("provenance", []):
            frame = p.get("frame")
            prov[(p["row"], p["col"])] = EntryProvenance(
                cost=p["cost"],
                frame=None if frame is None else {int(q): tuple(t) for q, t in frame.items()},
                trials_run=p.get("trials_run", 0),
                best_trial=p.get("best_trial"),
                flags=list(p.get("flags", [])),
                mitigation=p.get("mitigation"),
            )
        labels = tuple(tuple(x) if isinstance(x, list) else x for x in d.get("labels", ()))
        return cls(d["kind"], np.array(d["values"], dtype=float), labels, prov, d.get("mitigation"))


def _plain(x):
    if isinstance(x, (tuple, list)):
        return [_plain(y) for y in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def matrix_distance(m: CorrelationMatrix | np.ndarray, m_star: CorrelationMatrix | np.ndarray) -> float:
    """Frobenius distance ``sqrt(tr[(M - M*)^T (M - M*)])``."""
    if isinstance(m, CorrelationMatrix) and isinstance(m_star, CorrelationMatrix) and m.kind != m_star.kind:
        raise MatrixKindError(f"cannot compare {m.kind} with {m_star.kind}")
    a = m.values if isinstance(m, CorrelationMatrix) else np.asarray(m, dtype=float)
    b = m_star.values if isinstance(m_star, CorrelationMatrix) else np.asarray(m_star, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def write_matrix_csv(m: CorrelationMatrix, path) -> None:
    labels = [str(_plain(x)).replace(",", ";") for x in m.labels]
    lines = [",".join([m.kind] + labels)]
    for lab, row in zip(labels, m.values):
        lines.append(",".join([lab] + [f"{x:.12g}" for x in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def symmetrize_min(values: Sequence[Sequence[float]]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.minimum(v, v.T)
