"""Declarative quantum networks: sources, nodes, per-qubit noise and frame misalignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .qstate import (
    DensityMatrix,
    apply_channel,
    apply_unitary,
    euler_zyz,
    make_source_state,
    reorder,
    standard_channel,
)

log = logging.getLogger(__name__)

GHZ_KINDS = ("ghz", "epr")


class TopologyError(ValueError):
    """Structurally malformed network description."""


class AssumptionViolation(ValueError):
    """Raised when a network breaks an enabled modelling assumption."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Source:
    id: str
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def state(self):
        n = len(self.qubits)
        return make_source_state(self.kind, None if self.kind == "gepr" else n, self.angle)


@dataclass(frozen=True)
class Node:
    id: str
    qubits: tuple[int, ...]


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    param: float

    def kraus(self):
        return standard_channel(self.name, self.param)


@dataclass(frozen=True)
class NetworkTopology:
    sources: tuple[Source, ...]
    nodes: tuple[Node, ...]
    noise: Mapping[int, ChannelSpec] = field(default_factory=dict)
    misalignment: Mapping[int, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def qubits(self) -> tuple[int, ...]:
        return tuple(sorted(q for s in self.sources for q in s.qubits))

    def source_of(self, qubit: int) -> Source:
        for s in self.sources:
            if qubit in s.qubits:
                return s
        raise TopologyError(f"qubit {qubit} belongs to no source")

    def node_of(self, qubit: int) -> Node:
        for n in self.nodes:
            if qubit in n.qubits:
                return n
        raise TopologyError(f"qubit {qubit} belongs to no node")

    def node_assignment(self) -> dict[int, str]:
        return {q: n.id for n in self.nodes for q in n.qubits}

    def links(self) -> set[tuple[str, str, int]]:
        """``(source id, node id, qubit)`` triples induced by membership."""
        where = self.node_assignment()
        return {(s.id, where[q], q) for s in self.sources for q in s.qubits if q in where}

    def incidence(self) -> np.ndarray:
        """Sources x nodes matrix counting the qubits each source sends to each node."""
        col = {n.id: k for k, n in enumerate(self.nodes)}
        where = self.node_assignment()
        m = np.zeros((len(self.sources), len(self.nodes)), dtype=int)
        for r, s in enumerate(self.sources):
            for q in s.qubits:
                m[r, col[where[q]]] += 1
        return m

    def with_noise(self, noise: Mapping[int, ChannelSpec]) -> "NetworkTopology":
        return NetworkTopology(self.sources, self.nodes, dict(noise), dict(self.misalignment))

    def with_misalignment(self, misalignment: Mapping[int, Sequence[float]]) -> "NetworkTopology":
        mis = {int(q): tuple(float(t) for t in a) for q, a in misalignment.items()}
        return NetworkTopology(self.sources, self.nodes, dict(self.noise), mis)

    # ------------------------------------------------------------------ I/O

    def to_dict(self) -> dict[str, Any]:
        def src(s: Source):
            d = {"id": s.id, "kind": s.kind, "qubits": list(s.qubits)}
            if s.angle is not None:
                d["angle"] = float(s.angle)
            return d

        return {
            "sources": [src(s) for s in self.sources],
            "nodes": [{"id": n.id, "qubits": list(n.qubits)} for n in self.nodes],
            "noise": {int(q): {"channel": c.name, "param": float(c.param)} for q, c in sorted(self.noise.items())},
            "misalignment": {int(q): [float(t) for t in a] for q, a in sorted(self.misalignment.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NetworkTopology":
        unknown = set(d) - {"sources", "nodes", "noise", "misalignment"}
        if unknown:
            raise TopologyError(f"unknown config sections {sorted(unknown)}")
        try:
            sources = tuple(
                Source(str(s["id"]), str(s["kind"]).lower(), tuple(int(q) for q in s["qubits"]), s.get("angle"))
                for s in d["sources"]
            )
            nodes = tuple(Node(str(n["id"]), tuple(int(q) for q in n["qubits"])) for n in d["nodes"])
            noise = {int(q): ChannelSpec(str(c["channel"]), float(c["param"])) for q, c in (d.get("noise") or {}).items()}
            mis = {int(q): tuple(float(t) for t in a) for q, a in (d.get("misalignment") or {}).items()}
        except (KeyError, TypeError, ValueError) as e:
            raise TopologyError(f"malformed network config: {e!r}") from e
        if any(len(a) != 3 for a in mis.values()):
            raise TopologyError("misalignment entries need three angles")
        return cls(sources, nodes, noise, mis)


def load_network(path) -> NetworkTopology:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise TopologyError(f"{path}: expected a mapping at the top level")
    return NetworkTopology.from_dict(data)


def save_network(topology: NetworkTopology, path) -> None:
    Path(path).write_text(yaml.safe_dump(topology.to_dict(), sort_keys=False))


# --------------------------------------------------------------------------
# Assumptions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionProfile:
    ghz_only: bool = True  # (A)
    one_qubit_per_node: bool = True  # (B)
    local_measurements: bool = True  # (C)
    one_shared_source: bool = False  # (D)

    @classmethod
    def all(cls) -> "AssumptionProfile":
        return cls(True, True, True, True)

    @classmethod
    def none(cls) -> "AssumptionProfile":
        return cls(False, False, False, False)


@dataclass(frozen=True)
class Violation:
    assumption: str
    message: str
    ids: tuple = ()

    def __str__(self):
        return f"({self.assumption}) {self.message}"


def check_structure(topology: NetworkTopology) -> None:
    owners: dict[int, list[str]] = {}
    for s in topology.sources:
        if not s.qubits:
            raise TopologyError(f"source {s.id} distributes no qubits")
        if s.kind not in ("ghz", "epr", "w", "gepr"):
            raise TopologyError(f"source {s.id} has unknown kind {s.kind!r}")
        if s.kind in ("epr", "gepr") and len(s.qubits) != 2:
            raise TopologyError(f"source {s.id} of kind {s.kind} must have two qubits")
        if s.kind in ("ghz", "w") and len(s.qubits) < 2:
            raise TopologyError(f"source {s.id} needs at least two qubits")
        for q in s.qubits:
            owners.setdefault(q, []).append(s.id)
    held: dict[int, list[str]] = {}
    for n in topology.nodes:
        for q in n.qubits:
            held.setdefault(q, []).append(n.id)
    for q, ids in owners.items():
        if len(ids) > 1:
            raise TopologyError(f"qubit {q} belongs to several sources {ids}")
    for q, ids in held.items():
        if len(ids) > 1:
            raise TopologyError(f"qubit {q} is sent to several nodes {ids}")
    dangling = set(owners) ^ set(held)
    if dangling:
        raise TopologyError(f"dangling qubits {sorted(dangling)} (need exactly one source and one node each)")
    extra = (set(topology.noise) | set(topology.misalignment)) - set(owners)
    if extra:
        raise TopologyError(f"noise or misalignment declared for unknown qubits {sorted(extra)}")


def validate(topology: NetworkTopology, profile: AssumptionProfile = AssumptionProfile()) -> list[Violation]:
    """Assumption violations of ``topology``; raises :class:`TopologyError` if it is malformed."""
    check_structure(topology)
    out: list[Violation] = []
    if profile.ghz_only:
        for s in topology.sources:
            if s.kind not in GHZ_KINDS:
                out.append(Violation("A", f"source {s.id} distributes a {s.kind} state, not GHZ", (s.id,)))
    where = topology.node_assignment()
    if profile.one_qubit_per_node:
        for s in topology.sources:
            nodes = [where[q] for q in s.qubits]
            for n in sorted(set(nodes)):
                if nodes.count(n) > 1:
                    out.append(Violation("B", f"source {s.id} sends {nodes.count(n)} qubits to node {n}", (s.id, n)))
    # (C) holds by construction: every node measures each of its qubits locally.
    if profile.one_shared_source:
        inc = topology.incidence() > 0
        ids = [n.id for n in topology.nodes]
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                shared = int((inc[:, a] & inc[:, b]).sum())
                if shared > 1:
                    out.append(Violation("D", f"nodes {ids[a]} and {ids[b]} share {shared} sources", (ids[a], ids[b])))
    return out


# --------------------------------------------------------------------------
# State assembly
# --------------------------------------------------------------------------

def source_product_state(topology: NetworkTopology) -> DensityMatrix:
    """Noiseless global state, with the register sorted by qubit id."""
    data = np.ones((1, 1), dtype=complex)
    order: list[int] = []
    for s in topology.sources:
        psi = s.state().amplitudes
        data = np.kron(data, np.outer(psi, psi.conj()))
        order.extend(s.qubits)
    return reorder(DensityMatrix(data, order, check=False), sorted(order))


def apply_noise(rho: DensityMatrix, noise: Mapping[int, ChannelSpec]) -> DensityMatrix:
    for q, spec in sorted(noise.items()):
        rho = apply_channel(rho, spec.kraus(), [q])
    return rho


def apply_misalignment(rho: DensityMatrix, misalignment: Mapping[int, Sequence[float]]) -> DensityMatrix:
    for q, angles in sorted(misalignment.items()):
        if q in rho.qubits:
            rho = apply_unitary(rho, euler_zyz(angles), [q])
    return rho


def assemble_global_state(topology: NetworkTopology, profile: AssumptionProfile | None = None) -> DensityMatrix:
    """Sources in qubit-id order, then per-qubit noise, then frame misalignment."""
    if profile is not None:
        bad = validate(topology, profile)
        if bad:
            raise AssumptionViolation(bad)
    else:
        check_structure(topology)
    for s in topology.sources:
        if s.kind not in GHZ_KINDS:
            log.warning("source %s uses non-GHZ kind %s", s.id, s.kind)
    rho = apply_noise(source_product_state(topology), topology.noise)
    rho = apply_misalignment(rho, topology.misalignment)
    return DensityMatrix(rho.data, rho.qubits)


# --------------------------------------------------------------------------
# Topology equivalence
# --------------------------------------------------------------------------

def topology_equal(a: NetworkTopology, b: NetworkTopology) -> bool:
    """Whether some relabelling of sources, nodes and qubits maps a's links onto b's.

    Equivalent to isomorphism of the source-by-node incidence multigraphs.
    """
    return incidence_isomorphic(a.incidence(), b.incidence())


def incidence_isomorphic(ma: np.ndarray, mb: np.ndarray) -> bool:
    if ma.shape != mb.shape:
        return False
    if sorted(map(tuple, np.sort(ma, axis=1))) != sorted(map(tuple, np.sort(mb, axis=1))):
        return False
    if sorted(map(tuple, np.sort(ma, axis=0).T)) != sorted(map(tuple, np.sort(mb, axis=0).T)):
        return False
    n_cols = ma.shape[1]
    col_sig_a = [tuple(sorted(ma[:, c])) for c in range(n_cols)]
    col_sig_b = [tuple(sorted(mb[:, c])) for c in range(n_cols)]

    def rows(m, cols):
        return sorted(map(tuple, m[:, cols]))

    def extend(mapped_a: list[int], mapped_b: list[int]) -> bool:
        k = len(mapped_a)
        if k == n_cols:
            return True
        ca = k
        for cb in range(n_cols):
            if cb in mapped_b or col_sig_a[ca] != col_sig_b[cb]:
                continue
            if rows(ma, mapped_a + [ca]) == rows(mb, mapped_b + [cb]) and extend(mapped_a + [ca], mapped_b + [cb]):
                return True
        return False

    return extend([], [])


# --------------------------------------------------------------------------
# Networks used throughout the literature on this problem
# --------------------------------------------------------------------------

def _nodes(assign: Mapping[str, Iterable[int]]) -> tuple[Node, ...]:
    return tuple(Node(k, tuple(v)) for k, v in assign.items())


def ghz_epr_network() -> NetworkTopology:
    """Five qubits: a three-qubit GHZ source (1, 2, 3) and an EPR source (4, 5), one qubit per node."""
    return NetworkTopology(
        (Source("A1", "ghz", (1, 2, 3)), Source("A2", "epr", (4, 5))),
        _nodes({f"C{q}": (q,) for q in range(1, 6)}),
    )


def ghz_epr_partitioned() -> NetworkTopology:
    """The five-qubit network with nodes {1, 4}, {2, 5}, {3}."""
    return NetworkTopology(
        (Source("A1", "ghz", (1, 2, 3)), Source("A2", "epr", (4, 5))),
        _nodes({"C1": (1, 4), "C2": (2, 5), "C3": (3,)}),
    )


def triangle_epr() -> NetworkTopology:
    """Three nodes pairwise linked by three EPR sources."""
    return NetworkTopology(
        (Source("A1", "epr", (1, 3)), Source("A2", "epr", (4, 5)), Source("A3", "epr", (6, 2))),
        _nodes({"C1": (1, 2), "C2": (3, 4), "C3": (5, 6)}),
    )


def triangle_ghz() -> NetworkTopology:
    """Three nodes sharing two tripartite GHZ sources."""
    return NetworkTopology(
        (Source("A1", "ghz", (1, 3, 5)), Source("A2", "ghz", (2, 4, 6))),
        _nodes({"C1": (1, 2), "C2": (3, 4), "C3": (5, 6)}),
    )


def w_gepr_network(angle: float = np.pi / 8) -> NetworkTopology:
    """A three-qubit W source (1, 2, 3) and a generalized EPR source (4, 5)."""
    return NetworkTopology(
        (Source("A1", "w", (1, 2, 3)), Source("A2", "gepr", (4, 5), angle)),
        _nodes({f"C{q}": (q,) for q in range(1, 6)}),
    )


def depolarized_ghz_epr_network() -> NetworkTopology:
    noise = {q: ChannelSpec("depolarizing", 0.2) for q in (1, 2, 4)}
    noise.update({q: ChannelSpec("depolarizing", 0.1) for q in (3, 5)})
    return ghz_epr_network().with_noise(noise)


def depolarized_triangle(gammas=(0.05, 0.10, 0.15)) -> NetworkTopology:
    """EPR triangle whose qubits at node C_k depolarize with ``gammas[k]``."""
    net = triangle_epr()
    noise = {q: ChannelSpec("depolarizing", g) for node, g in zip(net.nodes, gammas) for q in node.qubits}
    return net.with_noise(noise)


def random_ghz_network(
    rng: np.random.Generator, max_qubits: int = 10, max_sources: int = 5, max_nodes: int = 6
) -> NetworkTopology:
    """Random GHZ-only network; every source sends at most one qubit to any node."""
    while True:
        n_sources = int(rng.integers(1, max_sources + 1))
        n_nodes = int(rng.integers(2, max_nodes + 1))
        sizes = [int(rng.integers(2, n_nodes + 1)) for _ in range(n_sources)]
        if sum(sizes) <= max_qubits:
            break
    sources, members = [], {f"C{k + 1}": [] for k in range(n_nodes)}
    q = 1
    for a, m in enumerate(sizes):
        qubits = tuple(range(q, q + m))
        q += m
        sources.append(Source(f"A{a + 1}", "epr" if m == 2 else "ghz", qubits))
        for qubit, node in zip(qubits, rng.choice(n_nodes, size=m, replace=False)):
            members[f"C{node + 1}"].append(qubit)
    return NetworkTopology(tuple(sources), _nodes(members))
