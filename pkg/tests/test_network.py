import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnetinfer.network import (
    AssumptionProfile,
    AssumptionViolation,
    ChannelSpec,
    NetworkTopology,
    Node,
    Source,
    TopologyError,
    assemble_global_state,
    depolarized_ghz_epr_network,
    ghz_epr_network,
    load_network,
    random_ghz_network,
    save_network,
    topology_equal,
    triangle_epr,
    triangle_ghz,
    validate,
    w_gepr_network,
)
from qnetinfer.qstate import make_source_state, partial_trace, validate_density


def brute_equal(a: NetworkTopology, b: NetworkTopology) -> bool:
    ma, mb = a.incidence(), b.incidence()
    if ma.shape != mb.shape:
        return False
    for rows in itertools.permutations(range(ma.shape[0])):
        for cols in itertools.permutations(range(ma.shape[1])):
            if np.array_equal(ma[list(rows)][:, list(cols)], mb):
                return True
    return False


def relabel(t: NetworkTopology, rng) -> NetworkTopology:
    """Same network with shuffled source, node and qubit ids."""
    qs = list(t.qubits)
    new = dict(zip(qs, rng.permutation(qs) + 100))
    src = [Source(f"S{k}", s.kind, tuple(int(new[q]) for q in s.qubits), s.angle) for k, s in enumerate(t.sources)]
    nodes = [Node(f"N{k}", tuple(int(new[q]) for q in n.qubits)) for k, n in enumerate(t.nodes)]
    return NetworkTopology(
        tuple(src[i] for i in rng.permutation(len(src))), tuple(nodes[i] for i in rng.permutation(len(nodes)))
    )


def small_network(seed):
    return random_ghz_network(np.random.default_rng(seed), max_qubits=7, max_sources=3, max_nodes=4)


def test_triangle_satisfies_everything():
    assert validate(triangle_epr(), AssumptionProfile.all()) == []


def test_ghz_triangle_breaks_d():
    v = validate(triangle_ghz(), AssumptionProfile.all())
    assert v and all(x.assumption == "D" for x in v) and len(v) == 3


def test_two_qubits_to_one_node_breaks_b():
    t = NetworkTopology((Source("A", "ghz", (1, 2, 3)),), (Node("C1", (1, 2)), Node("C2", (3,))))
    v = validate(t)
    assert [x.assumption for x in v] == ["B"]
    assert "A" in v[0].ids and "C1" in v[0].ids


def test_non_ghz_kinds_flagged_under_a():
    assert {x.assumption for x in validate(w_gepr_network())} == {"A"}
    assert validate(w_gepr_network(), AssumptionProfile.none()) == []


def test_dangling_qubit_is_structural():
    t = NetworkTopology((Source("A", "epr", (1, 2)),), (Node("C1", (1,)),))
    with pytest.raises(TopologyError):
        validate(t)


def test_assumption_violation_carries_list():
    e = AssumptionViolation(validate(triangle_ghz(), AssumptionProfile.all()))
    assert len(e.violations) == 3 and "(D)" in str(e)


def test_assemble_five_qubit_network():
    rho = assemble_global_state(ghz_epr_network())
    assert rho.dim == 32 and rho.qubits == (1, 2, 3, 4, 5)
    ghz = make_source_state("ghz", 3).amplitudes
    epr = make_source_state("epr").amplitudes
    psi = np.kron(ghz, epr)
    assert np.allclose(rho.data, np.outer(psi, psi.conj()))


def test_assemble_triangle():
    rho = assemble_global_state(triangle_epr())
    epr = make_source_state("epr").density_matrix().data
    for pair in ((1, 3), (4, 5), (2, 6)):
        assert np.allclose(partial_trace(rho, pair).data, epr)


def test_assemble_applies_noise():
    rho = assemble_global_state(depolarized_ghz_epr_network())
    r45 = partial_trace(rho, (4, 5)).data
    epr = make_source_state("epr").density_matrix().data
    # depolarizing with gamma scales the Bloch/correlation components by 1 - 4 gamma / 3
    zz = np.diag([1, -1, -1, 1])
    assert np.isclose(np.trace(r45 @ zz).real, (1 - 0.8 / 3) * (1 - 0.4 / 3))
    assert not np.allclose(r45, epr)


def test_misalignment_applied_after_noise():
    t = NetworkTopology((Source("A", "epr", (1, 2)),), (Node("C1", (1,)), Node("C2", (2,))))
    rot = t.with_noise({1: ChannelSpec("phase_damping", 0.5)}).with_misalignment({1: (0.0, np.pi, 0.0)})
    rho = assemble_global_state(rot)
    # Ry(pi) maps |0> to |1>, so Z correlations flip sign
    zz = np.diag([1, -1, -1, 1])
    assert np.isclose(np.trace(rho.data @ zz).real, -1)


def test_config_roundtrip(tmp_path):
    for t in (depolarized_ghz_epr_network(), w_gepr_network(), triangle_ghz()):
        p = tmp_path / "net.yaml"
        save_network(t, p)
        back = load_network(p)
        assert back == t


def test_config_rejects_unknown_sections(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("sources: []\nnodes: []\nlinks: []\n")
    with pytest.raises(TopologyError):
        load_network(p)
    p.write_text("sources:\n- id: A\n  qubits: [1, 2]\nnodes: []\n")
    with pytest.raises(TopologyError):
        load_network(p)


def test_topology_equal_examples():
    t = ghz_epr_network()
    assert topology_equal(t, relabel(t, np.random.default_rng(0)))
    assert not topology_equal(triangle_epr(), triangle_ghz())
    swapped = NetworkTopology(
        (Source("A2", "epr", (1, 2)), Source("A1", "ghz", (3, 4, 5))), tuple(Node(f"C{q}", (q,)) for q in range(1, 6))
    )
    assert topology_equal(t, swapped)


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_topology_equal_matches_brute_force(s1, s2):
    a, b = small_network(s1), small_network(s2)
    assert topology_equal(a, b) == brute_equal(a, b)
    assert topology_equal(a, relabel(a, np.random.default_rng(s2)))


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_topology_equal_is_an_equivalence(s1, s2, s3):
    a, b, c = small_network(s1), small_network(s2), small_network(s3)
    assert topology_equal(a, a)
    assert topology_equal(a, b) == topology_equal(b, a)
    if topology_equal(a, b) and topology_equal(b, c):
        assert topology_equal(a, c)


@given(st.integers(0, 2**32 - 1))
def test_random_noisy_networks_assemble_to_states(seed):
    r = np.random.default_rng(seed)
    t = random_ghz_network(r, max_qubits=6)
    noise = {}
    for q in t.qubits:
        if r.random() < 0.5:
            noise[q] = ChannelSpec("phase_damping", float(r.uniform(0, 1)))
        else:
            noise[q] = ChannelSpec("depolarizing", float(r.uniform(0, 0.75)))
    rho = assemble_global_state(t.with_noise(noise))
    validate_density(rho.data)


@given(st.integers(0, 2**32 - 1))
def test_single_qubit_marginals_maximally_mixed(seed):
    t = random_ghz_network(np.random.default_rng(seed), max_qubits=7)
    rho = assemble_global_state(t)
    for q in t.qubits:
        assert np.allclose(partial_trace(rho, (q,)).data, np.eye(2) / 2)
