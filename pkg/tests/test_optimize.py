import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnetinfer.backends import StateBackend
from qnetinfer.correlation import CorrelationMatrix, MatrixKindError, matrix_distance
from qnetinfer.network import (
    assemble_global_state,
    ghz_epr_network,
    random_ghz_network,
    triangle_epr,
    triangle_ghz,
)
from qnetinfer.optimize import (
    EntryObjective,
    OptimizerConfig,
    build_matrix,
    crossfit_matrix,
    gradient,
    optimize_entry,
    optimize_objective,
    write_traces_csv,
)
from qnetinfer.qem import ShadowBackend, shadow_snapshot
from qnetinfer.qstate import DensityMatrix, apply_unitary, make_source_state, random_density, random_unitary

EPR = make_source_state("epr").density_matrix()
GHZ_EPR_U = [[2, 1, 1, 2, 2], [1, 2, 1, 2, 2], [1, 1, 2, 2, 2], [2, 2, 2, 2, 0], [2, 2, 2, 0, 2]]


def test_epr_uncertainty_reaches_zero():
    r = optimize_entry("uncertainty", EPR, (0, 1), OptimizerConfig(trials=100, steps=30))
    assert abs(r.value) < 1e-3


def test_maximally_mixed_is_flat():
    rho = DensityMatrix(np.eye(4) / 4)
    r = optimize_entry("uncertainty", rho, (0, 1), OptimizerConfig(trials=5, steps=10))
    for tr in r.traces:
        assert np.allclose(tr.costs, 2, atol=1e-6)
    assert abs(r.value - 2) < 1e-6


def test_tau2_mutual_information_can_stick():
    tau = DensityMatrix(np.diag([0.5, 0, 0, 0.5]))
    r = optimize_entry("mutualinfo", tau, (0, 1), OptimizerConfig(trials=20))
    finals = [max(t.costs) for t in r.traces]
    assert abs(r.value - 1) < 1e-2
    assert min(finals) < 0.99


def test_constant_cost_has_zero_gradient(rng):
    obj = EntryObjective("uncertainty", StateBackend(DensityMatrix(np.eye(4) / 4)), (0,), (1,))
    for _ in range(5):
        g = gradient(obj, rng.uniform(-np.pi, np.pi, (2, 3)))
        assert np.allclose(g, 0, atol=1e-12)


@pytest.mark.parametrize("cost,target,given", [
    ("uncertainty", (0,), (1,)),
    ("mutualinfo", (0,), (1,)),
    ("covariance", (0,), (1,)),
    ("vnentropy", (0, 1), ()),
    ("variance", (0,), ()),
])
def test_parameter_shift_matches_finite_differences(cost, target, given):
    rng = np.random.default_rng(11)
    rho = random_density(2, rng)
    obj = EntryObjective(cost, StateBackend(rho), target, given)
    for _ in range(20):
        th = rng.uniform(-np.pi, np.pi, (obj.n, 3))
        ps = gradient(obj, th, "parameter_shift")
        fd = gradient(obj, th, "finite_difference", h=1e-5)
        assert np.allclose(ps, fd, atol=1e-4)


def test_gradient_vanishes_at_epr_optimum():
    obj = EntryObjective("uncertainty", StateBackend(EPR), (0,), (1,))
    # identity frames reach zero uncertainty on (|00> + |11>)/sqrt(2)
    assert abs(obj.value(np.zeros((2, 3)))) < 1e-9
    assert np.linalg.norm(gradient(obj, np.zeros((2, 3)))) < 1e-6


def test_ghz_epr_shared_frame_matrices():
    net = ghz_epr_network()
    u = build_matrix("qubitwise-uncertainty", net, shared_frame=True)
    assert np.allclose(u.values, GHZ_EPR_U, atol=1e-9)
    m = build_matrix("qubitwise-characteristic", net, shared_frame=True)
    ones = np.zeros((5, 5))
    ones[:3, :3] = 1
    ones[3:, 3:] = 1
    assert np.allclose(m.values, ones, atol=1e-9)
    assert u.labels == (1, 2, 3, 4, 5)


@pytest.mark.parametrize("net", [triangle_epr(), triangle_ghz()])
def test_triangle_nodewise_uncertainty(net):
    u = build_matrix("nodewise-uncertainty", net, shared_frame=True)
    assert np.allclose(u.values, [[4, 2, 2], [2, 4, 2], [2, 2, 4]], atol=1e-9)
    assert u.labels == ("C1", "C2", "C3")


def test_nodewise_rejects_empty_node():
    with pytest.raises(ValueError):
        build_matrix("nodewise-uncertainty", EPR, groups={"a": (0,), "b": ()})


def test_distance_examples():
    m = build_matrix("nodewise-characteristic", triangle_epr(), shared_frame=True)
    assert matrix_distance(m, m) == 0
    zero = CorrelationMatrix("nodewise-characteristic", np.zeros((3, 3)))
    assert math.isclose(matrix_distance(m, zero), math.sqrt(18), abs_tol=1e-9)
    with pytest.raises(ValueError):
        matrix_distance(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(MatrixKindError):
        matrix_distance(m, CorrelationMatrix("covariance", np.zeros((3, 3))))


@given(st.integers(0, 2**32 - 1))
def test_distance_is_a_metric(seed):
    a, b, c = np.random.default_rng(seed).normal(size=(3, 4, 4))
    assert math.isclose(matrix_distance(a, b), matrix_distance(b, a))
    assert matrix_distance(a, c) <= matrix_distance(a, b) + matrix_distance(b, c) + 1e-12


def test_optimizer_absorbs_frame_rotation():
    rng = np.random.default_rng(3)
    net = ghz_epr_network()
    rho = assemble_global_state(net)
    cfg = OptimizerConfig(steps=60, trials=8)
    rotated = rho
    for q in rho.qubits:
        rotated = apply_unitary(rotated, random_unitary(rng), [q])
    for pair in [(1, 2), (4, 5), (1, 4)]:
        a = optimize_entry("uncertainty", rho, pair, cfg).value
        b = optimize_entry("uncertainty", rotated, pair, cfg).value
        assert abs(a - b) < 2e-3


def test_best_so_far_is_monotone():
    rho = random_density(2, np.random.default_rng(5))
    for cost in ("uncertainty", "mutualinfo"):
        obj = EntryObjective(cost, StateBackend(rho), (0,), (1,))
        res = optimize_objective(obj, OptimizerConfig(steps=25, trials=4))
        for tr in res.traces:
            assert len(tr) == 26
            b = tr.best_so_far(obj.maximize)
            assert (np.diff(b) <= 1e-15).all() if not obj.maximize else (np.diff(b) >= -1e-15).all()


@given(st.integers(0, 2**32 - 1))
def test_nodewise_diagonal_is_twice_node_size(seed):
    net = random_ghz_network(np.random.default_rng(seed), max_qubits=6)
    groups = {n.id: n.qubits for n in net.nodes if n.qubits}
    u = build_matrix("nodewise-uncertainty", net, shared_frame=True, groups=groups)
    sizes = [len(g) for g in groups.values()]
    assert np.allclose(np.diag(u.values), 2 * np.array(sizes), atol=1e-9)


def test_run_is_reproducible():
    cfg = OptimizerConfig(steps=5, trials=3, shots=200, seed=4)
    a = optimize_entry("uncertainty", EPR, (0, 1), cfg)
    b = optimize_entry("uncertainty", EPR, (0, 1), cfg)
    assert a.value == b.value and np.array_equal(a.trace.costs, b.trace.costs)


def test_shot_mode_reports_final_estimate():
    cfg = OptimizerConfig(steps=8, trials=2, shots=100, seed=1)
    r = optimize_entry("uncertainty", EPR, (0, 1), cfg)
    assert r.value == r.trace.costs[-1]


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(steps=0)
    with pytest.raises(ValueError):
        OptimizerConfig(step_size=-1)
    assert OptimizerConfig(step_size={"uncertainty": 0.2}).step_for("uncertainty") == 0.2
    assert OptimizerConfig(step_size=lambda k: 0.05).step_for("covariance") == 0.05
    assert OptimizerConfig(shots=10).resolved_gradient() == "finite_difference"


def test_traces_csv(tmp_path):
    m = build_matrix("covariance", EPR, OptimizerConfig(steps=3, trials=2))
    n = write_traces_csv({"covariance": m}, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    # 4 entries (mirrored off-diagonal included) x 2 trials x 4 trace points
    assert n == len(rows) - 1 == 4 * 2 * 4
    assert rows[0] == ["matrix", "step", "entry", "trial", "cost"]


def test_crossfit_on_shadow_folds():
    snap = shadow_snapshot(EPR, 4000, seed=2)
    folds = [ShadowBackend(s) for s in snap.split(2)]
    m = crossfit_matrix("qubitwise-uncertainty", folds, OptimizerConfig(steps=20, trials=3), qubits=(0, 1))
    assert m.values.shape == (2, 2)
    assert abs(m.values[0, 1]) < 0.2 and abs(m.values[0, 0] - 2) < 0.1
    with pytest.raises(ValueError):
        crossfit_matrix("covariance", folds[:1])
