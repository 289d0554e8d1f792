import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import brute_force_simplex
from qnetinfer.backends import StateBackend
from qnetinfer.experiments import noisy_pair, pair_network
from qnetinfer.measurement import MeasurementFrame, born_probabilities
from qnetinfer.optimize import EntryObjective
from qnetinfer.qem import (
    SNAPSHOT_FACTORS,
    PECBackend,
    ShadowBackend,
    VDBackend,
    pec_coefficients,
    pec_decomposition_phase_damping,
    pec_mitigated_probabilities,
    project_to_simplex,
    sd_expectation,
    sd_numerators,
    shadow_snapshot,
    vd_mitigated_pair_probabilities,
    vd_renyi2_pair,
    z_insertion_probability,
)
from qnetinfer.qem import _frame_projectors
from qnetinfer.qstate import DensityMatrix, StateError, make_source_state, random_density

EPR = make_source_state("epr").density_matrix()


def oracle_vd(rho: DensityMatrix, frame: MeasurementFrame) -> np.ndarray:
    sq = rho.data @ rho.data
    return born_probabilities(DensityMatrix(sq / np.trace(sq).real, rho.qubits), frame, rho.qubits).probs


def random_frame(qubits, rng):
    return MeasurementFrame.from_arrays(qubits, rng.uniform(-np.pi, np.pi, (len(qubits), 3)), rng.choice(["Z", "X"], len(qubits)))


# -- simplex projection ------------------------------------------------------

def test_projection_examples():
    assert np.allclose(project_to_simplex([0.6, 0.5, -0.1, 0.0]), [0.55, 0.45, 0, 0])
    assert np.allclose(project_to_simplex([2, -1]), [1, 0])
    p = np.array([0.1, 0.2, 0.7])
    assert np.allclose(project_to_simplex(p), p)
    with pytest.raises(ValueError):
        project_to_simplex([np.nan, 1])


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_projection_matches_support_enumeration(v):
    assert np.allclose(project_to_simplex(v), brute_force_simplex(np.array(v)), atol=1e-9)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_projection_is_idempotent(v):
    p = project_to_simplex(v)
    assert p.min() >= 0 and abs(p.sum() - 1) < 1e-9
    assert np.allclose(project_to_simplex(p), p)


def test_projection_beats_random_distributions():
    rng = np.random.default_rng(9)
    for _ in range(100):
        v = rng.normal(0.25, 0.5, 4)
        d = np.linalg.norm(project_to_simplex(v) - v)
        others = rng.dirichlet(np.ones(4), 1000)
        assert d <= np.linalg.norm(others - v, axis=1).min() + 1e-12


# -- PEC ---------------------------------------------------------------------

def test_pec_coefficients():
    assert pec_coefficients(0) == (1.0, 0.0)
    ci, cz = pec_coefficients(0.36)
    assert math.isclose(ci, 0.9 / 0.8) and math.isclose(cz, -0.1 / 0.8)
    assert math.isclose(z_insertion_probability(0.36), 0.1)
    with pytest.raises(StateError):
        pec_coefficients(1.0)


def test_pec_decomposition_terms():
    assert pec_decomposition_phase_damping(0.0).terms == (((False,), 1.0),)
    two = pec_decomposition_phase_damping([0.36, 0.36], (1, 2))
    assert len(two.terms) == 4
    assert math.isclose(sum(c for _, c in two.terms), 1)
    assert math.isclose(two.one_norm, (1 / 0.8) ** 2)


@pytest.mark.parametrize("gamma", [0.1, 0.3, 0.5])
def test_pec_recovers_noiseless_probabilities(gamma):
    rng = np.random.default_rng(int(gamma * 100))
    net = pair_network("phase_damping", gamma)
    for _ in range(20):
        frame = random_frame((1, 2), rng)
        p = pec_mitigated_probabilities(net, frame).probs
        ideal = born_probabilities(DensityMatrix(EPR.data, (1, 2)), frame, (1, 2)).probs
        assert np.allclose(p, ideal, atol=1e-9)


def test_pec_zero_noise_is_unmitigated():
    rng = np.random.default_rng(1)
    net = pair_network("phase_damping", 0.0)
    frame = random_frame((1, 2), rng)
    ideal = born_probabilities(DensityMatrix(EPR.data, (1, 2)), frame, (1, 2)).probs
    assert np.allclose(pec_mitigated_probabilities(net, frame).probs, ideal)


def test_pec_shot_mode_is_valid_and_close():
    net = pair_network("phase_damping", 0.4)
    frame = MeasurementFrame.uniform((1, 2), "X")
    p = pec_mitigated_probabilities(net, frame, shots=50_000, seed=3).probs
    assert p.min() >= 0 and math.isclose(p.sum(), 1)
    assert np.abs(p - [0.5, 0, 0, 0.5]).max() < 0.02


def test_pec_rejects_other_channels():
    with pytest.raises(ValueError):
        PECBackend(pair_network("depolarizing", 0.1))


def test_unmitigated_phase_damping_value():
    obj = EntryObjective("uncertainty", StateBackend(noisy_pair("epr", "phase_damping", 0.2)), (0,), (1,))
    assert abs(obj.value(np.zeros((2, 3))) - 0.4690) < 1e-4


# -- VD ----------------------------------------------------------------------

def test_vd_matches_squared_state_oracle():
    rng = np.random.default_rng(30)
    for _ in range(30):
        rho = random_density(2, rng)
        frame = random_frame(rho.qubits, rng)
        assert np.allclose(vd_mitigated_pair_probabilities(rho, frame).probs, oracle_vd(rho, frame), atol=1e-9)


def test_vd_single_qubit_oracle(rng):
    rho = random_density(1, rng)
    frame = random_frame(rho.qubits, rng)
    assert np.allclose(vd_mitigated_pair_probabilities(rho, frame).probs, oracle_vd(rho, frame), atol=1e-9)


def test_vd_pure_state_unchanged(rng):
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    rho = DensityMatrix(np.outer(psi, psi.conj()))
    frame = random_frame(rho.qubits, rng)
    assert np.allclose(vd_mitigated_pair_probabilities(rho, frame).probs, born_probabilities(rho, frame, rho.qubits).probs)


def test_vd_depolarized_epr_against_oracle():
    rho = noisy_pair("epr", "depolarizing", 0.2)
    frame = MeasurementFrame.uniform(rho.qubits, "X")
    assert np.allclose(vd_mitigated_pair_probabilities(rho, frame).probs, oracle_vd(rho, frame))


def test_vd_shot_mode_converges():
    rho = noisy_pair("epr", "depolarizing", 0.2)
    frame = MeasurementFrame.uniform(rho.qubits)
    p = vd_mitigated_pair_probabilities(rho, frame, shots=200_000, seed=1).probs
    assert np.abs(p - oracle_vd(rho, frame)).max() < 0.01


def test_vd_never_hurts_depolarized_epr():
    th = np.zeros((2, 3))
    for g in np.round(np.arange(0, 0.501, 0.01), 2):
        rho = noisy_pair("epr", "depolarizing", float(g))
        raw = EntryObjective("uncertainty", StateBackend(rho), (0,), (1,)).value(th)
        vd = EntryObjective("uncertainty", VDBackend(rho), (0,), (1,)).value(th)
        assert vd <= raw + 1e-9


def test_vd_rejects_large_subsets():
    with pytest.raises(ValueError):
        VDBackend(random_density(3, np.random.default_rng(0))).reduced((0, 1, 2))
    with pytest.raises(ValueError):
        VDBackend(EPR, b_fraction=1.0)


def test_renyi_examples():
    r = vd_renyi2_pair(EPR)
    assert abs(r.s2_pair) < 1e-9 and abs(r.s2_first - 1) < 1e-9 and r.entangled
    tau = vd_renyi2_pair(DensityMatrix(np.diag([0.5, 0, 0, 0.5])))
    assert math.isclose(tau.s2_pair, 1) and math.isclose(tau.s2_first, 1) and not tau.entangled
    mixed = vd_renyi2_pair(DensityMatrix(np.eye(4) / 4))
    assert math.isclose(mixed.s2_pair, 2) and not mixed.entangled


# -- shadows -----------------------------------------------------------------

def test_snapshot_factor_for_z_outcome_zero():
    assert np.allclose(SNAPSHOT_FACTORS[0], np.diag([2, -1]))


def test_snapshot_factors_spectrum():
    for f in SNAPSHOT_FACTORS:
        assert math.isclose(np.trace(f).real, 1)
        assert np.allclose(np.linalg.eigvalsh(f), [-1, 2])


def test_snapshot_mean_is_unbiased():
    rng = np.random.default_rng(77)
    s = shadow_snapshot(DensityMatrix(np.eye(2) / 2), 100_000, seed=0)
    assert np.abs(s.mean_state() - np.eye(2) / 2).max() < 0.02
    for k in range(5):
        rho = random_density(2, rng)
        s = shadow_snapshot(rho, 100_000, seed=k)
        assert np.abs(s.mean_state() - rho.data).max() < 0.03


def test_mean_state_matches_explicit_factors():
    s = shadow_snapshot(random_density(2, np.random.default_rng(4)), 50, seed=1)
    explicit = np.mean([s.factor(t) for t in range(len(s))], axis=0)
    assert np.allclose(s.mean_state(), explicit)


def brute_numerators(snap, subset, thetas, bases):
    mats = [snap.factor(t, subset) for t in range(len(snap))]
    proj = _frame_projectors(thetas[None], bases)[0]
    m = len(subset)
    out = np.zeros(2**m)
    for a in range(2**m):
        pi = np.ones((1, 1))
        for k in range(m):
            pi = np.kron(pi, proj[k, (a >> (m - 1 - k)) & 1])
        for s in range(len(mats)):
            for t in range(len(mats)):
                if s != t:
                    out[a] += np.trace(pi @ mats[s] @ mats[t]).real
    return out


@pytest.mark.parametrize("subset", [(0,), (0, 1), (2, 0), (0, 1, 2)])
def test_sd_numerators_match_pair_sum(subset):
    rng = np.random.default_rng(len(subset))
    snap = shadow_snapshot(random_density(3, rng), 25, seed=5)
    thetas = rng.uniform(-np.pi, np.pi, (len(subset), 3))
    bases = list(rng.choice(["Z", "X"], len(subset)))
    got = sd_numerators(snap, subset, _frame_projectors(thetas[None], bases))[0]
    assert np.allclose(got, brute_numerators(snap, subset, thetas, bases), atol=1e-8)


def test_sd_backend_agrees_with_sd_expectation():
    snap = shadow_snapshot(noisy_pair("epr", "depolarizing", 0.1), 60, seed=2)
    be = ShadowBackend(snap)
    p = be.exact_batch((0, 1), np.zeros((1, 2, 3)), ("Z", "Z"))[0]
    ev = [sd_expectation(np.diag(np.eye(4)[a]), snap, (0, 1)) for a in range(4)]
    raw = np.array(ev)
    expected = raw if raw.min() >= 0 else project_to_simplex(raw)
    assert np.allclose(p, expected, atol=1e-9)


def test_projector_and_pauli_routes_agree():
    snap = shadow_snapshot(noisy_pair("epr", "depolarizing", 0.1), 2000, seed=8)
    th = np.random.default_rng(0).uniform(-np.pi, np.pi, (4, 2, 3))
    a = ShadowBackend(snap).exact_batch((0, 1), th, ("X", "Z"))
    b = ShadowBackend(snap, route="pauli").exact_batch((0, 1), th, ("X", "Z"))
    assert np.allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        ShadowBackend(snap, route="median")


def test_sd_denominator_error():
    snap = shadow_snapshot(EPR, 1, seed=0)
    with pytest.raises(FloatingPointError):
        ShadowBackend(snap).exact_batch((0, 1), np.zeros((1, 2, 3)), ("Z", "Z"))


def test_split_is_disjoint_and_complete():
    snap = shadow_snapshot(EPR, 101, seed=0)
    parts = snap.split(2)
    assert [len(p) for p in parts] == [50, 51]
    assert np.array_equal(np.concatenate([p.bits for p in parts]), snap.bits)
