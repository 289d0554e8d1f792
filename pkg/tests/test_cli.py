import subprocess
from pathlib import Path

import numpy as np
import pytest
import yaml

from qnetinfer.cli import ExperimentSpec, SpecError, build_parser, main, spec_from_args
from qnetinfer.correlation import CorrelationMatrix
from qnetinfer.network import NetworkTopology, Node, Source, save_network, triangle_ghz

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = ["--trials", "2", "--steps", "10"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_infer_report(tmp_path):
    assert run(tmp_path, "infer", "--config", str(CONFIGS / "ghz_epr_5q.yaml"), *FAST) == 0
    rep = yaml.safe_load((tmp_path / "report.yaml").read_text())
    assert [s["qubits"] for s in rep["inferred"]["sources"]] == [[1, 2, 3], [4, 5]]
    assert [s["kind"] for s in rep["inferred"]["sources"]] == ["ghz", "epr"]
    assert rep["distill_lb"]["4-5"] == pytest.approx(1, abs=1e-3)


def test_census(tmp_path):
    assert run(tmp_path, "census", "--config", str(CONFIGS / "ghz_epr_partitioned.yaml"), "--shared-frame") == 0
    out = yaml.safe_load((tmp_path / "census.yaml").read_text())
    assert out["census"] == {"n_epr": 1, "n_3ghz": 1, "n_4ghz": 0}
    assert out["hardened"] is False


def test_matrix_yaml_round_trip(tmp_path):
    assert run(tmp_path, "build-matrices", "--config", str(CONFIGS / "triangle_epr.yaml"), "--shared-frame",
               "--kinds", "nodewise-uncertainty,covariance") == 0
    m = CorrelationMatrix.from_dict(yaml.safe_load((tmp_path / "nodewise-uncertainty.yaml").read_text()))
    assert m.check_invariants() == []
    assert np.allclose(m.values, [[4, 2, 2], [2, 4, 2], [2, 2, 4]])
    assert (tmp_path / "covariance.csv").exists()


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["optimize-traces", "--config", str(CONFIGS / "triangle_epr.yaml"), "--shots", "200", "--seed", "3", *FAST]
    assert run(a, *args) == 0 and run(b, *args) == 0
    for name in ("traces.csv", "qubitwise-uncertainty.yaml", "qubitwise-uncertainty.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sweep_noise(tmp_path):
    assert run(tmp_path, "sweep-noise", "--gammas", "0.1,0.5", "--costs", "uncertainty", *FAST) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "gamma,uncertainty,uncertainty_theory" and len(lines) == 3


def test_missing_config_is_bad_input(tmp_path):
    assert run(tmp_path, "infer", "--config", str(tmp_path / "nope.yaml")) == 1
    assert run(tmp_path, "infer") == 1


def test_malformed_config_is_bad_input(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("sources: [\n")
    assert run(tmp_path, "infer", "--config", str(p)) == 1


def test_incompatible_options_are_bad_input(tmp_path):
    cfg = str(CONFIGS / "triangle_epr.yaml")
    assert run(tmp_path, "census", "--config", cfg, "--qem", "vd") == 1
    assert run(tmp_path, "qem-compare") == 1
    assert run(tmp_path, "qem-compare", "--qem", "pec", "--channel", "depolarizing") == 1
    assert run(tmp_path, "build-matrices", "--config", cfg, "--kinds", "nope") == 1
    assert run(tmp_path, "build-matrices", "--config", cfg, "--steps", "0") == 1


def test_assumption_violation_exit(tmp_path):
    assert run(tmp_path, "infer", "--config", str(CONFIGS / "w_gepr.yaml"), *FAST) == 2
    p = tmp_path / "double.yaml"
    save_network(NetworkTopology((Source("A", "ghz", (1, 2, 3)),), (Node("C1", (1, 2)), Node("C2", (3,)))), p)
    assert run(tmp_path, "census", "--config", str(p), "--shared-frame") == 2
    assert run(tmp_path, "census", "--config", str(p), "--shared-frame", "--no-check") == 0


def test_ghz_triangle_census(tmp_path):
    p = tmp_path / "ghz_triangle.yaml"
    save_network(triangle_ghz(), p)
    assert run(tmp_path, "census", "--config", str(p), "--shared-frame") == 0
    out = yaml.safe_load((tmp_path / "census.yaml").read_text())
    assert out["census"] == {"n_epr": 0, "n_3ghz": 2, "n_4ghz": 0}


def test_numeric_failure_exit(tmp_path):
    # plain counting on shot-noise matrices fails its integer cross-check
    assert run(tmp_path, "census", "--config", str(CONFIGS / "triangle_epr.yaml"), "--shots", "100",
               "--no-hardened", *FAST) == 3


def test_noisy_census_defaults_to_hardened(tmp_path):
    assert run(tmp_path, "census", "--config", str(CONFIGS / "triangle_epr.yaml"), "--shots", "2000", *FAST) == 0
    out = yaml.safe_load((tmp_path / "census.yaml").read_text())
    assert out["hardened"] is True and "census" not in out
    assert set(out["pairs"]) == {"C1-C2", "C1-C3", "C2-C3"}
    assert all("H_i" in row and "n_epr" in row for row in out["pairs"].values())


def test_step_size_parsing():
    ns = build_parser().parse_args(["infer", "--config", "x", "--step-size", "uncertainty=0.2,covariance=0.1"])
    spec = spec_from_args(ns)
    assert spec.optimizer.step_for("uncertainty") == 0.2 and spec.optimizer.step_for("mutualinfo") == 0.25


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("QNETINFER_THREADS", "3")
    assert spec_from_args(build_parser().parse_args(["sweep-noise"])).threads == 3


def test_spec_validation():
    with pytest.raises(SpecError):
        ExperimentSpec("infer").validate()
    with pytest.raises(SpecError):
        ExperimentSpec("sweep-noise", qem="sd").validate()
    ExperimentSpec("sweep-noise").validate()


def test_console_script_usage_error():
    r = subprocess.run(["qnetinfer", "infer", "--bogus"], capture_output=True, text=True)
    assert r.returncode == 1 and "unrecognized" in r.stderr


def test_mitigated_bounds_are_labelled(tmp_path):
    assert run(tmp_path, "infer", "--config", str(CONFIGS / "ghz_epr_5q_depolarized.yaml"), "--qem", "vd", *FAST) == 0
    rep = yaml.safe_load((tmp_path / "report.yaml").read_text())
    assert rep["raw"]["distill_lb_scope"] == "statistics"
    assert any("mitigated statistics" in w for w in rep["warnings"])


def test_vd_infer_needs_single_qubit_nodes(tmp_path):
    assert run(tmp_path, "infer", "--config", str(CONFIGS / "ghz_epr_partitioned.yaml"), "--qem", "vd") == 1
