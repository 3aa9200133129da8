from __future__ import annotations

import json

import pytest

from ginigrad.cli import main, read_csv
from ginigrad.grid import DensityField, Grid

SMALL = {
    "grid": {"n_cells": 120},
    "abm": {"n_agents": 200, "T": 0.5, "record_every": 5, "n_seeds": 2},
    "pde": {"T": 0.5, "snapshot_every": 1},
    "fuzz": {"n_trials": 5},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def pde_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pde")
    cfg = tmp / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp / "run"), "--quiet"]) == 0
    return tmp / "run"


def report(out):
    rep = json.loads((out / "report.json").read_text())
    assert set(rep) == {"command", "config", "results", "pass"}
    return rep


def test_simulate_abm_writes_artifacts(tmp_path, cfg_path):
    out = tmp_path / "abm"
    assert main(["simulate-abm", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    for name in ("manifest.json", "config.json", "report.json", "abm.csv", "abm_seed001.csv", "abm_ensemble.csv"):
        assert (out / name).is_file()
    rep = report(out)
    assert rep["command"] == "simulate-abm" and rep["pass"] is True
    assert len(rep["results"]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])
    header, data = read_csv(out / "abm.csv")
    assert header == ["t", "gini", "min_wealth", "total_wealth"]
    assert data[-1, 0] == pytest.approx(0.5)


def test_seed_override_changes_result(tmp_path, cfg_path):
    runs = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert main(["simulate-abm", "--config", str(cfg_path), "--out", str(out), "--seed", str(seed), "--quiet"]) == 0
        runs.append((out / "abm.csv").read_bytes())
        assert report(out)["config"]["seed"] == seed
    assert runs[0] != runs[1]


def test_solve_pde_rerun_is_byte_identical(tmp_path, pde_dir):
    rep = report(pde_dir)
    assert rep["pass"] is True
    assert rep["results"][0]["m0_drift"] < 1e-12
    again = tmp_path / "again"
    assert main(["solve-pde", "--config", str(pde_dir / "config.json"), "--out", str(again), "--quiet"]) == 0
    for name in ("trajectory.csv", "snapshot_times.csv", "snapshots/rho_00003.csv"):
        assert (again / name).read_bytes() == (pde_dir / name).read_bytes()


def test_gini_on_density(tmp_path, pde_dir):
    out = tmp_path / "gini"
    assert main(["gini", "--density", str(pde_dir / "snapshots" / "rho_00000.csv"), "--out", str(out), "--quiet"]) == 0
    res = report(out)["results"][0]
    assert res["gini"] == pytest.approx(0.5, abs=1e-2)


@pytest.mark.parametrize("weight", ["rho", "D", "dx"])
def test_metric_norm(tmp_path, pde_dir, weight):
    snaps = pde_dir / "snapshots"
    out = tmp_path / weight
    argv = ["metric", "norm", "--density", str(snaps / "rho_00000.csv"), "--other", str(snaps / "rho_00004.csv"),
            "--weight", weight, "--out", str(out), "--quiet"]
    assert main(argv) == 0
    rep = report(out)
    assert rep["command"] == "metric norm"
    assert rep["results"][0]["dual_norm"] > 0


def test_metric_norm_grid_mismatch(tmp_path, pde_dir):
    other = tmp_path / "coarse.csv"
    DensityField.exponential(Grid(20.0, 60)).to_csv(other)
    argv = ["metric", "norm", "--density", str(pde_dir / "snapshots" / "rho_00000.csv"), "--other", str(other),
            "--out", str(tmp_path / "o"), "--quiet"]
    assert main(argv) == 1


def test_metric_verify_flow_from_trajectory(tmp_path, pde_dir):
    out = tmp_path / "vf"
    assert main(["metric", "verify-flow", "--trajectory", str(pde_dir), "--stride", "1",
                 "--out", str(out), "--quiet"]) == 0
    assert report(out)["pass"] is True
    header, _ = read_csv(out / "gradient_flow.csv")
    assert header[:2] == ["t", "residual"]


def test_metric_fourth_moment(tmp_path, pde_dir):
    out = tmp_path / "fm"
    assert main(["metric", "fourth-moment", "--trajectory", str(pde_dir), "--out", str(out), "--quiet"]) == 0
    assert report(out)["results"][0]["violations"] == 0


def test_metric_inequalities(tmp_path, cfg_path):
    out = tmp_path / "ineq"
    assert main(["metric", "inequalities", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    res = report(out)["results"][0]
    assert res["trials"] == 5
    assert all(v == 0 for v in res["violations"].values())


def test_potentiality_commands(tmp_path, pde_dir):
    density = str(pde_dir / "snapshots" / "rho_00000.csv")
    out = tmp_path / "w2"
    assert main(["potentiality", "--density", density, "--n-r", "16", "--out", str(out), "--quiet"]) == 0
    assert report(out)["results"][0]["nonzero"] is True
    out = tmp_path / "gini"
    assert main(["potentiality", "--density", density, "--operator", "gini", "--out", str(out), "--quiet"]) == 0
    assert report(out)["results"][0]["nonzero"] is False


def test_verify_all_fails_above_cfl(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"grid": {"n_cells": 400}, "pde": {"dt": 5.0, "T": 5.0}}))
    out = tmp_path / "v"
    assert main(["verify-all", "--criteria", "1", "--config", str(cfg), "--out", str(out)]) == 1
    rep = report(out)
    assert rep["pass"] is False
    assert "StabilityError" in rep["results"][0]["error"]
    assert "[FAIL] criterion  1" in capsys.readouterr().err


@pytest.mark.parametrize("text", [json.dumps({"grid": {"n_cells": 2}}), '{"gamma": 0.1,}', json.dumps({"gamma": 1.5})])
def test_config_errors_exit_2(tmp_path, capsys, text):
    cfg = tmp_path / "bad.json"
    cfg.write_text(text)
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_density_csv_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"initial_density": {"kind": "csv", "path": str(tmp_path / "gone.csv")}}))
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
