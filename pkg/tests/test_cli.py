import csv
import json
import os

import pytest

from etcstab.cli import main
from etcstab.debug_logger import DebugLogger

from conftest import scenario_path, write_variant


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_check_graph_canonical(capsys):
    assert main(["check-graph", scenario_path("paper_A2")]) == 0
    out = capsys.readouterr().out
    assert "Pinning: OK" in out
    assert "c = 1" in out
    assert "eta = 0.763932" in out


def test_check_graph_unpinned(capsys):
    assert main(["check-graph", scenario_path("unpinned")]) == 1
    out = capsys.readouterr().out
    assert "Pinning: FAILED" in out
    assert "Suggested control vertices: {1, 3}" in out


def test_check_graph_disconnected_followers(tmp_path, capsys):
    # two 2-cycles {1, 2} and {3, 4} with no edge between them, each pinned once
    path = write_variant(tmp_path, "paper_A2", network={
        "vertices": 6, "followers": 4,
        "edges": [[1, 2, 1], [2, 1, 1], [3, 4, 1], [4, 3, 1]],
        "leader_couplings": [[1, 5, 1], [3, 6, 1]],
    })
    assert main(["check-graph", path]) == 0
    out = capsys.readouterr().out
    assert "Weakly connected: no" in out
    assert "not weakly connected" in out
    assert "rank(L_F)" not in out
    assert "c = 2" in out
    assert "Pinning: OK" in out
    assert "Spectrum of M:" in out
    assert "eta = " in out


def test_malformed_file(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "dynamics": {\n    "A": [[1, 2],\n}\n', encoding="utf-8")
    assert main(["check-graph", str(path)]) == 1
    assert "Error: line" in capsys.readouterr().err


def test_design_outputs_certificate(capsys):
    assert main(["design", scenario_path("paper_A2")]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["scenario"] == "paper_A2"
    assert payload["design"]["riccati_residual"] <= -0.025


def test_design_to_file(tmp_path):
    target = os.path.join(str(tmp_path), "design.json")
    assert main(["design", scenario_path("paper_A2"), "--out", target]) == 0
    with open(target, encoding="utf-8") as f:
        assert "K" in json.load(f)["design"]


def test_design_uncontrollable_is_solver_failure(tmp_path, capsys):
    path = write_variant(tmp_path, "paper_A2", dynamics={"A": [[1.0, 0.0], [0.0, -1.0]], "B": [[0.0], [1.0]]})
    assert main(["design", path]) == 3
    assert "Error:" in capsys.readouterr().err


def test_design_rejects_zero_weight(tmp_path):
    path = write_variant(tmp_path, "paper_A2", solver={"varsigma_R": 0})
    assert main(["design", path]) == 1


def test_simulate_writes_identical_artifacts(tmp_path, capsys):
    path = write_variant(tmp_path, "paper_A2", solver={"T": 2.0})
    first, second = str(tmp_path / "first"), str(tmp_path / "second")
    assert main(["simulate", path, "--out", first]) == 0
    assert main(["simulate", path, "--out", second]) == 0
    out = capsys.readouterr().out
    assert "Trigger counts:" in out
    for name in ("trajectory.csv", "events.csv", "phi.csv", "metrics.csv", "report.json", "plots.gp"):
        assert os.path.exists(os.path.join(first, name))
        assert read(os.path.join(first, name)) == read(os.path.join(second, name))
    with open(os.path.join(first, "report.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["status"] == "completed"
    assert report["mode"] == "detc"


def test_simulate_mode_override(tmp_path):
    path = write_variant(tmp_path, "paper_A2", solver={"T": 1.0})
    out = str(tmp_path / "static")
    assert main(["simulate", path, "--mode", "setc-inst", "--out", out]) == 0
    assert not os.path.exists(os.path.join(out, "phi.csv"))


def test_simulate_divergent(tmp_path, capsys):
    out = str(tmp_path / "a1")
    assert main(["simulate", scenario_path("paper_A1"), "--out", out]) == 2
    captured = capsys.readouterr()
    assert "Status: diverged" in captured.out
    assert "diverged" in captured.err
    with open(os.path.join(out, "report.json"), encoding="utf-8") as f:
        assert json.load(f)["status"] == "diverged"


def test_sweep_unknown_parameter(capsys):
    assert main(["sweep", scenario_path("paper_A2"), "--param", "gamma", "--values", "1,2"]) == 1
    assert "unknown sweep parameter" in capsys.readouterr().err


def test_sweep_beta(tmp_path, monkeypatch):
    monkeypatch.setenv("ETC_STAB_THREADS", "1")
    path = write_variant(tmp_path, "paper_A2", solver={"T": 1.0})
    out = str(tmp_path / "sweep")
    assert main(["sweep", path, "--param", "beta", "--values", "0.5,2", "--out", out]) == 0
    with open(os.path.join(out, "sweep.csv"), encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [float(r["value"]) for r in rows] == [0.5, 2.0]
    assert all(r["error"] == "" for r in rows)
    assert os.path.isdir(os.path.join(out, "beta_0.5"))


def test_sweep_theta_reports_offset(tmp_path, monkeypatch):
    monkeypatch.setenv("ETC_STAB_THREADS", "1")
    path = write_variant(tmp_path, "paper_A2", solver={"T": 0.5})
    out = str(tmp_path / "theta")
    assert main(["sweep", path, "--param", "theta", "--values", "1,1e6", "--out", out]) == 0
    with open(os.path.join(out, "sweep.csv"), encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert "offset_to_static" in rows[0]


def test_debug_file(tmp_path):
    log = str(tmp_path / "debug.log")
    assert main(["check-graph", scenario_path("paper_A2"), "--debug", log]) == 0
    with open(log, encoding="utf-8") as f:
        text = f.read()
    assert "--- Graph ---" in text
    assert "--- Command ---" in text


def test_inactive_logger_is_silent(tmp_path):
    with DebugLogger(None) as logger:
        assert not logger.is_active
        logger.log("hidden")
        logger.section("Hidden", ["nothing"])
