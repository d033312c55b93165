import csv
import json

import pytest

from covert_pursuit import cli
from covert_pursuit.cli import main, sweep_weights, worker_count

TINY = {"horizon_T": 0.6}


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fly"]) == 2
    assert main(["run", "--scheme", "fastest"]) == 2
    assert main(["compare", "--schemes", "proposed"]) == 2
    assert main(["compare", "--schemes", "proposed,warp"]) == 2
    assert main(["run", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["sweep", "--points", "0", "--out", str(tmp_path)]) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_run_writes_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    for suffix in ("report.json", "trajectory.csv", "iterations.csv", "timing.json"):
        assert (tmp_path / "o" / f"proposed_{suffix}").exists()
    assert "status=converged" in capsys.readouterr().out


def test_nonconvergence_exits_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**TINY, "solver": {"max_iters": 1}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_infeasible_scenario_exits_4(tmp_path, capsys):
    doc = {**TINY, "e0": 0.0, "monitor_z0": 101.0, "solar": {"s_panel": 0.01}}
    assert main(["run", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path)]) == 4
    far = {**TINY, "monitor_z0": 130.0}  # shadow start leaves the visual range
    assert main(["run", "--config", write_cfg(tmp_path, far, "far.json"), "--out", str(tmp_path)]) == 4


def test_online_scheme(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**TINY, "online": {"horizon": 2}})
    assert main(["run", "--config", cfg, "--scheme", "online", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "online_ticks.csv").exists()


def test_compare_writes_one_row_per_scheme(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    cfg = write_cfg(tmp_path, TINY)
    assert main(["compare", "--config", cfg, "--schemes", "proposed,ndp", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "compare.csv")
    assert [r["scheme"] for r in rows] == ["proposed", "ndp"]
    assert list(rows[0]) == list(cli.COMPARE_COLUMNS)
    assert rows[0]["saving_vs_dst_J"] == ""


def test_sweep_rows(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    cfg = write_cfg(tmp_path, TINY)
    assert main(["sweep", "--config", cfg, "--points", "2", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert [(r["mu1"], r["mu2"]) for r in rows] == [("0", "1"), ("1", "0")]
    assert float(rows[0]["power_W"]) == pytest.approx(float(rows[0]["energy_J"]) / 0.6)


def test_oracle_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"horizon_T": 0.2, "d_max": 3.0})
    assert main(["oracle", "--config", cfg, "--grid", "0.5", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "oracle.json").read_text())
    assert doc["objective_scaled"] == pytest.approx(doc["objective_unscaled"] * 0.2)
    assert len(doc["waypoints"]) == 2
    assert main(["oracle", "--config", cfg, "--grid", "0.01", "--max-evaluations", "10"]) == 2


def test_fit_solar_command(capsys):
    assert main(["fit-solar"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["lower_bound"] is True
    assert doc["max_relative_gap"] <= 0.01


def test_worker_count(monkeypatch):
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    assert worker_count(1) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    for bad in ("0", "many"):
        monkeypatch.setenv(cli.THREADS_ENV, bad)
        with pytest.raises(cli.UsageError):
            worker_count(2)


def test_bad_thread_setting_is_a_usage_error(monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert main(["compare", "--schemes", "proposed,dko"]) == 2


def test_sweep_weights():
    w = sweep_weights(11)
    assert len(w) == 11
    assert w[0] == (0.0, 1.0) and w[-1] == (1.0, 0.0)
    assert all(abs(a + b - 1.0) < 1e-12 for a, b in w)
    assert w[3] == (0.3, 0.7)
