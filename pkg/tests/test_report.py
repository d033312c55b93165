import csv
import io
import json

import numpy as np
import pytest

from covert_pursuit.pdcae import solar_model
from covert_pursuit.report import (
    TRAJECTORY_COLUMNS,
    audit_plan,
    build_report,
    iterations_csv,
    report_json,
    slot_breakdown,
    trajectory_csv,
    write_report,
)
from covert_pursuit.scenario import TrajectoryPlan, initial_plan


@pytest.fixture(scope="module")
def shadow_report(std_cfg, std_track):
    plan = initial_plan(std_track, std_cfg)
    return build_report("proposed", plan, std_track, std_cfg, solar_model(std_cfg), 0.2, 0.1,
                        {"iterations": 0}, [], True, "converged")


def test_trajectory_csv_has_a_row_per_waypoint(shadow_report):
    rows = list(csv.reader(io.StringIO(trajectory_csv(shadow_report))))
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS
    assert len(rows) == 1 + 151
    assert rows[1][0] == "0" and rows[1][5] == ""
    assert [int(r[0]) for r in rows[1:]] == list(range(151))


def test_totals_reconcile(shadow_report, std_cfg):
    t = shadow_report.totals
    bd = shadow_report.breakdown
    assert t["consumed_J"] == pytest.approx(t["propulsion_J"] + t["thrust_J"])
    assert t["propulsion_J"] == pytest.approx(bd["Ph_exact"].sum() * std_cfg.delta)
    assert t["objective_scaled"] == pytest.approx(t["objective_unscaled"] * std_cfg.delta)
    assert t["harvested_linear_J"] <= t["harvested_J"]
    # the shadow plan has zero distance and zero climb, so no disguise reward
    assert t["disguise"] == pytest.approx(0.0, abs=1e-9)
    assert t["thrust_J"] == pytest.approx(0.0)


def test_shadow_plan_passes_the_audit(shadow_report):
    assert shadow_report.audit["ok"]
    assert shadow_report.audit["max_distance"] == pytest.approx(2.0)


def test_audit_flags_each_violation(std_cfg, std_track):
    plan = initial_plan(std_track, std_cfg)
    wp = np.array(plan.waypoints)
    wp[10, 0] += 0.5  # ahead of the target in x
    wp[20, 2] = std_cfg.z_lower - 0.01  # below the floor
    wp[30, :2] -= (15.0, 15.0)  # beyond visual range, and a long hop
    bad = TrajectoryPlan(wp, plan.q)
    audit = audit_plan(bad, std_track, std_cfg)
    found = {(v["slot"], v["constraint"]) for v in audit["violations"]}
    assert (10, "trail_x") in found
    assert (20, "floor") in found
    assert (30, "distance") in found
    assert (30, "horizontal_speed") in found
    assert not audit["ok"]


def test_audit_flags_energy_causality(std_cfg, std_track):
    cfg = std_cfg.replace(e0=10.0)
    plan = initial_plan(std_track, cfg)
    bd = slot_breakdown(plan, std_track, cfg, solar_model(cfg), 0.2, 0.1)
    wp = np.array(plan.waypoints)
    wp[1:, :2] = 0.0  # hover at the start: burns more than it harvests
    hover = TrajectoryPlan(wp, np.ones(cfg.n_slots))
    audit = audit_plan(hover, std_track, cfg)
    assert any(v["constraint"] == "energy_causality" for v in audit["violations"])
    assert bd["Ps_linear"].max() <= bd["Ps_exact"].max()


def test_report_json_is_stable_and_excludes_wall_time(shadow_report):
    a = report_json(shadow_report)
    shadow_report.wall_time = 123.0
    assert report_json(shadow_report) == a
    doc = json.loads(a)
    assert doc["scheme"] == "proposed"
    assert "wall_time" not in a


def test_write_report_files(tmp_path, shadow_report):
    paths = write_report(shadow_report, tmp_path / "out", "run")
    assert set(paths) == {"report", "trajectory", "iterations", "timing"}
    for p in paths.values():
        assert p.exists()
    assert json.loads(paths["timing"].read_text())["wall_time_s"] == shadow_report.wall_time
    assert not list((tmp_path / "out").glob(".*"))  # no temporary files left behind
    assert iterations_csv(shadow_report).splitlines()[0].startswith("iter,")
