import numpy as np
import pytest

from covert_pursuit.dc_transform import build_subproblem
from covert_pursuit.pdcae import default_proximal_weight, solar_model
from covert_pursuit.power import SolarParams
from covert_pursuit.scenario import TrajectoryPlan, generate_target_track, initial_plan
from covert_pursuit.subproblem import (
    BarrierSettings,
    Phase1Failure,
    Status,
    kkt_residual,
    phase1_feasible,
    solve_convex,
)


@pytest.fixture(scope="module")
def tiny_cfg(short_cfg):
    return short_cfg.replace(horizon_T=0.6)


@pytest.fixture(scope="module")
def tiny_track(tiny_cfg):
    return generate_target_track(tiny_cfg)


def make_sub(cfg, track, plan=None, center=None):
    plan = plan or initial_plan(track, cfg)
    center = plan if center is None else center
    return build_subproblem(plan, center, track, cfg, default_proximal_weight(cfg, cfg.mu1, cfg.mu2),
                            solar_model(cfg), check=False)


def test_solve_reaches_kkt_tolerance(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    x0 = initial_plan(tiny_track, tiny_cfg).decision_vector()
    sol = solve_convex(sub, x0)
    assert sol.status is Status.OPTIMAL
    assert sol.kkt_residual <= 1e-6
    assert np.all(sub.constraint_values(sol.point) < 0)
    assert sub.objective(sol.point) <= sub.objective(x0) + 1e-9


def test_solution_beats_feasible_perturbations(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    sol = solve_convex(sub, initial_plan(tiny_track, tiny_cfg).decision_vector())
    best = sub.objective(sol.point)
    rng = np.random.default_rng(0)
    for _ in range(200):
        trial = sol.point + rng.normal(0, 0.05, sub.n)
        if np.all(sub.constraint_values(trial) <= 0):
            assert sub.objective(trial) >= best - 1e-6 * max(1.0, abs(best))


def test_solve_is_deterministic(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    x0 = initial_plan(tiny_track, tiny_cfg).decision_vector()
    a, b = solve_convex(sub, x0), solve_convex(sub, x0)
    assert np.array_equal(a.point, b.point)
    assert a.inner_iterations == b.inner_iterations


def test_infeasible_warm_start_goes_through_phase1(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    plan = initial_plan(tiny_track, tiny_cfg)
    wp = np.array(plan.waypoints)
    wp[1:, 2] = tiny_cfg.z_lower - 0.3  # below the floor
    bad = TrajectoryPlan(wp, plan.q).decision_vector()
    assert np.max(sub.constraint_values(bad)) > 0
    fixed = phase1_feasible(sub, bad)
    assert np.all(sub.constraint_values(fixed) < 0)
    sol = solve_convex(sub, bad)
    assert sol.status is Status.OPTIMAL


def test_empty_battery_is_reported_infeasible(tiny_cfg, tiny_track):
    # a tiny panel, no battery and no altitude to trade: even the cheapest
    # cruise speed burns more than is harvested
    cfg = tiny_cfg.replace(e0=0.0, monitor_z0=tiny_cfg.z_lower, solar=SolarParams(s_panel=0.01))
    sub = make_sub(cfg, tiny_track)
    x0 = initial_plan(tiny_track, cfg).decision_vector()
    with pytest.raises(Phase1Failure):
        phase1_feasible(sub, x0)
    assert solve_convex(sub, x0).status is Status.INFEASIBLE


def test_iteration_budget_reports_max_iters(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    sol = solve_convex(sub, initial_plan(tiny_track, tiny_cfg).decision_vector(),
                       BarrierSettings(max_total=2))
    assert sol.inner_iterations <= 2
    assert sol.status is Status.MAX_ITERS


def test_kkt_residual_is_small_only_at_the_optimum(tiny_cfg, tiny_track):
    sub = make_sub(tiny_cfg, tiny_track)
    x0 = initial_plan(tiny_track, tiny_cfg).decision_vector()
    sol = solve_convex(sub, x0)
    t = len(sub.constraint_values(x0)) / sol.gap
    assert kkt_residual(sub, sol.point, t) <= 1e-6
    assert kkt_residual(sub, phase1_feasible(sub, x0), t) > 1e-6
