import math

import numpy as np
import pytest
from conftest import fast_track
from hypothesis import given
from hypothesis import strategies as st

from covert_pursuit.oracle import (
    GridTooLargeError,
    brute_force_small,
    finite_diff_gradient,
    lipschitz_cell_bound,
    slot_candidates,
)
from covert_pursuit.pdcae import exact_objective
from covert_pursuit.power import DomainError, propulsion_power_exact, thrust_power
from covert_pursuit.scenario import ScenarioConfig, in_ffr, initial_plan

TOY1 = ScenarioConfig(horizon_T=0.2, d_max=3.0)
TOY3 = ScenarioConfig(horizon_T=0.6, d_max=3.0)


def test_finite_differences_on_known_functions():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    assert np.allclose(finite_diff_gradient(lambda v: v @ a @ v, x), 2 * a @ x, atol=1e-8)
    assert finite_diff_gradient(lambda v: math.sin(v[0]), [0.0])[0] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DomainError):
        finite_diff_gradient(lambda v: 0.0, [0.0], h=0.0)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_finite_differences_leave_the_point_unchanged(a, b):
    x = np.array([a, b])
    finite_diff_gradient(lambda v: float(v @ v), x)
    assert x.tolist() == [a, b]


def test_candidates_lie_in_the_region_and_include_the_corner():
    pts = slot_candidates((4.0, 3.0), TOY1, 0.5, 100.0)
    assert all(in_ffr(p, (4.0, 3.0), TOY1, tol=1e-9) for p in pts)
    assert any(np.allclose(p, (4.0, 3.0, 101.0)) for p in pts)
    assert np.all(np.diff(pts[:, 0]) >= 0)  # lexicographic in x first


def test_singleton_grid_gives_the_only_plan():
    cfg = ScenarioConfig(horizon_T=0.2, d_max=1.2)
    track = fast_track(1)
    assert len(slot_candidates(track.waypoints[1], cfg, 1.0, 100.0)) == 1
    res = brute_force_small(track, cfg, 1.0)
    assert res.evaluations == 1
    assert np.allclose(res.plan.waypoints[1], (4.0, 3.0, 101.0))
    want = (propulsion_power_exact(25.0, cfg.propulsion) + thrust_power(101.0, 102.0, cfg.thrust, 0.2)
            - cfg.mu1 * 0.0 - cfg.mu2 * 1.0)
    assert res.objective == pytest.approx(want, rel=1e-12)


def test_oracle_is_no_worse_than_the_shadow_plan():
    track = fast_track(3)
    res = brute_force_small(track, TOY3, 0.5)
    shadow = initial_plan(track, TOY3)
    assert res.objective <= exact_objective(shadow, track, TOY3, TOY3.mu1, TOY3.mu2) + 1e-9
    assert exact_objective(res.plan, track, TOY3, TOY3.mu1, TOY3.mu2) == pytest.approx(res.objective, rel=1e-12)


def test_oracle_is_deterministic():
    track = fast_track(1)
    a = brute_force_small(track, TOY1, 0.5)
    b = brute_force_small(track, TOY1, 0.5)
    assert a.objective == b.objective
    assert np.array_equal(a.plan.waypoints, b.plan.waypoints)


def test_oracle_refuses_large_grids_with_an_estimate():
    with pytest.raises(GridTooLargeError) as err:
        brute_force_small(fast_track(3), TOY3, 0.1, max_evaluations=10**6)
    assert err.value.estimate > 10**6
    assert "evaluations" in str(err.value)


def test_oracle_limits_horizon_and_grid():
    with pytest.raises(DomainError):
        brute_force_small(fast_track(4), ScenarioConfig(horizon_T=0.8, d_max=3.0), 0.5)
    with pytest.raises(DomainError):
        brute_force_small(fast_track(1), TOY1, 0.0)


def test_cell_bound_scales_with_grid_step():
    assert lipschitz_cell_bound(TOY1, 0.5) == pytest.approx(62.9, abs=0.1)
    assert lipschitz_cell_bound(TOY1, 1.0) == pytest.approx(2 * lipschitz_cell_bound(TOY1, 0.5))
    assert lipschitz_cell_bound(TOY3, 0.5) > lipschitz_cell_bound(TOY1, 0.5)
