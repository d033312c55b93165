import numpy as np
import pytest

from covert_pursuit.online import (
    InsufficientHistoryError,
    MpcState,
    OnlineOptions,
    PredictorMode,
    TargetPredictor,
    plan_horizon,
    predict_target,
    run_online,
)
from covert_pursuit.online import _pursuit_plan as pursuit_plan
from covert_pursuit.pdcae import SolverOptions, exact_objective, run_pdcae, solar_model
from covert_pursuit.power import DomainError
from covert_pursuit.scenario import generate_target_track, stationary_track

CV = TargetPredictor()


@pytest.fixture(scope="module")
def mini_cfg(short_cfg):
    return short_cfg.replace(horizon_T=1.0)


@pytest.fixture(scope="module")
def mini_track(mini_cfg):
    return generate_target_track(mini_cfg)


@pytest.fixture(scope="module")
def cv_report(mini_cfg, mini_track):
    return run_online(mini_track, mini_cfg, SolverOptions(), OnlineOptions(horizon=3))


def test_constant_velocity_prediction():
    out = predict_target([(0.0, 0.0), (1.0, 2.0)], 3, CV)
    assert np.allclose(out, [(2, 4), (3, 6), (4, 8)])


def test_constant_velocity_uses_last_two_points():
    out = predict_target([(9.0, 9.0), (0.0, 0.0), (1.0, 0.0)], 2, CV)
    assert np.allclose(out, [(2, 0), (3, 0)])


def test_prediction_needs_two_observations():
    with pytest.raises(InsufficientHistoryError):
        predict_target([(0.0, 0.0)], 2, CV)
    with pytest.raises(DomainError):
        predict_target([(0.0, 0.0), (1.0, 1.0)], 0, CV)


def test_oracle_prediction_reads_truth_and_holds_at_end(mini_track):
    pred = TargetPredictor(PredictorMode.ORACLE, truth=mini_track)
    out = predict_target(None, 3, pred, tau=3)
    assert np.array_equal(out[0], mini_track.waypoints[4])
    assert np.array_equal(out[1], mini_track.waypoints[5])
    assert np.array_equal(out[2], mini_track.waypoints[5])
    with pytest.raises(DomainError):
        predict_target(None, 3, pred)


def test_predictor_validation():
    with pytest.raises(DomainError):
        TargetPredictor(PredictorMode.ORACLE)
    with pytest.raises(DomainError):
        TargetPredictor(history_window=1)
    with pytest.raises(DomainError):
        OnlineOptions(horizon=0)


def test_pursuit_plan_respects_speed_limit(mini_cfg):
    preds = np.array([[40.0, 0.0], [41.0, 0.0], [42.0, 0.0]])
    plan = pursuit_plan(np.array([0.0, 0.0, 102.0]), preds, mini_cfg)
    hops = np.linalg.norm(plan.steps()[:, :2], axis=1)
    assert np.all(hops <= mini_cfg.hop_max)
    assert np.all(plan.steps()[:, 2] == 0.0)
    near = pursuit_plan(np.array([0.0, 0.0, 102.0]), np.array([[1.0, 1.0]]), mini_cfg)
    assert np.allclose(near.waypoints[1, :2], [1.0, 1.0])


def test_online_run_completes(cv_report, mini_cfg):
    assert cv_report.status == "completed"
    assert cv_report.scheme == "online"
    assert len(cv_report.extra["tick_log"]) == mini_cfg.n_slots
    assert cv_report.extra["mobility_violations"] == 0
    assert cv_report.extra["reserve_ok"]


def test_online_ledger_reconciles(cv_report, mini_cfg):
    ticks = cv_report.extra["tick_log"]
    last = ticks[-1]
    assert last["energy_consumed"] == pytest.approx(cv_report.totals["consumed_J"], rel=1e-9)
    assert last["energy_harvested"] == pytest.approx(cv_report.totals["harvested_J"], rel=1e-9)
    assert last["reserve"] == pytest.approx(mini_cfg.e0 + last["energy_harvested"] - last["energy_consumed"])
    wp = cv_report.plan.waypoints
    assert [t["x"] for t in ticks] == pytest.approx(wp[1:, 0])


def test_stationary_target_is_tracked(mini_cfg):
    track = stationary_track(mini_cfg, 3.0, 2.0)
    rep = run_online(track, mini_cfg, SolverOptions(), OnlineOptions(horizon=3))
    assert rep.status == "completed"
    assert all(t["ffr_ok"] for t in rep.extra["tick_log"])
    assert rep.extra["prediction_rms_error"] == 0.0


def test_online_rejects_short_track(mini_cfg, mini_track):
    with pytest.raises(DomainError):
        run_online(mini_track.window(0, 3), mini_cfg)


def test_full_horizon_oracle_matches_offline(mini_cfg, mini_track):
    opts = SolverOptions()
    offline = run_pdcae(mini_track, mini_cfg, opts)
    pred = TargetPredictor(PredictorMode.ORACLE, truth=mini_track)
    online = OnlineOptions(horizon=mini_cfg.n_slots, predictor=pred)
    mpc = MpcState(0, [np.array([0.0, 0.0, mini_cfg.monitor_z0])], battery_J=mini_cfg.e0,
                   target_history=[mini_track.waypoints[0]])
    preds = predict_target(None, mini_cfg.n_slots, pred, tau=0)
    res = plan_horizon(mpc, preds, mini_cfg, opts, online, solar_model(mini_cfg))
    a = exact_objective(offline.plan, mini_track, mini_cfg, 0.2, 0.1)
    b = exact_objective(res.plan, mini_track, mini_cfg, 0.2, 0.1)
    assert abs(a - b) <= 1e-6 * abs(a)
