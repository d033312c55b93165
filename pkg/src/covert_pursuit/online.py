"""Receding-horizon (MPC) tracking: observe the target, predict its next
waypoints, plan a short horizon with the offline machinery, fly one slot."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dc_transform import BuildOptions
from .pdcae import OfflineOutcome, Scheme, SolverOptions, outcome_report, run_pdcae, scheme_weights, solar_model
from .power import DomainError, propulsion_power_exact, solar_power_exact, solve_q_exact, thrust_power
from .report import RunReport
from .scenario import (InfeasibleScenarioError, ScenarioConfig, TargetTrack, TrajectoryPlan, audit_steps, in_ffr,
                       initial_plan)

log = logging.getLogger(__name__)


class InsufficientHistoryError(ValueError):
    pass


class PredictorMode(str, enum.Enum):
    CONSTANT_VELOCITY = "constant_velocity"
    ORACLE = "oracle"


@dataclass(frozen=True, eq=False)
class TargetPredictor:
    mode: PredictorMode = PredictorMode.CONSTANT_VELOCITY
    history_window: int = 2
    truth: TargetTrack | None = None  # ground truth for the oracle mode

    def __post_init__(self):
        object.__setattr__(self, "mode", PredictorMode(self.mode))
        if self.mode is PredictorMode.ORACLE and self.truth is None:
            raise DomainError("oracle predictor needs the true track")
        if self.history_window < 2:
            raise DomainError("history window must hold at least two observations")


def predict_target(history, n: int, predictor: TargetPredictor, tau: int | None = None) -> np.ndarray:
    """Next ``n`` target waypoints, shape (n, 2).

    Constant velocity extrapolates the last two observations; the oracle
    reads the true track after tick ``tau`` (held at its final point past
    the end).
    """
    if n < 1:
        raise DomainError("prediction length must be >= 1")
    if predictor.mode is PredictorMode.ORACLE:
        if tau is None:
            raise DomainError("oracle prediction needs the current tick")
        wp = predictor.truth.waypoints
        idx = np.minimum(np.arange(tau + 1, tau + n + 1), len(wp) - 1)
        return np.array(wp[idx])
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or len(h) < 2:
        raise InsufficientHistoryError("constant-velocity prediction needs two observations")
    vel = h[-1] - h[-2]
    return h[-1] + vel * np.arange(1, n + 1)[:, None]


@dataclass(frozen=True)
class OnlineOptions:
    horizon: int = 25
    predictor: TargetPredictor = field(default_factory=TargetPredictor)
    # first-slot region tightening, in units of the largest observed second difference
    margin_factor: float = 1.5
    soft_weight: float = 1.0
    mdr: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")


@dataclass
class MpcState:
    tau: int
    executed: list  # monitor waypoints flown so far, starting with the start point
    consumed_J: float = 0.0
    harvested_J: float = 0.0
    battery_J: float = 0.0
    target_history: list = field(default_factory=list)
    prev_dz: float | None = None
    last_plan: TrajectoryPlan | None = None
    M: float | None = None

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.executed[-1], dtype=float)


@dataclass
class HorizonResult:
    plan: TrajectoryPlan | None
    converged: bool
    iterations: int
    inner_iters: int
    objective: float
    mode: str  # "hard", "soft", "fallback"
    M: float | None
    kkt: float = float("nan")
    note: str = ""


def _horizon_cfg(cfg: ScenarioConfig, n: int) -> ScenarioConfig:
    if n == cfg.n_slots:
        return cfg
    return cfg.replace(horizon_T=n * cfg.delta, n_slots=n)


def _shift_plan(prev: TrajectoryPlan, start, n: int, predictions) -> np.ndarray:
    """Waypoints of the previous plan advanced one slot, padded at the end by
    the predicted target displacement."""
    wp = [np.asarray(start, dtype=float)]
    rest = np.asarray(prev.waypoints[2:], dtype=float)
    wp.extend(rest[:n])
    while len(wp) < n + 1:
        k = len(wp) - 1
        step = predictions[k] - predictions[k - 1] if k >= 1 else np.zeros(2)
        nxt = wp[-1].copy()
        nxt[:2] += step
        wp.append(nxt)
    return np.array(wp[: n + 1])


def _pursuit_plan(start, predictions, cfg: ScenarioConfig) -> TrajectoryPlan:
    """Level flight that closes on each predicted waypoint as fast as the
    speed limit allows (with a little headroom)."""
    wp = [np.asarray(start, dtype=float)]
    reach = 0.95 * cfg.hop_max
    for target in np.asarray(predictions, dtype=float):
        cur = wp[-1]
        gap = target - cur[:2]
        dist = float(np.linalg.norm(gap))
        move = gap if dist <= reach else gap * (reach / dist)
        wp.append(np.array([cur[0] + move[0], cur[1] + move[1], cur[2]]))
    wp = np.array(wp)
    speeds = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1) / cfg.delta
    return TrajectoryPlan(wp, solve_q_exact(speeds, cfg.propulsion.v0))


def plan_horizon(mpc: MpcState, predictions, cfg: ScenarioConfig, opts: SolverOptions,
                 online: OnlineOptions, approx, ffr_margin: float = 0.0) -> HorizonResult:
    """Solve the horizon problem anchored at the executed state."""
    n = len(predictions)
    hcfg = _horizon_cfg(cfg, n)
    current_target = np.asarray(mpc.target_history[-1], dtype=float)
    window = TargetTrack(np.vstack([current_target[None, :], predictions]), cfg.target_alt_H)
    start = mpc.position
    if mpc.last_plan is None:
        try:
            warm = initial_plan(window, hcfg, start=start)
        except InfeasibleScenarioError:  # shadow out of reach from here; chase the target instead
            warm = _pursuit_plan(start, predictions, cfg)
    else:
        wp = _shift_plan(mpc.last_plan, start, n, predictions)
        speeds = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1) / cfg.delta
        warm = TrajectoryPlan(wp, solve_q_exact(speeds, cfg.propulsion.v0))
    margin = np.zeros(n)
    margin[0] = ffr_margin
    carry = (mpc.battery_J - cfg.e0) / cfg.delta
    mdr = online.mdr or Scheme(opts.scheme) is Scheme.MDR
    note = ""
    if mdr and np.any(np.diff(window.a) <= 0):
        mdr = False
        note = "heading rows skipped (target not advancing in x)"
    base = BuildOptions(mdr=mdr, carry=carry, prev_dz=mpc.prev_dz,
                        ffr_margin=margin if ffr_margin > 0 else None)
    run_opts = opts if mpc.M is None else replace(opts, M=mpc.M)
    if Scheme(run_opts.scheme) is Scheme.MDR:
        run_opts = replace(run_opts, scheme=Scheme.PROPOSED)
    for mode, build in (("hard", base), ("soft", replace(base, soft_distance=online.soft_weight))):
        out = run_pdcae(window, hcfg, run_opts, approx, start_plan=warm, build=build)
        if out.status != "infeasible":
            inner = sum(r.inner_iters for r in out.records)
            obj = out.records[-1].surrogate_objective if out.records else float("nan")
            kkt = out.records[-1].kkt_residual if out.records else float("nan")
            return HorizonResult(out.plan, out.converged, out.iterations, inner, obj, mode, out.M, kkt,
                                 note if mode == "hard" else (note + "; soft distance").strip("; "))
    return HorizonResult(None, False, 0, 0, float("nan"), "fallback", mpc.M, note=note)


def _second_difference_bound(history) -> float:
    h = np.asarray(history, dtype=float)
    if len(h) < 3:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(h, 2, axis=0), axis=1)))


def run_online(track: TargetTrack, cfg: ScenarioConfig, opts: SolverOptions | None = None,
               online: OnlineOptions | None = None) -> RunReport:
    """Fly the mission tick by tick and return the executed trajectory report."""
    opts = opts or SolverOptions()
    online = online or OnlineOptions()
    if len(track) < cfg.n_slots + 1:
        raise DomainError("target track shorter than the mission")
    t_start = time.perf_counter()
    approx = solar_model(cfg)
    mu1, mu2 = scheme_weights(opts.scheme, cfg.mu1, cfg.mu2)
    n_total = cfg.n_slots
    start = np.array([0.0, 0.0, cfg.monitor_z0])
    mpc = MpcState(0, [start], battery_J=cfg.e0)
    reserve_floor = (1.0 - cfg.eta0) * cfg.e0
    ticks, records, events = [], [], []
    first_loss = None
    for tau in range(n_total):
        mpc.tau = tau
        mpc.target_history.append(np.array(track.waypoints[tau], dtype=float))
        n = min(online.horizon, n_total - tau)
        hist = mpc.target_history[-online.predictor.history_window:]
        if online.predictor.mode is PredictorMode.CONSTANT_VELOCITY and len(hist) < 2:
            preds = np.tile(hist[-1], (n, 1))  # one observation: assume the target holds
        else:
            preds = predict_target(hist, n, online.predictor, tau)
        margin = 0.0
        if online.predictor.mode is PredictorMode.CONSTANT_VELOCITY:
            margin = online.margin_factor * _second_difference_bound(mpc.target_history)
        res = plan_horizon(mpc, preds, cfg, opts, online, approx, margin)
        pos = mpc.position
        if res.plan is None:
            # level pursuit step: within the speed limit and never a vertical acceleration
            nxt = _pursuit_plan(pos, preds[:1], cfg).waypoints[1]
            events.append({"tau": tau, "event": "fallback pursuit"})
        else:
            nxt = np.array(res.plan.waypoints[1])
            if res.mode != "hard":
                events.append({"tau": tau, "event": res.note or res.mode})
            elif res.note:
                events.append({"tau": tau, "event": res.note})
        truth_next = np.asarray(track.waypoints[tau + 1], dtype=float)
        ffr_ok = in_ffr(nxt, truth_next, cfg, tol=1e-9)
        if not ffr_ok and first_loss is None:
            first_loss = tau + 1
        speed = float(np.linalg.norm(nxt[:2] - pos[:2]) / cfg.delta)
        used = (propulsion_power_exact(speed, cfg.propulsion)
                + thrust_power(nxt[2], pos[2], cfg.thrust, cfg.delta)) * cfg.delta
        gained = solar_power_exact(nxt[2], cfg.solar) * cfg.delta
        mpc.consumed_J += used
        mpc.harvested_J += gained
        mpc.battery_J += gained - used
        mpc.prev_dz = float(nxt[2] - pos[2])
        mpc.executed.append(nxt)
        mpc.last_plan = res.plan
        if res.M is not None:
            mpc.M = res.M
        err = float(np.linalg.norm(preds[0] - truth_next))
        ticks.append({
            "tau": tau, "x": nxt[0], "y": nxt[1], "z": nxt[2], "predicted_err": err,
            "energy_consumed": mpc.consumed_J, "energy_harvested": mpc.harvested_J,
            "reserve": mpc.battery_J, "ffr_ok": ffr_ok,
        })
        records.append({
            "iteration": tau, "surrogate_objective": res.objective, "exact_objective": float("nan"),
            "step_norm": float("nan"), "beta": 0.0, "inner_iters": res.inner_iters,
            "kkt_residual": res.kkt, "note": f"{res.mode} iters={res.iterations}"
                                              + ("" if res.converged or res.plan is None else " unconverged"),
        })
        log.info("tick=%d mode=%s iters=%d inner=%d battery=%.3f", tau, res.mode, res.iterations,
                 res.inner_iters, mpc.battery_J)
    wp = np.array(mpc.executed)
    speeds = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1) / cfg.delta
    flown = TrajectoryPlan(wp, solve_q_exact(speeds, cfg.propulsion.v0))
    errors = np.array([t["predicted_err"] for t in ticks])
    reserves = np.array([t["reserve"] for t in ticks])
    extra = {
        "tick_log": ticks,
        "events": events,
        "first_ffr_loss_tick": first_loss,
        "predictor": online.predictor.mode.value,
        "horizon": online.horizon,
        "prediction_rms_error": float(np.sqrt(np.mean(errors**2))),
        "reserve_min_J": float(reserves.min()),
        "reserve_ok": bool(reserves.min() >= reserve_floor - 1e-9 * cfg.e0),
        "mobility_violations": len(audit_steps(flown.steps(), cfg)),
    }

    ok = first_loss is None and not any(e["event"] == "fallback pursuit" for e in events)
    status = "completed" if first_loss is None else f"ffr_lost_at_{first_loss}"
    out = OfflineOutcome(flown, records, ok, n_total, mpc.M, approx, mu1, mu2, status, None, opts.M)
    return outcome_report(out, track, cfg, opts, time.perf_counter() - t_start, scheme="online", extra=extra)
