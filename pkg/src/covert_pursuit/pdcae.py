"""Extrapolated proximal DC iterations wrapped in successive convex approximation.

Each outer iteration re-expands the q-bound at the current plan, linearises
the concave part (disguise reward) and the linear thrust term, and solves the
resulting strongly convex proximal subproblem around an extrapolated point.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dc_transform import BuildOptions, InfeasibleIterateError, build_subproblem, surrogate_objective
from .power import DomainError, SolarLinearApprox, fit_solar_linear, propulsion_power_exact, solve_q_exact
from .scenario import ScenarioConfig, TargetTrack, TrajectoryPlan, initial_plan
from .report import RunReport, build_report
from .subproblem import BarrierSettings, InnerSolution, Phase1Failure, Status, phase1_feasible, solve_convex

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9
M_FLOOR = 1e-3
Q_TIGHTEN_SLACK = 1e-7


class Scheme(str, enum.Enum):
    PROPOSED = "proposed"
    DKO = "dko"  # distance keeping only
    ACO = "aco"  # altitude changing only
    NDP = "ndp"  # no disguise
    DST = "dst"  # propulsion modelled by travelled distance
    MDR = "mdr"  # heading deviation rows


class InnerSolverError(RuntimeError):
    def __init__(self, message: str, kkt_residual: float, status: Status):
        super().__init__(f"{message} (status {status.value}, KKT residual {kkt_residual:.3g})")
        self.kkt_residual = kkt_residual
        self.status = status


class MonotonicityError(RuntimeError):
    """The surrogate objective increased by more than the inner solver can explain."""


def scheme_weights(scheme: Scheme, mu1: float, mu2: float) -> tuple[float, float]:
    scheme = Scheme(scheme)
    if scheme is Scheme.DKO:
        return mu1, 0.0
    if scheme is Scheme.ACO:
        return 0.0, mu2
    if scheme is Scheme.NDP:
        return 0.0, 0.0
    return mu1, mu2


# ----------------------------------------------------------------------------
# extrapolation schedule


@dataclass
class ExtrapolationState:
    beta_bar_prev: float = 1.0
    beta_bar_curr: float = 1.0
    restart_period: int = 50
    step_in_cycle: int = 0

    def __post_init__(self):
        if self.restart_period < 1:
            raise DomainError("restart period must be >= 1")

    def restart(self) -> None:
        self.beta_bar_prev = self.beta_bar_curr = 1.0
        self.step_in_cycle = 0


def next_beta(state: ExtrapolationState) -> float:
    """Emit the next momentum weight and advance the recursion in place."""
    if state.step_in_cycle >= state.restart_period:
        state.restart()
    beta = (state.beta_bar_prev - 1.0) / state.beta_bar_curr
    state.beta_bar_prev, state.beta_bar_curr = (
        state.beta_bar_curr,
        0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.beta_bar_curr**2)),
    )
    state.step_in_cycle += 1
    return beta


def extrapolate(current, previous, beta: float):
    """current + beta*(current - previous), on plans or flat vectors."""
    if isinstance(current, TrajectoryPlan):
        if current.n_slots != previous.n_slots:
            raise DomainError("plans must have the same number of slots")
        vec = extrapolate(current.decision_vector(), previous.decision_vector(), beta)
        return TrajectoryPlan.from_decision(vec, current.start)
    cur = np.asarray(current, dtype=float)
    prev = np.asarray(previous, dtype=float)
    if cur.shape != prev.shape:
        raise DomainError("vectors must have the same shape")
    return cur + beta * (cur - prev)


# ----------------------------------------------------------------------------
# options and state


@dataclass(frozen=True)
class SolverOptions:
    M: float | None = None  # None: default_proximal_weight
    eps_converge: float = 1e-3
    max_iters: int = 100
    restart_period: int = 50
    q_min: float = 1e-6
    smoothing_eps: float = 1e-6
    scheme: Scheme = Scheme.PROPOSED
    inner: BarrierSettings = field(default_factory=BarrierSettings)
    polish_q: bool = True
    # relative objective decrease that still counts as progress when a step is short
    progress_tol: float = 1e-4
    adapt_M: bool = True  # halve M when short steps stop making progress

    def __post_init__(self):
        if self.M is not None and not self.M > 0:
            raise DomainError("M must be > 0")
        if not self.eps_converge > 0:
            raise DomainError("eps_converge must be > 0")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "eps_converge": self.eps_converge,
            "max_iters": self.max_iters,
            "restart_period": self.restart_period,
            "q_min": self.q_min,
            "smoothing_eps": self.smoothing_eps,
            "scheme": self.scheme.value,
            "inner": dict(self.inner.__dict__),
            "polish_q": self.polish_q,
            "progress_tol": self.progress_tol,
            "adapt_M": self.adapt_M,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SolverOptions":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown solver option(s): {sorted(unknown)}")
        if "inner" in doc:
            inner = dict(doc["inner"])
            bad = set(inner) - set(BarrierSettings.__dataclass_fields__)
            if bad:
                raise DomainError(f"unknown inner solver option(s): {sorted(bad)}")
            doc["inner"] = BarrierSettings(**inner)
        return cls(**doc)


def default_proximal_weight(cfg: ScenarioConfig, mu1: float, mu2: float) -> float:
    """2 max(mu1, mu2, W/(delta D)): the thrust gradient per metre of visual
    range sets the curvature scale."""
    return 2.0 * max(mu1, mu2, cfg.thrust.weight_force / (cfg.delta * cfg.d_max))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    surrogate_objective: float
    exact_objective: float
    step_norm: float
    beta: float
    inner_iters: int
    kkt_residual: float
    note: str = ""


@dataclass
class IterateState:
    current: TrajectoryPlan
    previous: TrajectoryPlan
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    extrapolation: ExtrapolationState = field(default_factory=ExtrapolationState)
    records: list = field(default_factory=list)
    step_norm: float = float("inf")
    stalled: bool = False  # last step rejected at inner-solver accuracy


def exact_objective(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig, mu1, mu2) -> float:
    """Objective with the propulsion power of the actual speeds (q eliminated)."""
    from .dc_transform import plan_thrust
    from .scenario import disguise_metric

    ph = propulsion_power_exact(plan.speeds(cfg.delta), cfg.propulsion)
    return float(np.sum(ph) + plan_thrust(plan, cfg).sum() - disguise_metric(plan, track, cfg, mu1, mu2).sum())


def _objective(plan, track, cfg, mu1, mu2, build: BuildOptions):
    val = surrogate_objective(plan, track, cfg, mu1, mu2, dst=build.dst)
    if build.soft_distance is not None:
        val += soft_distance_penalty(plan, track, cfg, build.soft_distance, build.ffr_margin)
    return val


def soft_distance_penalty(plan, track, cfg, weight, margin=None) -> float:
    """weight * sum_t max(0, d3_t^2 - (D - margin_t)^2)^2, the penalty that
    replaces the distance rows in soft mode."""
    n = plan.n_slots
    bound = cfg.d_max - (np.zeros(n) if margin is None else np.asarray(margin, dtype=float))
    wp = plan.waypoints[1:]
    diff = np.column_stack([wp[:, :2] - track.waypoints[1 : n + 1], wp[:, 2] - track.altitude])
    excess = np.maximum((diff**2).sum(axis=1) - bound**2, 0.0)
    return float(weight * (excess**2).sum())


def pdcae_iterate(
    state: IterateState,
    track: TargetTrack,
    cfg: ScenarioConfig,
    opts: SolverOptions,
    approx: SolarLinearApprox,
    M: float,
    build: BuildOptions,
    inner=solve_convex,
) -> IterateState:
    """One extrapolated proximal DC step at a fresh SCA expansion.

    A step that raises the objective is redone without momentum. If that
    still fails by no more than the inner duality gap, the iterate is kept
    and ``stalled`` is set; larger increases raise MonotonicityError.
    """
    mu1 = cfg.mu1 if build.mu1 is None else build.mu1
    mu2 = cfg.mu2 if build.mu2 is None else build.mu2
    x_cur = state.current.decision_vector()
    f_cur = _objective(state.current, track, cfg, mu1, mu2, build)
    beta = next_beta(state.extrapolation)
    note = ""
    total_inner = 0
    for attempt in range(2):
        center = extrapolate(x_cur, state.previous.decision_vector(), beta)
        sub = build_subproblem(state.current, center, track, cfg, M, approx, build)
        sol: InnerSolution = inner(sub, x_cur, opts.inner)
        total_inner += sol.inner_iterations
        if sol.status is Status.INFEASIBLE:
            raise InnerSolverError("subproblem has no strictly feasible point", sol.kkt_residual, sol.status)
        if sol.status is not Status.OPTIMAL and not np.isfinite(sol.kkt_residual):
            raise InnerSolverError("inner solver failed", sol.kkt_residual, sol.status)
        cand = TrajectoryPlan.from_decision(sol.point, state.current.start)
        f_new = _objective(cand, track, cfg, mu1, mu2, build)
        if f_new <= f_cur + MONOTONE_TOL:
            break
        if attempt == 0 and beta > 0:
            note = "momentum dropped"
            state.extrapolation.restart()
            next_beta(state.extrapolation)
            beta = 0.0
            continue
        if f_new - f_cur <= sol.gap + MONOTONE_TOL:
            # the proximal step is below the inner solver's resolution
            rec = IterationRecord(state.iteration + 1, f_cur,
                                  exact_objective(state.current, track, cfg, mu1, mu2),
                                  0.0, beta, total_inner, sol.kkt_residual, "rejected at inner accuracy")
            state.records.append(rec)
            state.objective_trace.append(f_cur)
            state.iteration += 1
            state.step_norm = 0.0
            state.stalled = True
            return state
        raise MonotonicityError(
            f"objective rose from {f_cur!r} to {f_new!r} at iteration {state.iteration + 1}"
        )
    if opts.polish_q:
        # the SCA rows let q lag its root; tightening is feasible and only lowers
        # the objective, and a small slack keeps the next expansion strictly feasible
        cand = polish_q(cand, cfg, slack=Q_TIGHTEN_SLACK)
        f_new = _objective(cand, track, cfg, mu1, mu2, build)
    x_new = cand.decision_vector()
    step = float(np.linalg.norm(x_new - x_cur))
    state.step_norm = step / max(1.0, float(np.linalg.norm(x_new)))
    state.previous, state.current = state.current, cand
    state.iteration += 1
    state.stalled = False
    state.objective_trace.append(f_new)
    rec = IterationRecord(state.iteration, f_new, exact_objective(cand, track, cfg, mu1, mu2),
                          state.step_norm, beta, total_inner, sol.kkt_residual, note)
    state.records.append(rec)
    log.info("iter=%d surrogate_objective=%.9g exact_objective=%.9g step_norm=%.3e beta=%.4f inner_iters=%d",
             rec.iteration, rec.surrogate_objective, rec.exact_objective, rec.step_norm, rec.beta,
             rec.inner_iters)
    return state


def polish_q(plan: TrajectoryPlan, cfg: ScenarioConfig, slack: float = 0.0) -> TrajectoryPlan:
    """Lower every q to the exact root for its slot speed.

    The SCA rows only bound q from below by a minorant, so q can sit slightly
    above the root; the root is feasible for the exact relation and strictly
    cheaper. ``slack`` leaves q that fraction above the root.
    """
    q = np.asarray(solve_q_exact(plan.speeds(cfg.delta), cfg.propulsion.v0), dtype=float) * (1.0 + slack)
    return TrajectoryPlan(np.array(plan.waypoints), np.minimum(q, plan.q))


@dataclass
class OfflineOutcome:
    plan: TrajectoryPlan
    records: list
    converged: bool
    iterations: int
    M: float
    approx: SolarLinearApprox
    mu1: float
    mu2: float
    status: str
    unpolished_objective: float | None = None
    M_initial: float | None = None


def run_pdcae(
    track: TargetTrack,
    cfg: ScenarioConfig,
    opts: SolverOptions,
    approx: SolarLinearApprox | None = None,
    start_plan: TrajectoryPlan | None = None,
    build: BuildOptions | None = None,
) -> OfflineOutcome:
    """Outer loop shared by the offline solver and the receding-horizon planner."""
    scheme = Scheme(opts.scheme)
    mu1, mu2 = scheme_weights(scheme, cfg.mu1, cfg.mu2)
    if approx is None:
        approx = solar_model(cfg)
    build = build or BuildOptions()
    build = replace(build, mdr=build.mdr or scheme is Scheme.MDR, dst=build.dst or scheme is Scheme.DST,
                    q_min=opts.q_min, smoothing_eps=opts.smoothing_eps, mu1=mu1, mu2=mu2)
    M = opts.M if opts.M is not None else default_proximal_weight(cfg, mu1, mu2)
    M_initial = M
    plan0 = start_plan if start_plan is not None else initial_plan(track, cfg)
    try:
        plan0 = restore_feasibility(plan0, track, cfg, approx, M, build)
    except Phase1Failure as exc:
        log.warning("no feasible start: %s", exc)
        return OfflineOutcome(plan0, [], False, 0, M, approx, mu1, mu2, "infeasible", None, M_initial)
    state = IterateState(plan0, plan0, extrapolation=ExtrapolationState(restart_period=opts.restart_period))
    f_start = _objective(plan0, track, cfg, mu1, mu2, build)
    converged = False
    status = "max_iters"
    halved_at = -2
    while state.iteration < opts.max_iters:
        try:
            state = pdcae_iterate(state, track, cfg, opts, approx, M, build)
        except InfeasibleIterateError:
            status = "infeasible_iterate"
            break
        if state.stalled or state.step_norm < opts.eps_converge:
            trace = state.objective_trace
            prev_f = trace[-2] if len(trace) > 1 else f_start
            moved = abs(prev_f - trace[-1]) > opts.progress_tol * max(1.0, abs(trace[-1]))
            if moved and not state.stalled:
                continue
            if opts.adapt_M and M > M_FLOOR and halved_at != state.iteration - 1:
                # no progress at this proximal weight: retry with longer steps, and
                # stop only if the halved weight makes no progress either
                M = max(M_FLOOR, 0.5 * M)
                halved_at = state.iteration
                state.stalled = False
                continue
            converged = True
            status = "converged"
            break
    plan = state.current
    unpolished = None
    if opts.polish_q and not build.dst:
        unpolished = surrogate_objective(plan, track, cfg, mu1, mu2)
        plan = polish_q(plan, cfg)
    return OfflineOutcome(plan, state.records, converged, state.iteration, M, approx, mu1, mu2, status,
                          unpolished, M_initial)


FEASIBILITY_TOL = 1e-9


def restore_feasibility(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
                        approx: SolarLinearApprox, M: float, build: BuildOptions) -> TrajectoryPlan:
    """Return ``plan`` if it satisfies the constraint set expanded at itself,
    else the nearest strictly feasible point phase-1 finds along its path."""
    sub = build_subproblem(plan, plan, track, cfg, M, approx, build, check=False)
    x0 = plan.decision_vector()
    if sub.constraint_values(x0).max() <= FEASIBILITY_TOL:
        return plan
    fixed = phase1_feasible(sub, x0)
    log.info("start plan repaired by phase-1 (max move %.3g)", float(np.max(np.abs(fixed - x0))))
    return TrajectoryPlan.from_decision(fixed, plan.start)


def solve_offline(track: TargetTrack, cfg: ScenarioConfig, opts: SolverOptions | None = None,
                  approx: SolarLinearApprox | None = None) -> RunReport:
    """Full offline plan for the whole mission, packaged as a report."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    out = run_pdcae(track, cfg, opts, approx)
    return outcome_report(out, track, cfg, opts, time.perf_counter() - t0)


def outcome_report(out: OfflineOutcome, track: TargetTrack, cfg: ScenarioConfig, opts: SolverOptions,
                   wall_time: float, scheme: str | None = None, extra: dict | None = None) -> RunReport:
    solver = opts.to_dict()
    solver.update({"M_initial": out.M_initial, "M_final": out.M, "iterations": out.iterations})
    info = {
        "solar_line": {"c1": out.approx.c1, "c2": out.approx.c2, "band": list(out.approx.z_band),
                       "audited": out.approx.audited},
        "objective_before_q_polish": out.unpolished_objective,
        "weights": {"mu1": out.mu1, "mu2": out.mu2},
    }
    info.update(extra or {})
    rep = build_report(scheme or Scheme(opts.scheme).value, out.plan, track, cfg, out.approx, out.mu1, out.mu2,
                       solver, out.records, out.converged, out.status, info)
    rep.wall_time = wall_time
    return rep


def solar_model(cfg: ScenarioConfig) -> SolarLinearApprox:
    """Linear solar bound: configured coefficients, else a fitted under-estimator."""
    from .power import solar_approx_from_constants

    band = cfg.fit_band
    if cfg.solar_coeffs is not None:
        c1, c2 = cfg.solar_coeffs
        return solar_approx_from_constants(c1, c2, cfg.solar, band)
    return fit_solar_linear(cfg.solar, band)
