"""Primal log-barrier interior-point solver for the proximal subproblems."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .banded import StructuredMatrix
from .dc_transform import ConvexSubproblem

log = logging.getLogger(__name__)

DELTA_STRICT = 1e-8


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    INFEASIBLE = "Infeasible"


class Phase1Failure(RuntimeError):
    """No strictly feasible point exists (or none was found)."""


@dataclass
class InnerSolution:
    point: np.ndarray
    kkt_residual: float
    inner_iterations: int
    status: Status
    stages: int = 0
    gap: float = float("nan")


@dataclass(frozen=True)
class BarrierSettings:
    gap_tol: float = 1e-7  # duality-gap target m/t relative to max(1, |objective|)
    mu: float = 10.0  # barrier parameter growth per stage
    newton_tol: float = 1e-10  # half squared Newton decrement
    max_newton: int = 200  # per stage
    max_total: int = 2000
    kkt_tol: float = 1e-6
    prox_fraction: float = 0.1  # initial barrier term vs proximal term
    # warm starts closer than this to a constraint are moved inward first;
    # damped Newton crawls along the boundary from such points
    recenter_slack: float = 1e-6


def _newton_direction(hess, grad):
    if isinstance(hess, StructuredMatrix):
        try:
            return hess.solve(-grad)
        except np.linalg.LinAlgError:
            hess = hess.dense()
    try:
        c = scipy.linalg.cho_factor(hess, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(c, -grad, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(hess)))))
    for jitter in (1e-12, 1e-10, 1e-8, 1e-6):
        try:
            c = scipy.linalg.cho_factor(hess + jitter * scale * np.eye(len(grad)), lower=True,
                                        check_finite=False)
            return scipy.linalg.cho_solve(c, -grad, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    return np.linalg.lstsq(hess, -grad, rcond=None)[0]


def _center(obj, cons, bterms, v, t, settings, budget, stop=None):
    """Damped Newton on t*obj - sum log(-g). Returns (v, steps, converged).

    ``stop(v)`` returning True ends the iteration early (reported as converged).
    """
    steps, best_dec, stalled = 0, np.inf, 0
    g = cons(v)
    for _ in range(min(settings.max_newton, budget)):
        if stop is not None and stop(v):
            return v, steps, True
        s = -g
        val, gval, hval = obj(v)
        bg, bh = bterms(v, 1.0 / s, 1.0 / s**2)
        grad = t * gval + bg
        hess = t * hval + bh
        dv = _newton_direction(hess, grad)
        dec = -grad @ dv
        steps += 1
        if not np.isfinite(dec) or dec / 2 <= settings.newton_tol:
            return v, steps, True
        phi0 = t * val - np.log(s).sum()
        # differences below this are rounding noise in phi
        noise = 1e-13 * (abs(t * val) + np.abs(np.log(s)).sum())
        step = 1.0
        while step > 1e-14:
            trial = v + step * dv
            gt = cons(trial)
            if np.all(gt < 0):
                phi = t * obj_value(obj, trial) - np.log(-gt).sum()
                if phi <= phi0 - 0.25 * step * dec + noise:
                    break
            step *= 0.5
        else:
            return v, steps, dec <= 1e3 * noise
        # rounding floor: the decrement has stopped shrinking and phi barely moves
        slow = dec > 0.5 * best_dec and phi0 - phi <= 1e3 * noise
        stalled = stalled + 1 if slow else 0
        best_dec = min(best_dec, dec)
        if stalled >= 8:
            return trial, steps, False
        v, g = trial, gt
    return v, steps, False


def obj_value(obj, v):
    fn = getattr(obj, "value", None)
    return fn(v) if fn is not None else obj(v)[0]


class _Objective:
    def __init__(self, derivs, value):
        self._derivs = derivs
        self.value = value

    def __call__(self, v):
        return self._derivs(v)


def solve_convex(sub: ConvexSubproblem, warm_start, settings: BarrierSettings | None = None) -> InnerSolution:
    """Minimise the subproblem objective over its constraint set."""
    settings = settings or BarrierSettings()
    v = np.array(warm_start, dtype=float)
    g = sub.constraint_values(v)
    if not np.all(g < 0):
        try:
            v = phase1_feasible(sub, v, target=settings.recenter_slack)
        except Phase1Failure:
            return InnerSolution(v, float("inf"), 0, Status.INFEASIBLE)
        g = sub.constraint_values(v)
    elif settings.recenter_slack > 0 and np.max(g) > -settings.recenter_slack:
        try:
            v = phase1_feasible(sub, v, target=settings.recenter_slack)
        except Phase1Failure:
            pass  # still strictly feasible, just poorly centred
        g = sub.constraint_values(v)
    m = len(g)
    obj = _Objective(lambda w: sub.objective_derivs(w, structured=True), sub.objective)
    bterms = lambda w, a, b: sub.barrier_terms(w, a, b, structured=True)  # noqa: E731
    scale = max(1.0, abs(sub.objective(v)))
    # barrier weight m/t starts at prox_fraction of the objective magnitude
    t = m / (settings.prox_fraction * scale)
    t_final = m / (settings.gap_tol * scale)
    t = max(t, min(_central_weight(sub, v), t_final))
    total, stages = 0, 0
    while True:
        v, n_steps, ok = _center(obj, sub.constraint_values, bterms, v, t, settings,
                                 settings.max_total - total)
        total += n_steps
        stages += 1
        scale = max(1.0, abs(sub.objective(v)))
        if m / t <= settings.gap_tol * scale or total >= settings.max_total:
            break
        t *= settings.mu
    kkt = kkt_residual(sub, v, t)
    status = Status.OPTIMAL if kkt <= settings.kkt_tol else Status.MAX_ITERS
    return InnerSolution(v, kkt, total, status, stages, m / t)


def barrier_duals(sub: ConvexSubproblem, v, t) -> np.ndarray:
    """Multipliers 1/(t s) corrected by one Newton step of the centring problem.

    The plain estimate inherits the conditioning of the 1/s^2 barrier Hessian;
    the correction makes the linearised stationarity condition exact.
    """
    s = -sub.constraint_values(v)
    _, gval, hval = sub.objective_derivs(v, structured=True)
    bg, bh = sub.barrier_terms(v, 1.0 / s, 1.0 / s**2, structured=True)
    dv = _newton_direction(t * hval + bh, t * gval + bg)
    jdv = sub.jacobian_product(v, dv)
    return np.maximum(0.0, (1.0 + jdv / s) / (t * s))


def _central_weight(sub: ConvexSubproblem, v, tol: float = 0.1) -> float:
    """Least-squares t with t*grad f ~ -grad barrier, or 0 if ``v`` is far off
    the central path; lets an already-optimal warm start skip early stages."""
    s = -sub.constraint_values(v)
    _, gf, _ = sub.objective_derivs(v)
    gb = sub.weighted_jacobian_sum(v, 1.0 / s)
    denom = float(gf @ gf)
    if denom == 0.0:
        return 0.0
    t = -float(gf @ gb) / denom
    if t <= 0 or np.linalg.norm(t * gf + gb) > tol * np.linalg.norm(t * gf):
        return 0.0
    return t


def kkt_residual(sub: ConvexSubproblem, v, t) -> float:
    """Relative stationarity + complementarity residual."""
    s = -sub.constraint_values(v)
    lam = barrier_duals(sub, v, t)
    _, grad, _ = sub.objective_derivs(v)
    jl = sub.weighted_jacobian_sum(v, lam)
    r = grad + jl
    stat = np.max(np.abs(r)) / (1.0 + max(np.max(np.abs(grad)), np.max(np.abs(jl))))
    comp = float(lam @ s) / (1.0 + abs(sub.objective(v)))
    return float(max(stat, comp))


def phase1_feasible(sub: ConvexSubproblem, hint, target: float = 1e-6, max_steps: int = 400) -> np.ndarray:
    """Return a point with every constraint slack >= ``target`` (at least
    DELTA_STRICT), close to ``hint``; raise Phase1Failure otherwise.

    Minimises the common slack variable plus a proximity term whose weight
    decays by 10x per barrier stage, stopping at the first acceptable point.
    """
    target = max(target, DELTA_STRICT)
    v0 = np.array(hint, dtype=float)
    v0[3::4] = np.maximum(v0[3::4], 1e-3)
    g0 = sub.constraint_values(v0)
    if not np.all(np.isfinite(g0)):
        raise Phase1Failure("hint outside the constraint domain")
    if np.all(g0 <= -target):
        return v0
    n = len(v0)
    rho = [1e-2]

    def cons(w):
        return sub.constraint_values(w[:n]) - w[n]

    def derivs(w):
        d = w[:n] - v0
        val = w[n] + 0.5 * rho[0] * d @ d
        grad = np.concatenate([rho[0] * d, [1.0]])
        hess = np.zeros((n + 1, n + 1))
        hess[np.diag_indices(n)] = rho[0]
        return val, grad, hess

    def bterms(w, a, b):
        gv, hv = sub.barrier_terms(w[:n], a, b)
        jb = sub.weighted_jacobian_sum(w[:n], b)
        grad = np.concatenate([gv, [-a.sum()]])
        hess = np.zeros((n + 1, n + 1))
        hess[:n, :n] = hv
        hess[:n, n] = -jb
        hess[n, :n] = -jb
        hess[n, n] = b.sum()
        return grad, hess

    def done(w):
        return w[n] <= -target and np.all(sub.constraint_values(w[:n]) <= -target)

    obj = _Objective(derivs, lambda w: derivs(w)[0])
    w = np.concatenate([v0, [float(np.max(g0)) + 1.0]])
    m = len(g0)
    t = 1.0
    settings = BarrierSettings(newton_tol=1e-9, max_newton=60)
    used = 0
    while used < max_steps:
        w, k, _ = _center(obj, cons, bterms, w, t, settings, max_steps - used, stop=done)
        used += k
        if done(w):
            return _pull_back(sub, v0, w[:n], target)
        if m / t < 1e-10 and rho[0] < 1e-12:
            break
        t *= 10.0
        rho[0] *= 0.1
    raise Phase1Failure(f"no strictly feasible point found (best max-violation {w[n]:.3g})")


def _pull_back(sub: ConvexSubproblem, hint, feasible, target: float, iters: int = 60) -> np.ndarray:
    """Point on the segment hint -> feasible closest to ``hint`` whose slacks
    are all >= target. Convexity makes the acceptable part of the segment an
    interval containing the far end."""
    lo, hi = 0.0, 1.0
    d = feasible - hint
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = sub.constraint_values(hint + mid * d)
        if np.all(np.isfinite(g)) and np.all(g <= -target):
            hi = mid
        else:
            lo = mid
    return hint + hi * d
