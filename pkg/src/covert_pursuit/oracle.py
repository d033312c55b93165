"""Independent reference computations: brute-force search on tiny instances
and central finite differences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .power import DomainError, propulsion_power_exact, solar_power_exact, solve_q_exact, thrust_power
from .scenario import ScenarioConfig, TargetTrack, TrajectoryPlan

MAX_EVALUATIONS = 10**8
MAX_SLOTS = 3


class GridTooLargeError(ValueError):
    def __init__(self, estimate: int, limit: int):
        super().__init__(f"grid needs about {estimate:.3g} evaluations (limit {limit:.3g})")
        self.estimate = estimate
        self.limit = limit


@dataclass
class OracleResult:
    objective: float  # unscaled: sum_t (P_h + P_v - f_t), Watts
    plan: TrajectoryPlan | None
    evaluations: int  # complete plans scored
    grid_step: float
    size_estimate: int  # product of per-slot candidate counts


def slot_candidates(target_xy, cfg: ScenarioConfig, grid_step: float, altitude: float) -> np.ndarray:
    """Grid points of the flight region around one target waypoint, sorted
    lexicographically by (x, y, z). The grid is anchored at the target so the
    trailing corner x = a, y = b is always on it."""
    a, b = (float(c) for c in target_xy)
    k_xy = int(math.floor(cfg.d_max / grid_step + 1e-9))
    offs = -grid_step * np.arange(k_xy, -1, -1)
    z_top = altitude + cfg.d_max
    k_z = int(math.floor((z_top - cfg.z_lower) / grid_step + 1e-9))
    zs = cfg.z_lower + grid_step * np.arange(k_z + 1)
    gx, gy, gz = np.meshgrid(a + offs, b + offs, zs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    d_sq = (pts[:, 0] - a) ** 2 + (pts[:, 1] - b) ** 2 + (pts[:, 2] - altitude) ** 2
    return pts[d_sq <= cfg.d_max**2 * (1 + 1e-12)]


def _slot_cost(prev, cur, target_xy, cfg: ScenarioConfig, altitude: float):
    """Exact per-slot objective and net energy change for arrays of
    (prev, cur) waypoint pairs; also the mobility mask."""
    step = cur - prev
    hop = np.hypot(step[..., 0], step[..., 1])
    dz = step[..., 2]
    ph = propulsion_power_exact(hop / cfg.delta, cfg.propulsion)
    pv = thrust_power(cur[..., 2], prev[..., 2], cfg.thrust, cfg.delta)
    d2 = (cur[..., 0] - target_xy[0]) ** 2 + (cur[..., 1] - target_xy[1]) ** 2
    f = cfg.mu1 * d2 + cfg.mu2 * dz**2
    net = (solar_power_exact(cur[..., 2], cfg.solar) - ph - pv) * cfg.delta
    ok = (hop <= cfg.hop_max * (1 + 1e-12)) & (np.abs(dz) <= cfg.climb_max * (1 + 1e-12))
    return ph + pv - f, net, ok, dz


def brute_force_small(track: TargetTrack, cfg: ScenarioConfig, grid_step: float,
                      max_evaluations: int = MAX_EVALUATIONS, start=None) -> OracleResult:
    """Best plan over grid waypoints inside the flight region, scored with
    the exact power models and exact energy causality.

    Enumeration runs slot by slot in lexicographic (x, y, z) order and keeps
    the first minimum, so the incumbent is reproducible.
    """
    n = cfg.n_slots
    if n > MAX_SLOTS:
        raise DomainError(f"brute force handles at most {MAX_SLOTS} slots, got {n}")
    if not grid_step > 0:
        raise DomainError("grid_step must be > 0")
    if len(track) < n + 1:
        raise DomainError("target track shorter than the horizon")
    start = np.array([0.0, 0.0, cfg.monitor_z0]) if start is None else np.asarray(start, dtype=float)
    H = track.altitude
    cands = [slot_candidates(track.waypoints[t], cfg, grid_step, H) for t in range(1, n + 1)]
    estimate = int(np.prod([len(c) for c in cands], dtype=float))
    if estimate > max_evaluations:
        raise GridTooLargeError(estimate, max_evaluations)
    reserve = cfg.eta0 * cfg.e0  # usable energy above the mandatory reserve
    best = [math.inf, None]
    evaluations = 0

    def descend(t, prev, prev_dz, path, cost, energy):
        nonlocal evaluations
        c = cands[t]
        obj, net, ok, dz = _slot_cost(prev, c, track.waypoints[t + 1], cfg, H)
        if prev_dz is not None:
            ok &= np.abs(dz - prev_dz) <= cfg.climb_max * (1 + 1e-12)
        energy_t = energy + net
        ok &= energy_t >= -1e-9 * reserve
        total = cost + obj
        if t == n - 1:
            evaluations += int(ok.sum())
            if not ok.any():
                return
            masked = np.where(ok, total, np.inf)
            i = int(np.argmin(masked))  # first minimum in lexicographic order
            if masked[i] < best[0]:
                best[0] = float(masked[i])
                best[1] = path + [c[i]]
            return
        for i in np.nonzero(ok)[0]:
            descend(t + 1, c[i], float(dz[i]), path + [c[i]], float(total[i]), float(energy_t[i]))

    descend(0, start, None, [], 0.0, reserve)
    plan = None
    if best[1] is not None:
        wp = np.vstack([start[None, :], np.array(best[1])])
        speeds = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1) / cfg.delta
        plan = TrajectoryPlan(wp, np.asarray(solve_q_exact(speeds, cfg.propulsion.v0), dtype=float))
    return OracleResult(best[0], plan, evaluations, grid_step, estimate)


def lipschitz_cell_bound(cfg: ScenarioConfig, grid_step: float, samples: int = 4001) -> float:
    """Upper bound on how much the exact objective can change when every
    waypoint coordinate moves by at most half a grid step.

    A waypoint enters two propulsion terms (one for the last waypoint), one
    distance reward and two altitude-change rewards. Its thrust terms cancel
    except for the last waypoint.
    """
    v = np.linspace(0.0, cfg.hop_max / cfg.delta, samples)
    ph = np.asarray(propulsion_power_exact(v, cfg.propulsion))
    dph = float(np.max(np.abs(np.diff(ph) / np.diff(v)))) / cfg.delta  # W per metre of waypoint motion
    r = 0.5 * grid_step
    total = 0.0
    for t in range(1, cfg.n_slots + 1):
        hops = 2 if t < cfg.n_slots else 1
        # |dP/dx| + |dP/dy| <= sqrt(2) |grad_xy P|
        horiz = math.sqrt(2.0) * (hops * dph + 2 * cfg.mu1 * cfg.d_max)
        vert = 2 * 2 * cfg.mu2 * cfg.climb_max + (cfg.thrust.weight_force / cfg.delta if t == cfg.n_slots else 0.0)
        total += r * (horiz + vert)
    return total


def finite_diff_gradient(fn, point, h: float = 1e-6) -> np.ndarray:
    """Central differences (fn(x + h e_i) - fn(x - h e_i)) / 2h."""
    if not h > 0:
        raise DomainError("h must be > 0")
    x = np.array(point, dtype=float)
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(x)
        flat[i] = keep - h
        down = fn(x)
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    return out.reshape(x.shape)
