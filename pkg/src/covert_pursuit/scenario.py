"""Scenario configuration, target tracks, feasibility predicates and the
shadow initial plan."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .power import (
    DomainError,
    PropulsionParams,
    SolarParams,
    ThrustParams,
    solve_q_exact,
)


class TrackFormatError(ValueError):
    """Malformed target-track CSV."""


class InfeasibleScenarioError(RuntimeError):
    """The scenario admits no plan built by the requested construction."""


@dataclass(frozen=True)
class ScenarioConfig:
    horizon_T: float = 30.0
    delta: float = 0.2
    n_slots: int | None = None
    v_hm: float = 30.0
    v_vm: float = 8.0
    target_alt_H: float = 100.0
    monitor_z0: float = 102.0
    z_lower: float = 101.0
    d_max: float = 20.0
    mu1: float = 0.2
    mu2: float = 0.1
    e0: float = 50_000.0
    eta0: float = 0.9
    c3: float = 1.0
    propulsion: PropulsionParams = field(default_factory=PropulsionParams)
    thrust: ThrustParams = field(default_factory=ThrustParams)
    solar: SolarParams = field(default_factory=SolarParams)
    # sanity bound on the target's per-slot speed (m/s)
    target_speed_max: float = 30.0
    # (c1, c2) override for the linear solar bound; None means self-fit
    solar_coeffs: tuple[float, float] | None = None
    # altitude band of the solar fit; None means [z_lower, z_lower + 100]
    solar_band: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.delta > 0 or not self.horizon_T > 0:
            raise DomainError("horizon and slot duration must be positive")
        n = self.n_slots
        if n is None:
            n = int(round(self.horizon_T / self.delta))
            object.__setattr__(self, "n_slots", n)
        if n < 1 or not math.isclose(n * self.delta, self.horizon_T, rel_tol=1e-9):
            raise DomainError(f"n_slots*delta must equal horizon_T ({n}*{self.delta} != {self.horizon_T})")
        if not self.target_alt_H < self.z_lower <= self.monitor_z0:
            raise DomainError("require target_alt_H < z_lower <= monitor_z0")
        if not self.d_max > self.z_lower - self.target_alt_H:
            raise DomainError("d_max must exceed z_lower - target_alt_H")
        if not 0 < self.eta0 <= 1:
            raise DomainError("eta0 must lie in (0, 1]")
        if self.mu1 < 0 or self.mu2 < 0:
            raise DomainError("disguise weights must be nonnegative")
        if self.v_hm <= 0 or self.v_vm <= 0:
            raise DomainError("speed limits must be positive")
        if self.e0 < 0 or self.c3 < 0:
            raise DomainError("e0 and c3 must be nonnegative")
        if self.solar_coeffs is not None:
            object.__setattr__(self, "solar_coeffs", tuple(float(c) for c in self.solar_coeffs))
        if self.solar_band is not None:
            lo, hi = (float(c) for c in self.solar_band)
            object.__setattr__(self, "solar_band", (lo, hi))

    @property
    def hop_max(self) -> float:
        """Largest horizontal displacement per slot (m)."""
        return self.v_hm * self.delta

    @property
    def climb_max(self) -> float:
        """Largest vertical displacement per slot (m)."""
        return self.v_vm * self.delta

    @property
    def fit_band(self) -> tuple[float, float]:
        if self.solar_band is not None:
            return self.solar_band
        return (self.z_lower, self.z_lower + 100.0)

    def replace(self, **changes) -> "ScenarioConfig":
        if "horizon_T" in changes or "delta" in changes:
            changes.setdefault("n_slots", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(doc)
        for key, sub in (("propulsion", PropulsionParams), ("thrust", ThrustParams), ("solar", SolarParams)):
            if key in kw:
                kw[key] = _nested(sub, kw[key], key)
        for key in ("solar_coeffs", "solar_band"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def _nested(cls, doc, where):
    if isinstance(doc, cls):
        return doc
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise KeyError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**doc)


@dataclass(frozen=True, eq=False)
class TargetTrack:
    """Target waypoints (a_t, b_t) for t = 0..N at altitude ``altitude``."""

    waypoints: np.ndarray
    altitude: float = 100.0

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 1:
            raise ValueError("target waypoints must have shape (N+1, 2)")
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)

    def __len__(self):
        return len(self.waypoints)

    @property
    def a(self) -> np.ndarray:
        return self.waypoints[:, 0]

    @property
    def b(self) -> np.ndarray:
        return self.waypoints[:, 1]

    @property
    def n_slots(self) -> int:
        return len(self.waypoints) - 1

    def max_hop(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def window(self, start: int, stop: int) -> "TargetTrack":
        return TargetTrack(self.waypoints[start:stop], self.altitude)


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    """Monitor waypoints for t = 0..N (row 0 is the fixed start) and the
    propulsion slack q_t for t = 1..N."""

    waypoints: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=float)
        q = np.array(self.q, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3:
            raise ValueError("monitor waypoints must have shape (N+1, 3)")
        if q.shape != (len(wp) - 1,):
            raise ValueError("q must have one entry per slot")
        if np.any(q < 0):
            raise DomainError("q must be nonnegative")
        wp.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "q", q)

    @property
    def n_slots(self) -> int:
        return len(self.q)

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    def steps(self) -> np.ndarray:
        """Per-slot displacements, shape (N, 3)."""
        return np.diff(self.waypoints, axis=0)

    def speeds(self, delta: float) -> np.ndarray:
        return np.linalg.norm(self.steps()[:, :2], axis=1) / delta

    def decision_vector(self) -> np.ndarray:
        """Flattened per-slot (x, y, z, q) decision variables, length 4N."""
        return np.column_stack([self.waypoints[1:], self.q]).ravel()

    @classmethod
    def from_decision(cls, vec, start) -> "TrajectoryPlan":
        blk = np.asarray(vec, dtype=float).reshape(-1, 4)
        wp = np.vstack([np.asarray(start, dtype=float)[None, :], blk[:, :3]])
        return cls(wp, np.maximum(blk[:, 3], 0.0))


@dataclass(frozen=True)
class Violation:
    slot: int
    constraint: str
    magnitude: float


def generate_target_track(cfg: ScenarioConfig) -> TargetTrack:
    """a = 10*tau, b = 100*sin(tau/5) with tau = t*delta the elapsed seconds."""
    tau = np.arange(cfg.n_slots + 1) * cfg.delta
    return TargetTrack(np.column_stack([10.0 * tau, 100.0 * np.sin(tau / 5.0)]), cfg.target_alt_H)


def stationary_track(cfg: ScenarioConfig, a: float = 0.0, b: float = 0.0) -> TargetTrack:
    return TargetTrack(np.tile([a, b], (cfg.n_slots + 1, 1)), cfg.target_alt_H)


def export_target_track(track: TargetTrack, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "a", "b"])
    for t, (a, b) in enumerate(track.waypoints):
        w.writerow([t, repr(float(a)), repr(float(b))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_target_track(path, altitude: float = 100.0, expected_slots: int | None = None) -> TargetTrack:
    """Parse a ``t,a,b`` CSV; rows must be slot-indexed 0, 1, 2, ..."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise TrackFormatError("no waypoints: empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["t", "a", "b"]:
        raise TrackFormatError(f"row 1: expected header 't,a,b', got {','.join(rows[0])!r}")
    body = rows[1:]
    if not body:
        raise TrackFormatError("no waypoints: header only")
    pts = []
    for i, row in enumerate(body):
        lineno = i + 2
        if len(row) != 3:
            raise TrackFormatError(f"row {lineno}: expected 3 fields, got {len(row)}")
        try:
            t = int(row[0])
            a, b = float(row[1]), float(row[2])
        except ValueError as exc:
            raise TrackFormatError(f"row {lineno}: {exc}") from None
        if not (math.isfinite(a) and math.isfinite(b)):
            raise TrackFormatError(f"row {lineno}: non-finite coordinate")
        if t != i:
            if t > i:
                raise TrackFormatError(f"row {lineno}: missing slot {i} (found slot {t})")
            raise TrackFormatError(f"row {lineno}: slot index {t} not increasing")
        pts.append((a, b))
    if expected_slots is not None and len(pts) != expected_slots + 1:
        raise TrackFormatError(f"expected {expected_slots + 1} waypoints, found {len(pts)}")
    return TargetTrack(np.array(pts), altitude)


def in_ffr(monitor_wp, target_wp, cfg: ScenarioConfig, tol: float = 0.0) -> bool:
    """Feasible flight region test; boundaries are inclusive."""
    x, y, z = (float(c) for c in monitor_wp)
    a, b = (float(c) for c in target_wp[:2])
    d2 = (x - a) ** 2 + (y - b) ** 2 + (z - cfg.target_alt_H) ** 2
    return (
        d2 <= cfg.d_max**2 + tol
        and x <= a + tol
        and y <= b + tol
        and z >= cfg.z_lower - tol
    )


def ffr_margins(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig) -> np.ndarray:
    """Per-slot slack of the four region inequalities, shape (N, 4).

    Columns: D - 3D distance, a - x, b - y, z - z_lower.
    """
    wp = plan.waypoints[1:]
    tw = track.waypoints[1 : len(wp) + 1]
    d3 = np.sqrt(((wp[:, :2] - tw) ** 2).sum(axis=1) + (wp[:, 2] - cfg.target_alt_H) ** 2)
    return np.column_stack([cfg.d_max - d3, tw[:, 0] - wp[:, 0], tw[:, 1] - wp[:, 1], wp[:, 2] - cfg.z_lower])


def audit_mobility(
    plan: TrajectoryPlan, cfg: ScenarioConfig, tol: float = 1e-9, prev_dz: float | None = None
) -> list[Violation]:
    """Check speed and altitude-rate limits; ``prev_dz`` is the climb of the
    slot preceding the plan, when the plan continues an executed path."""
    if plan.n_slots != cfg.n_slots:
        raise DomainError(f"plan has {plan.n_slots} slots, config expects {cfg.n_slots}")
    return audit_steps(plan.steps(), cfg, tol, prev_dz)


def audit_steps(steps: np.ndarray, cfg: ScenarioConfig, tol: float = 1e-9, prev_dz=None) -> list[Violation]:
    out = []
    hop = np.linalg.norm(steps[:, :2], axis=1)
    for t in np.nonzero(hop > cfg.hop_max + tol)[0]:
        out.append(Violation(int(t) + 1, "horizontal_speed", float(hop[t] - cfg.hop_max)))
    dz = steps[:, 2]
    for t in np.nonzero(np.abs(dz) > cfg.climb_max + tol)[0]:
        out.append(Violation(int(t) + 1, "vertical_speed", float(abs(dz[t]) - cfg.climb_max)))
    chain = dz if prev_dz is None else np.concatenate([[prev_dz], dz])
    offset = 2 if prev_dz is None else 1
    acc = np.abs(np.diff(chain))
    for t in np.nonzero(acc > cfg.climb_max + tol)[0]:
        out.append(Violation(int(t) + offset, "vertical_accel", float(acc[t] - cfg.climb_max)))
    return sorted(out, key=lambda v: (v.slot, v.constraint))


def disguise_metric(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
                    mu1: float | None = None, mu2: float | None = None) -> np.ndarray:
    """Per-slot f_t = mu1*d_t^2 + mu2*dz_t^2 for t = 1..N."""
    mu1 = cfg.mu1 if mu1 is None else mu1
    mu2 = cfg.mu2 if mu2 is None else mu2
    n = plan.n_slots
    if len(track) < n + 1:
        raise DomainError("target track shorter than plan")
    wp = plan.waypoints
    d2 = ((wp[1:, :2] - track.waypoints[1 : n + 1]) ** 2).sum(axis=1)
    dz = np.diff(wp[:, 2])
    return mu1 * d2 + mu2 * dz**2


def initial_plan(track: TargetTrack, cfg: ScenarioConfig, start=None) -> TrajectoryPlan:
    """Shadow the target horizontally at altitude z0.

    The monitor's own start defaults to (0, 0, z0).
    """
    if cfg.monitor_z0 < cfg.z_lower:
        raise InfeasibleScenarioError("monitor_z0 lies below z_lower")
    n = cfg.n_slots
    if len(track) < n + 1:
        raise DomainError("target track shorter than the horizon")
    start = np.array([0.0, 0.0, cfg.monitor_z0]) if start is None else np.asarray(start, dtype=float)
    wp = np.empty((n + 1, 3))
    wp[0] = start
    wp[1:, :2] = track.waypoints[1 : n + 1]
    wp[1:, 2] = start[2]
    speeds = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1) / cfg.delta
    plan = TrajectoryPlan(wp, solve_q_exact(speeds, cfg.propulsion.v0))
    bad = audit_mobility(plan, cfg)
    if bad:
        v = bad[0]
        raise InfeasibleScenarioError(
            f"shadow plan violates {v.constraint} at slot {v.slot} by {v.magnitude:.4g}; adjust the scenario"
        )
    for t in range(1, n + 1):
        if not in_ffr(wp[t], track.waypoints[t], cfg):
            raise InfeasibleScenarioError(f"shadow plan leaves the flight region at slot {t}")
    return plan
