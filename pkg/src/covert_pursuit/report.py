"""Run reports: per-slot power breakdown, exact-model audit and file output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .power import SolarLinearApprox, propulsion_power_exact, solar_power_exact, thrust_power
from .scenario import ScenarioConfig, TargetTrack, TrajectoryPlan, audit_steps

COMMON_WEIGHTS = (0.2, 0.1)
TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "q", "Ph_exact", "Pv", "Ps_exact", "Ps_linear", "f", "d2", "d3")
ITERATION_COLUMNS = ("iter", "surrogate_objective", "exact_objective", "step_norm", "beta", "inner_iters",
                     "kkt_residual", "note")
AUDIT_TOL = 1e-6


def slot_breakdown(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
                   approx: SolarLinearApprox, mu1: float, mu2: float) -> dict:
    """Per-slot quantities for t = 1..N, each an array of length N."""
    n = plan.n_slots
    wp = plan.waypoints
    tw = track.waypoints[: n + 1]
    dz = np.diff(wp[:, 2])
    d2 = np.linalg.norm(wp[1:, :2] - tw[1:], axis=1)
    d3 = np.sqrt(d2**2 + (wp[1:, 2] - track.altitude) ** 2)
    return {
        "t": np.arange(1, n + 1),
        "x": wp[1:, 0],
        "y": wp[1:, 1],
        "z": wp[1:, 2],
        "q": np.asarray(plan.q),
        "Ph_exact": np.asarray(propulsion_power_exact(plan.speeds(cfg.delta), cfg.propulsion)),
        "Pv": np.asarray(thrust_power(wp[1:, 2], wp[:-1, 2], cfg.thrust, cfg.delta)),
        "Ps_exact": np.asarray(solar_power_exact(wp[1:, 2], cfg.solar)),
        "Ps_linear": np.asarray(approx(wp[1:, 2])),
        "f": mu1 * d2**2 + mu2 * dz**2,
        "d2": d2,
        "d3": d3,
        "dz": dz,
    }


def audit_plan(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
               breakdown: dict | None = None, tol: float = AUDIT_TOL, prev_dz: float | None = None,
               reserve_start: float | None = None) -> dict:
    """Check every constraint of the original problem with the exact power models.

    Returns a JSON-ready dict; ``ok`` is False when anything is violated
    beyond ``tol`` (relative to the bound's natural scale).
    """
    if breakdown is None:
        breakdown = slot_breakdown(plan, track, cfg, _null_solar(), 0.0, 0.0)
    problems = []
    for v in audit_steps(plan.steps(), cfg, tol=tol * cfg.hop_max, prev_dz=prev_dz):
        problems.append({"slot": v.slot, "constraint": v.constraint, "magnitude": v.magnitude})
    n = plan.n_slots
    wp = plan.waypoints[1:]
    tw = track.waypoints[1 : n + 1]
    checks = {
        "distance": breakdown["d3"] - cfg.d_max,
        "trail_x": wp[:, 0] - tw[:, 0],
        "trail_y": wp[:, 1] - tw[:, 1],
        "floor": cfg.z_lower - wp[:, 2],
    }
    for name, excess in checks.items():
        for t in np.nonzero(excess > tol * max(1.0, cfg.d_max))[0]:
            problems.append({"slot": int(t) + 1, "constraint": name, "magnitude": float(excess[t])})
    start = cfg.eta0 * cfg.e0 if reserve_start is None else reserve_start
    net = (breakdown["Ps_exact"] - breakdown["Ph_exact"] - breakdown["Pv"]) * cfg.delta
    margin = start + np.cumsum(net)  # energy above the mandatory reserve (J)
    rel = margin / max(cfg.eta0 * cfg.e0, 1.0)  # an empty battery is judged in Joules
    for t in np.nonzero(rel < -tol)[0]:
        problems.append({"slot": int(t) + 1, "constraint": "energy_causality", "magnitude": float(-margin[t])})
    problems.sort(key=lambda p: (p["slot"], p["constraint"]))
    return {
        "ok": not problems,
        "violations": problems,
        "max_distance": float(np.max(breakdown["d3"])) if n else 0.0,
        "min_causality_margin_J": float(np.min(margin)) if n else float(start),
        "min_causality_margin_rel": float(np.min(rel)) if n else 1.0,
    }


def _null_solar():
    return SolarLinearApprox(0.0, 0.0, (0.0, 1.0), audited=False)


def energy_totals(breakdown: dict, cfg: ScenarioConfig, mu_common=COMMON_WEIGHTS) -> dict:
    """Energies in Joules; objectives both per-slot summed (unscaled) and times delta."""
    dl = cfg.delta
    ph = float(np.sum(breakdown["Ph_exact"]))
    pv = float(np.sum(breakdown["Pv"]))
    f = float(np.sum(breakdown["f"]))
    d2sq = breakdown["d2"] ** 2
    f_common = float(np.sum(mu_common[0] * d2sq + mu_common[1] * breakdown["dz"] ** 2))
    unscaled = ph + pv - f
    return {
        "propulsion_J": ph * dl,
        "thrust_J": pv * dl,
        "consumed_J": (ph + pv) * dl,
        "harvested_J": float(np.sum(breakdown["Ps_exact"])) * dl,
        "harvested_linear_J": float(np.sum(breakdown["Ps_linear"])) * dl,
        "disguise": f,
        "disguise_common": f_common,
        "objective_unscaled": unscaled,
        "objective_scaled": unscaled * dl,
        "common_objective": (ph + pv - f_common) * dl,
    }


@dataclass
class RunReport:
    scheme: str
    config: dict
    solver: dict
    plan: TrajectoryPlan
    trace: list  # iteration records (dataclasses or dicts)
    breakdown: dict
    audit: dict
    totals: dict
    converged: bool
    status: str
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.totals["consumed_J"]

    @property
    def objective_trace(self) -> list:
        return [_record_dict(r)["surrogate_objective"] for r in self.trace]

    def to_dict(self) -> dict:
        """JSON-ready content; wall time is deliberately excluded so reports
        of identical runs are byte-identical."""
        return {
            "scheme": self.scheme,
            "status": self.status,
            "converged": self.converged,
            "config": self.config,
            "solver": self.solver,
            "totals": self.totals,
            "audit": self.audit,
            "trace": [_record_dict(r) for r in self.trace],
            "plan": {
                "waypoints": self.plan.waypoints.tolist(),
                "q": self.plan.q.tolist(),
            },
            "extra": self.extra,
        }


def _record_dict(rec) -> dict:
    if dataclasses.is_dataclass(rec):
        return dataclasses.asdict(rec)
    return dict(rec)


def build_report(scheme: str, plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
                 approx: SolarLinearApprox, mu1: float, mu2: float, solver: dict, trace: list,
                 converged: bool, status: str, extra: dict | None = None) -> RunReport:
    bd = slot_breakdown(plan, track, cfg, approx, mu1, mu2)
    return RunReport(
        scheme=scheme,
        config=cfg.to_dict(),
        solver=solver,
        plan=plan,
        trace=list(trace),
        breakdown=bd,
        audit=audit_plan(plan, track, cfg, bd),
        totals=energy_totals(bd, cfg),
        converged=converged,
        status=status,
        extra=dict(extra or {}),
    )


# ----------------------------------------------------------------------------
# serialisation


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def report_json(report: RunReport) -> str:
    return json.dumps(_jsonable(report.to_dict()), sort_keys=True, indent=1) + "\n"


def _g9(x) -> str:
    return f"{float(x):.9g}"


def trajectory_csv(report: RunReport, track: TargetTrack | None = None) -> str:
    """Rows t = 0..N; slot quantities are blank on the start row."""
    bd = report.breakdown
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    x0, y0, z0 = report.plan.waypoints[0]
    start = [0, _g9(x0), _g9(y0), _g9(z0)] + [""] * (len(TRAJECTORY_COLUMNS) - 4)
    w.writerow(start)
    for i in range(len(bd["t"])):
        w.writerow([int(bd["t"][i])] + [_g9(bd[c][i]) for c in TRAJECTORY_COLUMNS[1:]])
    return buf.getvalue()


def iterations_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ITERATION_COLUMNS)
    for rec in report.trace:
        d = _record_dict(rec)
        w.writerow([d.get("iteration", d.get("iter")), _g9(d["surrogate_objective"]), _g9(d["exact_objective"]),
                    _g9(d["step_norm"]), _g9(d["beta"]), int(d["inner_iters"]), _g9(d["kkt_residual"]),
                    d.get("note", "")])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(report: RunReport, out_dir, stem: str | None = None) -> dict:
    """Write report JSON, trajectory CSV, iteration CSV and a timing sidecar."""
    out = Path(out_dir)
    stem = stem or report.scheme
    paths = {
        "report": out / f"{stem}_report.json",
        "trajectory": out / f"{stem}_trajectory.csv",
        "iterations": out / f"{stem}_iterations.csv",
        "timing": out / f"{stem}_timing.json",
    }
    atomic_write(paths["report"], report_json(report))
    atomic_write(paths["trajectory"], trajectory_csv(report))
    atomic_write(paths["iterations"], iterations_csv(report))
    atomic_write(paths["timing"], json.dumps({"wall_time_s": report.wall_time}) + "\n")
    ticks = report.extra.get("tick_log")
    if ticks is not None:
        paths["ticks"] = out / f"{stem}_ticks.csv"
        atomic_write(paths["ticks"], ticks_csv(ticks))
    return paths


TICK_COLUMNS = ("tau", "x", "y", "z", "predicted_err", "energy_consumed", "energy_harvested", "reserve", "ffr_ok")


def ticks_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TICK_COLUMNS)
    for r in rows:
        w.writerow([int(r["tau"])] + [_g9(r[c]) for c in TICK_COLUMNS[1:-1]] + [int(bool(r["ffr_ok"]))])
    return buf.getvalue()
