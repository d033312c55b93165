"""Command-line entry point: ``covert-pursuit {run,compare,sweep,oracle,fit-solar}``.

Exit codes: 0 success, 2 usage error, 3 non-convergence (or a flagged row
in compare/sweep), 4 infeasible scenario.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .online import run_online
from .oracle import GridTooLargeError, brute_force_small, lipschitz_cell_bound
from .pdcae import Scheme, SolverOptions, solar_model, solve_offline
from .power import DomainError, solar_lower_bound_gap
from .report import COMMON_WEIGHTS, RunReport, atomic_write, write_report
from .scenario import InfeasibleScenarioError, TrackFormatError

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4
SCHEMES = tuple(s.value for s in Scheme) + ("online",)
THREADS_ENV = "COVERT_PURSUIT_THREADS"
COMPARE_COLUMNS = ("scheme", "status", "converged", "common_objective", "objective_scaled", "energy_J",
                   "harvested_J", "disguise_common", "max_distance", "audit_ok", "saving_vs_dst_J")
SWEEP_COLUMNS = ("mu1", "mu2", "status", "converged", "power_W", "energy_J", "disguise", "iterations")

log = logging.getLogger("covert_pursuit")


class UsageError(Exception):
    pass


def run_scheme(cfg: RunConfig, scheme: str) -> RunReport:
    """Solve one scheme; offline schemes map to weight changes or constraint
    variants, ``online`` runs the receding-horizon loop."""
    track = cfg.track()
    if scheme == "online":
        return run_online(track, cfg.scenario, cfg.solver, cfg.online_options(track))
    opts = SolverOptions.from_dict({**cfg.solver.to_dict(), "scheme": scheme})
    return solve_offline(track, cfg.scenario, opts)


def exit_code(report: RunReport) -> int:
    if report.status == "infeasible":
        return EXIT_INFEASIBLE
    if report.scheme == "online":
        return EXIT_OK if report.status == "completed" else EXIT_NONCONVERGED
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
    return max(1, min(cap, n_jobs))


def _safe_run(cfg: RunConfig, scheme: str):
    try:
        return run_scheme(cfg, scheme), None
    except InfeasibleScenarioError as exc:
        return None, f"infeasible: {exc}"
    except Exception as exc:  # flagged row; the batch continues
        return None, f"error: {type(exc).__name__}: {exc}"


def _fan_out(jobs):
    """Run (cfg, scheme) jobs; results come back in job order whatever the pool size."""
    workers = worker_count(len(jobs))
    if workers == 1:
        return [_safe_run(c, s) for c, s in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_safe_run, c, s) for c, s in jobs]
        return [f.result() for f in futures]


def _g(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(bool(x)))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_g(r.get(c)) for c in columns])
    return buf.getvalue()


def compare_rows(schemes, results) -> list[dict]:
    rows = []
    dst = dict(zip(schemes, results)).get("dst", (None, None))[0]
    for scheme, (rep, err) in zip(schemes, results):
        if rep is None:
            rows.append({"scheme": scheme, "status": err, "converged": False})
            continue
        t = rep.totals
        rows.append({
            "scheme": scheme,
            "status": rep.status,
            "converged": rep.converged,
            "common_objective": t["common_objective"],
            "objective_scaled": t["objective_scaled"],
            "energy_J": t["consumed_J"],
            "harvested_J": t["harvested_J"],
            "disguise_common": t["disguise_common"],
            "max_distance": rep.audit["max_distance"],
            "audit_ok": rep.audit["ok"],
            "saving_vs_dst_J": None if dst is None else dst.totals["consumed_J"] - t["consumed_J"],
        })
    return rows


def sweep_weights(points: int) -> list[tuple[float, float]]:
    if points < 1:
        raise UsageError("sweep needs at least one point")
    if points == 1:
        return [(1.0, 0.0)]
    mu1 = np.round(np.linspace(0.0, 1.0, points), 12)
    return [(float(m), float(np.round(1.0 - m, 12))) for m in mu1]


def sweep_rows(weights, results, cfg: RunConfig) -> list[dict]:
    rows = []
    horizon = cfg.scenario.n_slots * cfg.scenario.delta
    for (m1, m2), (rep, err) in zip(weights, results):
        if rep is None:
            rows.append({"mu1": m1, "mu2": m2, "status": err, "converged": False})
            continue
        rows.append({
            "mu1": m1, "mu2": m2, "status": rep.status, "converged": rep.converged,
            "power_W": rep.totals["consumed_J"] / horizon, "energy_J": rep.totals["consumed_J"],
            "disguise": rep.totals["disguise"], "iterations": rep.solver.get("iterations"),
        })
    return rows


# ----------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    try:
        report = run_scheme(cfg, args.scheme)
    except InfeasibleScenarioError as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    paths = write_report(report, args.out, args.scheme)
    t = report.totals
    print(f"{args.scheme}: status={report.status} energy={t['consumed_J']:.6f} J "
          f"objective={t['objective_scaled']:.6f} common={t['common_objective']:.6f} audit_ok={report.audit['ok']}")
    for p in paths.values():
        print(f"  wrote {p}")
    return exit_code(report)


def cmd_compare(args) -> int:
    schemes = [s for s in args.schemes.split(",") if s]
    if len(schemes) < 2:
        raise UsageError("compare needs at least two schemes")
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise UsageError(f"unknown scheme(s): {bad}")
    cfg = load_config(args.config) if args.config else RunConfig()
    results = _fan_out([(cfg, s) for s in schemes])
    out = Path(args.out)
    for scheme, (rep, _) in zip(schemes, results):
        if rep is not None:
            write_report(rep, out, scheme)
    rows = compare_rows(schemes, results)
    atomic_write(out / "compare.csv", _csv(COMPARE_COLUMNS, rows))
    print(_csv(COMPARE_COLUMNS, rows), end="")
    print(f"common weights mu1={COMMON_WEIGHTS[0]}, mu2={COMMON_WEIGHTS[1]}; wrote {out / 'compare.csv'}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED


def cmd_sweep(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    weights = sweep_weights(args.points)
    jobs = []
    for m1, m2 in weights:
        sub = RunConfig(cfg.scenario.replace(mu1=m1, mu2=m2), cfg.solver, cfg.online, cfg.track_path)
        jobs.append((sub, Scheme.PROPOSED.value))
    results = _fan_out(jobs)
    rows = sweep_rows(weights, results, cfg)
    out = Path(args.out)
    atomic_write(out / "sweep.csv", _csv(SWEEP_COLUMNS, rows))
    print(_csv(SWEEP_COLUMNS, rows), end="")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED


def cmd_oracle(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    track = cfg.track()
    try:
        res = brute_force_small(track, cfg.scenario, args.grid, max_evaluations=args.max_evaluations)
    except GridTooLargeError as exc:
        raise UsageError(str(exc)) from exc
    if res.plan is None:
        print("no feasible grid plan", file=sys.stderr)
        return EXIT_INFEASIBLE
    doc = {
        "objective_unscaled": res.objective,
        "objective_scaled": res.objective * cfg.scenario.delta,
        "evaluations": res.evaluations,
        "size_estimate": res.size_estimate,
        "grid_step": res.grid_step,
        "lipschitz_cell_bound": lipschitz_cell_bound(cfg.scenario, args.grid),
        "waypoints": res.plan.waypoints.tolist(),
    }
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if args.out:
        atomic_write(Path(args.out) / "oracle.json", text)
    print(text, end="")
    return EXIT_OK


def cmd_fit_solar(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    approx = solar_model(cfg.scenario)
    over, rel = solar_lower_bound_gap(approx, cfg.scenario.solar)
    doc = {"c1": approx.c1, "c2": approx.c2, "z_band": list(approx.z_band),
           "max_line_minus_exact_W": over, "max_relative_gap": rel, "lower_bound": over <= 0.0}
    print(json.dumps(doc, sort_keys=True, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covert-pursuit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v: info, -vv: debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve one scheme and write its report")
    r.add_argument("--config", help="JSON config (default: built-in scenario)")
    r.add_argument("--scheme", default="proposed", choices=SCHEMES)
    r.add_argument("--out", default="out")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", help="run several schemes on one scenario")
    c.add_argument("--config")
    c.add_argument("--schemes", default="proposed,dko,aco,ndp,dst,mdr")
    c.add_argument("--out", default="out")
    c.set_defaults(fn=cmd_compare)

    s = sub.add_parser("sweep", help="power vs disguise on mu1 + mu2 = 1")
    s.add_argument("--config")
    s.add_argument("--points", type=int, default=11)
    s.add_argument("--out", default="out")
    s.set_defaults(fn=cmd_sweep)

    o = sub.add_parser("oracle", help="brute-force reference for tiny horizons")
    o.add_argument("--config")
    o.add_argument("--grid", type=float, default=0.5)
    o.add_argument("--max-evaluations", type=int, default=10**8)
    o.add_argument("--out")
    o.set_defaults(fn=cmd_oracle)

    f = sub.add_parser("fit-solar", help="print the linear solar lower bound")
    f.add_argument("--config")
    f.set_defaults(fn=cmd_fit_solar)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, TrackFormatError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
