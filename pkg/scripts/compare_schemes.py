"""Solve the standard 150-slot mission with every scheme and print the
energy / objective table, plus the online run with the oracle predictor.

    python3 scripts/compare_schemes.py --out results/compare
"""

import argparse
import time
from pathlib import Path

from covert_pursuit.online import OnlineOptions, PredictorMode, TargetPredictor, run_online
from covert_pursuit.pdcae import SolverOptions, solve_offline
from covert_pursuit.report import write_report
from covert_pursuit.scenario import ScenarioConfig, generate_target_track

SCHEMES = ("proposed", "dko", "aco", "ndp", "dst", "mdr")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/compare")
    ap.add_argument("--schemes", default=",".join(SCHEMES))
    ap.add_argument("--no-online", action="store_true")
    args = ap.parse_args()

    cfg = ScenarioConfig()
    track = generate_target_track(cfg)
    out = Path(args.out)
    reports = {}
    for scheme in args.schemes.split(","):
        t0 = time.perf_counter()
        reports[scheme] = rep = solve_offline(track, cfg, SolverOptions(scheme=scheme))
        write_report(rep, out, scheme)
        print(f"{scheme:9s} {rep.status:10s} iters={rep.solver['iterations']:3d} "
              f"energy={rep.energy:9.3f} J  {time.perf_counter() - t0:6.1f} s", flush=True)
    if not args.no_online:
        pred = TargetPredictor(PredictorMode.ORACLE, truth=track)
        reports["online"] = rep = run_online(track, cfg, SolverOptions(), OnlineOptions(predictor=pred))
        write_report(rep, out, "online")
        print(f"online    {rep.status:10s} energy={rep.energy:9.3f} J", flush=True)

    print("\nscheme     energy_J   common_objective   disguise_common")
    for name, rep in reports.items():
        t = rep.totals
        print(f"{name:9s} {t['consumed_J']:9.3f}   {t['common_objective']:16.3f}   {t['disguise_common']:15.3f}")
    if "dst" in reports and "proposed" in reports:
        print(f"\nenergy saved vs DST: {reports['dst'].energy - reports['proposed'].energy:.3f} J")


if __name__ == "__main__":
    main()
