"""Power against disguise along mu1 + mu2 = 1 on the standard mission.

Prints one row per weight pair and the change in power between the two
highest-disguise points relative to the whole sweep's power range.

    python3 scripts/pareto_sweep.py --points 11 --csv results/sweep.csv
"""

import argparse
import csv

import numpy as np

from covert_pursuit.cli import sweep_weights
from covert_pursuit.pdcae import solve_offline
from covert_pursuit.scenario import ScenarioConfig, generate_target_track


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=11)
    ap.add_argument("--csv")
    args = ap.parse_args()

    base = ScenarioConfig()
    track = generate_target_track(base)
    rows = []
    for mu1, mu2 in sweep_weights(args.points):
        rep = solve_offline(track, base.replace(mu1=mu1, mu2=mu2))
        row = {"mu1": mu1, "mu2": mu2, "status": rep.status, "iterations": rep.solver["iterations"],
               "disguise": rep.totals["disguise"], "power_W": rep.energy / base.horizon_T,
               "final_z": float(rep.plan.waypoints[-1, 2])}
        rows.append(row)
        print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()),
              flush=True)

    power = np.array([r["power_W"] for r in rows])
    top = np.argsort([r["disguise"] for r in rows])[-2:]
    change = abs(power[top[0]] - power[top[1]])
    print(f"\npower range {np.ptp(power):.4f} W; top-two disguise change {change:.4f} W "
          f"({change / max(np.ptp(power), 1e-300):.1%} of range)")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
