"""Compare the solver with the brute-force grid search on tiny missions.

The target flies a straight line at a constant per-slot displacement; the
visual range is shrunk so the grid stays small.

    python3 scripts/oracle_toys.py --grid 0.5
"""

import argparse

import numpy as np

from covert_pursuit.oracle import brute_force_small, lipschitz_cell_bound
from covert_pursuit.pdcae import SolverOptions, exact_objective, run_pdcae
from covert_pursuit.scenario import ScenarioConfig, TargetTrack

TOYS = [(1, (4.0, 3.0)), (3, (4.0, 3.0)), (1, (5.0, 0.0)), (3, (5.0, 1.0))]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=float, default=0.5)
    ap.add_argument("--range", type=float, default=3.0, help="visual range D (m)")
    args = ap.parse_args()

    print("N  velocity     oracle      solver      |diff|   cell bound  grid plans")
    for n, vel in TOYS:
        cfg = ScenarioConfig(horizon_T=0.2 * n, d_max=args.range)
        track = TargetTrack(np.arange(n + 1)[:, None] * np.asarray(vel)[None, :])
        ref = brute_force_small(track, cfg, args.grid)
        out = run_pdcae(track, cfg, SolverOptions())
        got = exact_objective(out.plan, track, cfg, cfg.mu1, cfg.mu2)
        bound = lipschitz_cell_bound(cfg, args.grid)
        print(f"{n}  {str(vel):11s} {ref.objective:10.4f}  {got:10.4f}  {abs(got - ref.objective):7.3f}  "
              f"{bound:10.2f}  {ref.evaluations}")


if __name__ == "__main__":
    main()
