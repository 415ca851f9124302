"""D-S manifold error of FTLA points against the averaging time, with ILDM.

Writes a CSV with one row per (x1, T_bar) plus the ILDM error at each x1.
"""

import argparse
import csv

import numpy as np

from ftla.bench import make_system
from ftla.ildm import ildm_point
from ftla.manifold import Parametrization, SolverSchedule, solve_manifold

PARAM = Parametrization((0,), (1,))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="ds_manifold_errors.csv")
    ap.add_argument("--gamma", type=float, default=3.0)
    args = ap.parse_args()
    s = make_system("ds", gamma=args.gamma)
    x1 = np.linspace(0.25, 2.0, 8)
    exact = x1 / (1 + x1)
    ildm = np.array([ildm_point(s.field, [v], [0.3], (1, 1, 0), PARAM)[1] for v in x1])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "method", "T_bar", "x2", "error"])
        for v, e, xi in zip(x1, exact, ildm):
            w.writerow([v, "ildm", "", xi, abs(xi - e)])
        for T in (0.2, 0.5, 1.0, 2.0):
            pts = solve_manifold(s.field, x1, [0.3], (1, 1, 0), PARAM, SolverSchedule.fixed(T))
            for v, e, p in zip(x1, exact, pts):
                w.writerow([v, "ftla", T, p.x[1], abs(p.x[1] - e)])
            print(f"T_bar={T:4.1f}  max FTLA error {max(abs(p.x[1] - e) for p, e in zip(pts, exact)):.2e}")
    print(f"ILDM max error {np.max(np.abs(ildm - exact)):.2e}; wrote {args.out}")


if __name__ == "__main__":
    main()
