"""Invariance-error table for the 4D benchmark (FTLA vs ILDM).

Runs the ``verify`` command of the bundled msd4d config and prints the
percentages as a point x (coordinate, direction) table.
"""

import argparse
import tempfile
from collections import defaultdict

from ftla.cli import load_config, read_csv, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None, help="keep verify.csv in this directory")
    args = ap.parse_args()
    out = args.out or tempfile.mkdtemp(prefix="ftla-ip-")
    _, (path,) = run(load_config("msd4d"), "verify", out, workers=1)
    _, rows = read_csv(path)
    table = defaultdict(dict)
    cols = []
    for r in rows:
        col = f"{r['method']} {r['coordinate']}{r['direction']}"
        if col not in cols:
            cols.append(col)
        table[r["point"]][col] = float(r["ip_percent"])
    print("point  " + "  ".join(f"{c:>12s}" for c in cols))
    for point, vals in table.items():
        print(f"{point:5s}  " + "  ".join(f"{vals[c]:12.3g}" for c in cols))
    print(f"(percent; raw rows in {path})")


if __name__ == "__main__":
    main()
