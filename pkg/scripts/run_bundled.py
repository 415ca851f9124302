"""Run every bundled config through the commands it configures.

    python3 scripts/run_bundled.py [--out results] [--skip-slow]

Outputs land in ``<out>/<config>/``.  The msd4d manifold and verify runs
take about half a minute and two minutes on one core; ``--skip-slow``
leaves them out.
"""

import argparse
import time
from pathlib import Path

from ftla.cli import load_config, run

PLAN = {
    "ds": ["spectrum", "diagnose", "manifold", "ildm", "verify", "converge"],
    "sys3d": ["spectrum", "diagnose", "manifold", "ildm", "converge"],
    "msd4d": ["spectrum", "diagnose", "manifold", "ildm", "verify"],
    "linear7d": ["spectrum", "diagnose", "converge"],
}
SLOW = {("msd4d", "manifold"), ("msd4d", "verify")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--skip-slow", action="store_true")
    args = ap.parse_args()
    for name, commands in PLAN.items():
        cfg = load_config(name)
        for cmd in commands:
            if args.skip_slow and (name, cmd) in SLOW:
                continue
            t0 = time.perf_counter()
            status, paths = run(cfg, cmd, Path(args.out) / name, workers=1)
            files = ", ".join(p.name for p in paths)
            print(f"{name:9s} {cmd:9s} exit {status}  {time.perf_counter() - t0:6.1f}s  {files}")


if __name__ == "__main__":
    main()
