#!/usr/bin/env python3
"""Run the bundled experiment configs and write CSVs under results/.

    python3 scripts/run_experiments.py              # everything
    python3 scripts/run_experiments.py fig2 pmu     # a subset
    python3 scripts/run_experiments.py --trials 5   # quick pass
"""

import argparse
import sys
import time
from pathlib import Path

from sdpse.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
RUNS = {
    "fig2": "sweep",
    "pmu": "pmu-sweep",
    "noise": "noise-study",
    "placement": "placement-study",
}


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=list(RUNS), metavar="NAME")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args()
    (ROOT / "results").mkdir(exist_ok=True)
    unknown = set(args.names) - set(RUNS)
    if unknown:
        ap.error(f"unknown runs {sorted(unknown)}; choose from {sorted(RUNS)}")
    worst = 0
    for name in args.names or list(RUNS):
        argv = [RUNS[name], "--config", str(ROOT / "configs" / f"{name}.json"), "--output", str(ROOT / "results" / f"{name}.csv")]
        if args.trials and name != "placement":
            argv += ["--trials", str(args.trials)]
        if args.jobs:
            argv += ["--jobs", str(args.jobs)]
        t0 = time.perf_counter()
        rc = cli_main(argv)
        print(f"{name}: exit {rc} in {time.perf_counter() - t0:.1f}s")
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())
