#!/usr/bin/env python3
"""Average numerical rank per test system at a fixed measurement fraction."""

import argparse
import sys
from pathlib import Path

from sdpse.experiments import ExperimentConfig, run_fraction_sweep, to_csv


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--cases", nargs="+", default=["ieee14", "ieee30", "ieee57"])
    ap.add_argument("--fraction", type=float, default=0.7)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", default="results/rank_by_case.csv")
    args = ap.parse_args()
    rows = []
    for case in args.cases:
        cfg = ExperimentConfig(case=case, trials=args.trials, base_seed=args.seed)
        res = run_fraction_sweep(cfg, [args.fraction])
        row = dict(res.summary[0], case=case)
        rows.append(row)
        print(f"{case}: mean rank {row['mean_rank']:.3g} over {row['optimal']}/{row['trials']} optimal trials")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(rows, ["case", "fraction", "trials", "optimal", "mean_rank", "min_rank", "max_rank", "mean_trailing_ratio"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
