#!/usr/bin/env python3
"""Turn the summary CSVs in results/ into PNG figures (needs matplotlib)."""

import csv
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1] / "results"


def read(name):
    path = ROOT / name
    if not path.exists():
        return None
    with path.open() as fh:
        return list(csv.DictReader(fh))


def main() -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [
        ("fig2_summary.csv", "fraction", "mean_rank", "measurement fraction", "mean rank of W"),
        ("pmu_summary.csv", "pmu_fraction", "min_rank", "PMU angle fraction", "minimum rank of W"),
        ("noise_summary.csv", "rank", "count", "rank of W", "noise draws"),
    ]
    for fname, xkey, ykey, xlabel, ylabel in panels:
        rows = read(fname)
        if not rows:
            print(f"skip {fname}: not found")
            continue
        x = [float(r[xkey]) for r in rows]
        y = [float(r[ykey]) for r in rows]
        fig, ax = plt.subplots(figsize=(4, 3))
        if xkey == "rank":
            ax.bar(x, y)
        else:
            ax.plot(x, y, "o-")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        out = ROOT / fname.replace("_summary.csv", ".png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
