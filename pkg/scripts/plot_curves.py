#!/usr/bin/env python3
"""
Render hric-lab CSV outputs with matplotlib.

    python scripts/plot_curves.py results/curves results/curves.png
    python scripts/plot_curves.py --sweep results/sweep_alpha.csv results/sweep.png

Curves are averaged across seeds per method; the sweep plots mean throughput
against alpha with stderr bars. Requires the `plot` extra.
"""

import argparse
import csv
import glob
import logging
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_curves(curve_dir: str, output: str) -> None:
    by_method = defaultdict(list)
    for path in sorted(glob.glob(os.path.join(curve_dir, "*.csv"))):
        rows = _rows(path)
        if rows:
            by_method[rows[0]["method"]].append([float(r["total_throughput"]) / 1e6 for r in rows])
    if not by_method:
        raise SystemExit(f"no curve files in {curve_dir}")

    fig, ax = plt.subplots(figsize=(10, 6))
    for method, runs in by_method.items():
        length = min(len(r) for r in runs)
        mean = np.mean([r[:length] for r in runs], axis=0)
        ax.plot(np.arange(length), mean, label=f"{method} ({len(runs)} seeds)")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Total throughput (Mb/s)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    plt.tight_layout()
    fig.savefig(output, dpi=150)
    logger.info(f"Curves plot written to {output}")


def plot_sweep(sweep_csv: str, output: str) -> None:
    by_method = defaultdict(list)
    for row in _rows(sweep_csv):
        by_method[row["method"]].append((float(row["alpha"]), float(row["mean_throughput"]) / 1e6,
                                         float(row["stderr"]) / 1e6))

    fig, ax = plt.subplots(figsize=(8, 5))
    for method, points in by_method.items():
        points.sort()
        alphas, means, errors = zip(*points)
        ax.errorbar(alphas, means, yerr=errors, marker="o", capsize=3, label=method)
    ax.set_xlabel("Backhaul bandwidth fraction alpha")
    ax.set_ylabel("Total throughput (Mb/s)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    plt.tight_layout()
    fig.savefig(output, dpi=150)
    logger.info(f"Sweep plot written to {output}")


def main():
    parser = argparse.ArgumentParser(description="Plot hric-lab results")
    parser.add_argument("source", help="Curves directory, or sweep CSV with --sweep")
    parser.add_argument("output", help="Image path")
    parser.add_argument("--sweep", action="store_true", help="Source is a sweep_alpha.csv")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    if args.sweep:
        plot_sweep(args.source, args.output)
    else:
        plot_curves(args.source, args.output)


if __name__ == "__main__":
    main()
