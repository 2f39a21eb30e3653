#!/usr/bin/env python3
"""Thin optional plots over harness CSV output.

Usage: plot.py <output_dir> [figure_dir]

Reads summary.csv (and trend_stats.csv / curve.csv when present) from a
sweep or ablation output directory and writes PNGs next to it. Only needs
matplotlib; the harness itself never imports this.
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    sys.exit("matplotlib is required: pip install matplotlib")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_summary(out_dir, fig_dir):
    rows = read_csv(out_dir / "summary.csv")
    if not rows:
        print("summary.csv has no data rows")
        return
    by_policy = defaultdict(list)
    for row in rows:
        by_policy[row["policy"]].append(row)

    knob = "lambda"
    values = {float(r[knob]) for r in rows}
    if len(values) < 2:
        for candidate in ("omega", "n_updates"):
            if len({float(r[candidate]) for r in rows}) > 1:
                knob = candidate
                break

    for metric, ylabel, name in [
        ("mean_tpaoi", "mean TPAoI (slots)", "tpaoi"),
        ("updates_per_access", "updates per access", "updates"),
    ]:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for policy, prows in sorted(by_policy.items()):
            prows = sorted(prows, key=lambda r: float(r[knob]))
            xs = [float(r[knob]) for r in prows]
            ys = [float(r[metric]) for r in prows]
            ax.plot(xs, ys, marker="o", label=policy)
        ax.set_xlabel(knob)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        target = fig_dir / f"{name}_vs_{knob}.png"
        fig.savefig(target, dpi=150)
        print(f"wrote {target}")


def plot_curve(out_dir, fig_dir):
    for curve in out_dir.rglob("curve.csv"):
        rows = read_csv(curve)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        episodes = [int(r["episode"]) for r in rows]
        ax.plot(episodes, [float(r["reward"]) for r in rows], alpha=0.25, label="reward")
        ax.plot(
            episodes,
            [float(r["moving_avg_100"]) for r in rows],
            label="moving average (100)",
        )
        ax.set_xlabel("episode")
        ax.set_ylabel("episode reward")
        ax.legend(fontsize=7)
        fig.tight_layout()
        target = fig_dir / "learning_curve.png"
        fig.savefig(target, dpi=150)
        print(f"wrote {target}")
        break


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    out_dir = Path(sys.argv[1])
    fig_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    if (out_dir / "summary.csv").exists():
        plot_summary(out_dir, fig_dir)
    plot_curve(out_dir, fig_dir)


if __name__ == "__main__":
    main()
