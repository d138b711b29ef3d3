"""Accuracy-versus-horizon line charts from report CSV files."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .evaluation import EvalReport


def plot_report(report: EvalReport, out_path) -> None:
    """One line per (variant, observed fraction), averaged over seeds."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[tuple[str, float], dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in report.rows:
        series[(r.variant, r.observed_frac)][r.predicted_frac].append(r.accuracy)
    fig, ax = plt.subplots(figsize=(6, 4))
    for (variant, obs), points in sorted(series.items()):
        xs = sorted(points)
        ys = [100 * np.mean(points[x]) for x in xs]
        ax.plot([100 * x for x in xs], ys, marker="o", label=f"{variant}, observed {obs:.0%}")
    ax.set_xlabel("predicted %")
    ax.set_ylabel("frame accuracy %")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
