"""Static figures from long-format plot data.

SVG output is made byte-stable by fixing the id hash salt and dropping the
date stamp, so reruns of ``report`` produce identical files.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {
    "lowrank": "Low-Rank",
    "naive": "Naive",
    "enhanced": "Enhanced",
    "first_stage": "First stage",
    "comblrb": "CombLRB",
    "cucb": "CUCB",
    "cts": "CTS",
    "complrb": "CompLRB",
    "compb": "CompB",
}
AXIS = {
    "rel_frob": "relative Frobenius error",
    "rel_inf": "relative max-entry error",
    "regret": "cumulative regret",
    "max_worker_regret": "max per-worker regret",
}


def _series(rows):
    """Group plot-data rows into {metric: {algo: [(x, mean, lo, hi), ...]}}."""
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[r["metric"]][r["algo"]].append((r["x"], r["mean"], r["ci_low"], r["ci_high"]))
    return out


def plot_metric(series: dict, metric: str, path, xlabel: str = "x") -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for algo in sorted(series):
        pts = sorted(series[algo])
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        err = [[p[1] - p[2] for p in pts], [p[3] - p[1] for p in pts]]
        ax.errorbar(xs, ys, yerr=err, marker="o", ms=4, capsize=3, lw=1.2, label=LABELS.get(algo, algo))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(AXIS.get(metric, metric))
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "matchcomplete", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def render_figures(rows, out_dir, xlabel: str = "x", prefix: str = "") -> list[Path]:
    """One SVG per metric found in ``rows``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, series in sorted(_series(rows).items()):
        paths.append(plot_metric(series, metric, out / f"{prefix}{metric}.svg", xlabel))
    return paths
