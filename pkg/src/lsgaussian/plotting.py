"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
    "svg.hashsalt": "lsgaussian",
}


def _figure(width=5.0, height=3.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_quality(series: dict, path, metric: str = "psnr") -> Path:
    """One line per run; ``series`` maps a label to a list of per-frame values."""
    fig, ax = _figure()
    for label, values in series.items():
        ax.plot(range(len(values)), values, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)" if metric == "psnr" else metric.upper())
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_pair_counts(counts: dict, path) -> Path:
    """Bar chart of Gaussian-tile pairs per intersection mode."""
    fig, ax = _figure(4.0, 3.0)
    labels = list(counts)
    ax.bar(labels, [counts[k] for k in labels], color="0.45")
    ax.set_ylabel("pairs")
    for i, k in enumerate(labels):
        ax.annotate(f"{counts[k]:,}", (i, counts[k]), ha="center", va="bottom", fontsize=7)
    return _save(fig, path)


def plot_utilization(per_policy: dict, path) -> Path:
    """Per-frame simulated utilization for each scheduling policy."""
    fig, ax = _figure()
    for label, values in per_policy.items():
        ax.plot(range(len(values)), values, marker="s", ms=3, lw=1.2, label=label)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("frame")
    ax.set_ylabel("utilization")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_timeline(report, path) -> Path:
    """Gantt chart of rasterizer activity per block."""
    fig, ax = _figure(6.0, 0.25 * report.blocks + 1.0)
    for block, _tile, _load, s0, s1, r0, r1 in report.timeline:
        ax.broken_barh([(r0, r1 - r0)], (block - 0.35, 0.7), facecolors="tab:blue", lw=0)
        ax.broken_barh([(s0, s1 - s0)], (block + 0.35, 0.1), facecolors="tab:orange", lw=0)
    ax.set_xlabel("simulated time")
    ax.set_ylabel("block")
    ax.set_title(f"{report.policy}: utilization {report.utilization:.3f}")
    ax.invert_yaxis()
    return _save(fig, path)
