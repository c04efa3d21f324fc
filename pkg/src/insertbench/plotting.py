"""Matplotlib figures written next to the CSV outputs (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def plot_histogram(hist, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if hist.counts:
        edges = np.asarray(hist.edges)
        ax.bar(edges[:-1], hist.counts, width=hist.bin_width, align="edge", edgecolor="black", color="tab:blue")
    ax.set_xlabel("max force magnitude [N]")
    ax.set_ylabel("trials")
    ax.set_title("Maximum force distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_metrics(metrics, path) -> Path:
    names = ["E_z", "E_xy", "S_z", "S_xy"]
    vals = [getattr(metrics, n) for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, [v if v is not None else 0.0 for v in vals], color="tab:gray")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.set_ylabel("E [N^2], S [N/s]")
    rate = metrics.success_rate
    t = metrics.mean_time
    ax.set_title(f"R = {rate:.2f}, mean time = {t:.2f} s" if t is not None else f"R = {rate:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_series(series, path) -> Path:
    t = series.times()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, label in enumerate(("Fx", "Fy", "Fz")):
        ax.plot(t, series.force[:, i], label=label, lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("force [N]")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_report(report, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    return {
        "histogram_png": plot_histogram(report.histogram, out / "histogram.png"),
        "metrics_png": plot_metrics(report.metrics, out / "metrics.png"),
    }
