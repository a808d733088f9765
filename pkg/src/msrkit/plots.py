"""Figure rendering for loss logs, SNR reports, and stage level summaries."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def loss_curve_figure(log_lines, out_png) -> Path:
    """Plot `step<TAB>loss` lines on a log-scaled y axis."""
    steps, losses = [], []
    for line in log_lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        step, loss = line.split("\t")
        steps.append(int(step))
        losses.append(float(loss))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("combined loss")
    if losses and min(losses) > 0:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def snr_report_figure(report, out_png) -> Path:
    """Bar chart of per-stem mean SNR from an EvalReport."""
    stems = sorted(report.stem_means)
    values = [report.stem_means[s] for s in stems]
    fig, ax = plt.subplots(figsize=(8, 4))
    if stems:
        ax.bar(range(len(stems)), values, color="#4878cf")
        ax.set_xticks(range(len(stems)))
        ax.set_xticklabels(stems, rotation=30, ha="right")
    else:
        ax.text(0.5, 0.5, "no finite SNR entries", ha="center", va="center", transform=ax.transAxes)
    ax.set_ylabel("mean SNR (dB)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def stem_levels_figure(levels: dict, out_png) -> Path:
    """Bar chart of output stem levels (dB) from a pipeline run."""
    stems = list(levels)
    values = [levels[s] for s in stems]
    floor = min([v for v in values if np.isfinite(v)] or [-80.0]) - 10.0
    shown = [v if np.isfinite(v) else floor for v in values]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(stems)), shown, color="#6acc64")
    ax.set_xticks(range(len(stems)))
    ax.set_xticklabels(stems, rotation=30, ha="right")
    ax.set_ylabel("level (dB)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
