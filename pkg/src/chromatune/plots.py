"""Figure rendering for the report paths (PNG files next to the CSVs)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import EvalRow, SweepPoint, TimingTable  # noqa: E402


def save_trace_figure(loss_trace: Sequence[float], psnr_trace: Sequence[float],
                      path, title: str = "test-time tuning") -> Path:
    """Loss and first-frame PSNR against the iteration index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_loss, ax_psnr) = plt.subplots(2, 1, figsize=(6.0, 5.5), sharex=True)
    steps = range(len(loss_trace))
    ax_loss.plot(steps, loss_trace, marker="o", ms=3, color="tab:blue")
    ax_loss.set_ylabel("tuning loss")
    ax_loss.set_title(title)
    ax_psnr.plot(steps, psnr_trace, marker="o", ms=3, color="tab:orange")
    ax_psnr.set_ylabel("first-frame PSNR (dB)")
    ax_psnr.set_xlabel("iteration")
    for ax in (ax_loss, ax_psnr):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_loss_curve(losses: Sequence[float], path,
                    title: str = "training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(range(len(losses)), losses, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sweep_figure(points: Sequence[SweepPoint], path,
                      title: str = "PSNR vs tuning iterations") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot([p.iteration for p in points], [p.psnr for p in points],
            marker="o", color="tab:orange")
    ax.set_xlabel("tuning iterations")
    ax.set_ylabel("first-frame PSNR (dB)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_report_figure(rows: Sequence[EvalRow], path,
                       title: str = "baseline vs tuned") -> Path:
    """Grouped PSNR bars per sequence, one bar group per method."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    methods = sorted({r.method for r in rows})
    sequences = sorted({r.sequence for r in rows})
    by_cell = {(r.sequence, r.method): r.psnr for r in rows}
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(sequences)), 4.0))
    width = 0.8 / max(len(methods), 1)
    for k, method in enumerate(methods):
        xs = [i + k * width for i in range(len(sequences))]
        ys = [by_cell.get((s, method), float("nan")) for s in sequences]
        ax.bar(xs, ys, width=width, label=method)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(sequences))])
    ax.set_xticklabels(sequences, rotation=30, ha="right")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_timing_figure(table: TimingTable, path,
                       title: str = "tuning time by resolution") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j, res in enumerate(table.resolutions):
        ax.plot(table.iterations, [row[j] for row in table.seconds],
                marker="o", label=res)
    ax.set_xlabel("tuning iterations")
    ax.set_ylabel("seconds")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
