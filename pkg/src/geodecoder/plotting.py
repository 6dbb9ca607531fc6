"""Report figures written next to training logs and evaluation reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import BUCKET_LABELS  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curve(losses: Sequence[tuple[int, float]], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [s for s, _ in losses]
    ax.plot(steps, [v for _, v in losses], lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_task_scores(scores: Mapping[str, float], path, ylabel: str = "score (%)") -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(scores) + 2), 3.5))
    names = list(scores)
    ax.bar(range(len(names)), [scores[n] for n in names], color="#4a7fb5")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def plot_distance_buckets(reports: Mapping[str, Mapping[str, float]], path) -> Path:
    """Grouped bars of bucket percentages, one group per task."""
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    n = max(len(reports), 1)
    width = 0.8 / n
    for k, (name, buckets) in enumerate(reports.items()):
        xs = [i + (k - (n - 1) / 2) * width for i in range(len(BUCKET_LABELS))]
        ax.bar(xs, [buckets[b] for b in BUCKET_LABELS], width, label=name)
    ax.set_xticks(range(len(BUCKET_LABELS)), [f"{b} m" for b in BUCKET_LABELS])
    ax.set_ylabel("share of samples (%)")
    if reports:
        ax.legend(fontsize=8)
    return _save(fig, path)
