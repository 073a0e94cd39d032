"""Matplotlib renderers for learning curves and reward heatmaps.

Figures are written next to the delimited output they visualize; nothing
here feeds back into training.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import read_metrics


def learning_curve_figure(labeled_aggregates: dict[str, str],
                          phase1_steps: int, out_path) -> None:
    """Mean return with 95% CI bands per run; the optimal line is solid black."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    optimal_drawn = False
    for label, agg_path in sorted(labeled_aggregates.items()):
        m = read_metrics(agg_path)
        steps = m["step"]
        ax.plot(steps, m["mean_return"], label=label, linewidth=1.6)
        ax.fill_between(steps, m["ci95_lo"], m["ci95_hi"], alpha=0.25)
        if not optimal_drawn and not np.all(np.isnan(m["optimal_return"])):
            ax.plot(steps, m["optimal_return"], color="black", linewidth=1.8,
                    label="optimal")
            optimal_drawn = True
    ax.axvline(phase1_steps, color="gray", linestyle="--", linewidth=1.0)
    ax.set_xlabel("training steps")
    ax.set_ylabel("mean discounted return")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def heatmap_figure(matrix: np.ndarray, out_path, title: str = "",
                   vmin: float | None = None, vmax: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(matrix, cmap="viridis", vmin=vmin, vmax=vmax)
    fig.colorbar(im, ax=ax, shrink=0.85, label="predicted reward")
    if title:
        ax.set_title(title, fontsize=10)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
