"""Static figure emission for experiment artifacts."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_tsuc_vs_iteration(curves: Mapping[str, Sequence[tuple[int, float]]], path) -> Path:
    """Targeted success rate against attack iteration, one line per victim."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in curves.items():
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("tSuc (%)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_tsuc_vs_time(points: Mapping[str, tuple[float, float]], path) -> Path:
    """Scatter of (seconds per image, tSuc) per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (seconds, tsuc) in points.items():
        ax.scatter([seconds], [tsuc])
        ax.annotate(label, (seconds, tsuc), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("seconds / image")
    ax.set_ylabel("tSuc (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_intensity_response(curves: Mapping[str, Sequence[tuple[float, float]]], path,
                            ylabel: str = "self-transferability") -> Path:
    """Metric vs transformation intensity, one line per kind or method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in curves.items():
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker=".", label=label)
    ax.set_xlabel("intensity s")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_pcc_heatmap(matrix: np.ndarray, labels: Sequence[str], path) -> Path:
    """Annotated correlation heatmap."""
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(0.6 * len(labels) + 2, 0.6 * len(labels) + 1.5))
    im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    for i in range(len(labels)):
        for j in range(len(labels)):
            val = matrix[i, j]
            text = "--" if np.isnan(val) else f"{val:.2f}"
            ax.annotate(text, (j, i), ha="center", va="center", fontsize=6)
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
