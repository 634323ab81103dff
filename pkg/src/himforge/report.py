"""Figure rendering for the report paths: size-distribution histograms and
embedding scatter plots, written as PNG files next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analyze import SizeHistogram

_PNG_META = {"Software": None}  # keep regenerated figures byte-stable


def save_size_histogram_figure(hist: SizeHistogram, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=120)
    if hist.counts:
        edges = np.arange(len(hist.counts) + 1) * hist.bin_width
        ax.bar(
            edges[:-1],
            hist.counts,
            width=hist.bin_width,
            align="edge",
            color="#4878a8",
            edgecolor="black",
            linewidth=0.4,
        )
    ax.set_xlabel("sqrt particle area (nm)")
    ax.set_ylabel("particle frequency")
    ax.set_title(f"{title}  ($N_p$ = {hist.n_particles})")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_embedding_figure(points, path, feature_note: str = "hand-crafted features") -> None:
    """Scatter of 2-D embedding points: list of (source, kind, x, y)."""
    fig, ax = plt.subplots(figsize=(5, 5), dpi=120)
    colors = {"real": "#1f77b4", "synthetic": "#ff7f0e"}
    markers = {"particle": "o", "background": "s"}
    seen = set()
    for source, kind, x, y in points:
        key = (source, kind)
        label = f"{source}/{kind}" if key not in seen else None
        seen.add(key)
        ax.scatter(
            x,
            y,
            s=12,
            c=colors.get(source, "#555555"),
            marker=markers.get(kind, "o"),
            alpha=0.6,
            label=label,
            linewidths=0,
        )
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    ax.set_title(f"dataset comparison ({feature_note})")
    if seen:
        ax.legend(fontsize=7, markerscale=1.2)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
