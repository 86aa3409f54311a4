"""Matplotlib renderings of the CSV reports.

Figures are written as SVG with a fixed hash salt and no date stamp so that
repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402

STYLE = {
    "svg.hashsalt": "cersa-forge",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.2),
}


def _save(fig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def loss_curves(curves: Mapping[str, Sequence[float]], path, title: str = "Fine-tuning loss"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, losses in curves.items():
            ax.plot(np.arange(1, len(losses) + 1), losses, lw=1.0, label=label)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def rank_report(rows, path):
    """Cutoff index per layer, one line per retention threshold."""
    layers = list(dict.fromkeys(r.layer_label for r in rows))
    thresholds = sorted({r.threshold for r in rows})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.35 * len(layers) + 2), 3.2))
        for t in thresholds:
            ks = {r.layer_label: r.k for r in rows if r.threshold == t}
            ax.plot(range(len(layers)), [ks[name] for name in layers], marker="o", ms=3, lw=1, label=f"{t:g}")
        ax.set_xticks(range(len(layers)))
        ax.set_xticklabels(layers, rotation=60, ha="right")
        ax.set_ylabel("preserved singular values")
        ax.legend(title="retention", frameon=False)
        return _save(fig, path)


def compression_curve(points, lora_rate: float | None, path, title: str = ""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([p.rank for p in points], [p.rate for p in points], lw=1.2, label="CERSA")
        ax.axhline(1.0, color="0.5", lw=0.8)
        if lora_rate is not None:
            ax.axhline(lora_rate, color="C3", ls="--", lw=1.0, label="LoRA r=32")
        ax.set_xlabel("retained rank r")
        ax.set_ylabel("compression rate c")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def similarity_heatmap(grid, path, title: str = ""):
    values = np.clip(grid.values, 1e-6, 1.0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(
            values.T,
            origin="lower",
            cmap="viridis",
            norm=LogNorm(vmin=min(float(values.min()), 0.9), vmax=1.0),
            extent=(0.5, values.shape[0] + 0.5, 0.5, values.shape[1] + 0.5),
        )
        ax.set_xlabel(f"top-i of {grid.label_before}")
        ax.set_ylabel(f"top-j of {grid.label_after}")
        ax.set_title(title or f"subspace similarity ({grid.side})")
        fig.colorbar(im, ax=ax)
        return _save(fig, path)
