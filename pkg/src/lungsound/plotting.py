"""Report figures: training curves and confusion matrices.

Figures are built with the object-oriented matplotlib API (no pyplot global
state) and written with fixed metadata so identical inputs give identical
PNG bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .metrics import ConfusionMatrix

_PNG_METADATA = {"Software": None}
_DPI = 100


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", dpi=_DPI, metadata=_PNG_METADATA)
    return path


def plot_history(history: Sequence[dict], path: str | Path, best_epoch: int | None = None) -> Path:
    """Train/validation loss per epoch, with validation Score on a twin axis."""
    if not history:
        raise ValueError("empty history")
    epochs = [r["epoch"] for r in history]
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    ax.plot(epochs, [r["train_loss"] for r in history], marker="o", ms=3, label="train loss")
    ax.plot(epochs, [r["val_loss"] for r in history], marker="s", ms=3, label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("weighted cross-entropy")
    if best_epoch is not None:
        ax.axvline(best_epoch, color="0.5", ls=":", lw=1)

    scored = [(r["epoch"], r["val_scores"]["score"]) for r in history if r.get("val_scores")]
    handles, labels = ax.get_legend_handles_labels()
    if scored:
        ax2 = ax.twinx()
        xs, ys = zip(*scored)
        (line,) = ax2.plot(xs, ys, color="tab:green", ls="--", label="val Score")
        ax2.set_ylim(0.0, 1.05)
        ax2.set_ylabel("Score")
        handles.append(line)
        labels.append(line.get_label())
    ax.legend(handles, labels, loc="best", frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "") -> Path:
    counts = np.asarray(cm.counts)
    k = len(cm.labels)
    fig = Figure(figsize=(1.2 * k + 2.0, 1.2 * k + 1.5))
    ax = fig.add_subplot()
    ax.imshow(counts, cmap="Blues", vmin=0, vmax=max(1, int(counts.max())))
    ax.set_xticks(range(k), cm.labels, rotation=45 if k > 4 else 0)
    ax.set_yticks(range(k), cm.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    half = counts.max() / 2.0
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                    color="white" if counts[i, j] > half else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def spectrogram_to_gray(m: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8 with the highest-frequency row on top."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D spectrogram, got shape {m.shape}")
    lo, hi = m.min(), m.max()
    scaled = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    return np.round(np.flipud(scaled) * 255.0).astype(np.uint8)
