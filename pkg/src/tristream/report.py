"""Figure rendering for the report paths.

Every CSV the pipeline writes gets a figure next to it: training curves
beside the metrics log, a CMC curve beside the evaluation report, and a
label-map montage beside the per-image pseudo-label dumps.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .evaluation import EvalReport

# fixed indexed palette for label maps: background black, parts in bright colors
LABEL_PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 60, 60),
        (250, 160, 40),
        (240, 230, 60),
        (90, 200, 90),
        (70, 130, 240),
        (160, 80, 220),
        (240, 120, 200),
        (120, 240, 230),
        (160, 160, 160),
    ],
    dtype=np.uint8,
)


def plot_training_curves(metrics: list[dict], out_path) -> Path:
    out_path = Path(out_path)
    epochs = [m["epoch"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for key, label in [
        ("loss_total", "total"),
        ("loss_id", "identity"),
        ("loss_pair", "pair"),
        ("loss_psd", "part seg"),
    ]:
        ax1.plot(epochs, [m[key] for m in metrics], label=label)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [m["lr"] for m in metrics])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_cmc(report: EvalReport, out_path) -> Path:
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for name, rep in report.scenarios.items():
        ks = np.arange(1, len(rep.cmc) + 1)
        ax.plot(ks, rep.cmc, marker="o", markersize=3, label=f"{name} (mAP {rep.map:.3f})")
    ax.set_xlabel("rank k")
    ax.set_ylabel("CMC accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def save_label_map_png(labels: np.ndarray, out_path) -> Path:
    """Write one pseudo-label map as an indexed-color PNG."""
    out_path = Path(out_path)
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(LABEL_PALETTE.flatten().tolist())
    img.save(out_path)
    return out_path


def plot_label_montage(entries: list[tuple[np.ndarray, np.ndarray]], out_path, max_cols: int = 8) -> Path:
    """Side-by-side image / label-map grid; entries are (pixels, labels)."""
    out_path = Path(out_path)
    n = len(entries)
    cols = min(max_cols, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, 2 * cols, figsize=(2 * cols * 1.1, rows * 2.2), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for i, (pixels, labels) in enumerate(entries):
        r, c = divmod(i, cols)
        axes[r][2 * c].imshow(pixels)
        colored = LABEL_PALETTE[np.clip(labels, 0, len(LABEL_PALETTE) - 1)]
        axes[r][2 * c + 1].imshow(colored)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
