"""Figure rendering for run outputs.

Every CLI report path that writes delimited data also renders the matching
matplotlib figure next to it.  Rendering is headless (Agg) and file-only.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _ensure(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def render_toyfig(fig_dir, ds, samples_by_window: dict, summary: dict) -> list[str]:
    """One scatter panel per window: data, forget points, generated samples."""
    out = _ensure(fig_dir)
    written = []
    for name, pts in samples_by_window.items():
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.scatter(ds.retain[:, 0], ds.retain[:, 1], s=4, alpha=0.25,
                   color="0.6", label="retain data")
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.5, color="tab:blue",
                   label="samples")
        ax.scatter(ds.forget[:, 0], ds.forget[:, 1], s=60, marker="x",
                   color="tab:red", label="forget")
        stats = summary.get(name, {})
        title = name
        if stats:
            title += (f"  hit={stats['hit_rate']:.3f}"
                      f"  cov={stats['coverage']:.3f}")
        ax.set_title(title)
        ax.set_aspect("equal")
        ax.legend(loc="upper right", fontsize=8)
        path = out / f"toyfig_{name}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(str(path))
    return written


def render_psd(fig_dir, curves: dict, name: str = "psd") -> str:
    """Radially averaged power on a log scale, one line per labeled curve."""
    out = _ensure(fig_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        power = np.maximum(curve.power, 1e-20)
        ax.semilogy(curve.radii, power, marker="o", markersize=3, label=label)
    ax.set_xlabel("frequency fraction")
    ax.set_ylabel("power")
    ax.legend(fontsize=8)
    path = out / f"{name}.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def render_metric_history(fig_dir, record, metrics: list[str],
                          name: str = "history") -> str:
    """Step series of scalar metrics from a run record."""
    out = _ensure(fig_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric in metrics:
        series = record.metric_series(metric)
        if not series:
            continue
        steps, values = zip(*series)
        ax.plot(steps, values, label=metric)
    ax.set_xlabel("step")
    ax.legend(fontsize=8)
    path = out / f"{name}.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def render_samples_grid(fig_dir, images: np.ndarray, name: str = "samples",
                        cols: int = 4) -> str:
    """Grayscale grid of image-shaped samples."""
    out = _ensure(fig_dir)
    n = len(images)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2 * cols, 2 * rows))
    for i, ax in enumerate(np.atleast_1d(axes).ravel()):
        ax.axis("off")
        if i < n:
            ax.imshow(images[i], cmap="gray")
    path = out / f"{name}.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return str(path)
