"""Figure rendering for reports: range-image previews, loss curves, sweeps.

All figures are written as PNG files next to their CSV/text counterparts.
PNG metadata is pinned so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METADATA = {"Software": "sglidar"}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, metadata=_METADATA, bbox_inches="tight")
    plt.close(fig)


def save_range_panel(
    range_img: np.ndarray,
    classes: np.ndarray | None,
    path: str | Path,
    title: str = "",
    r_max: float | None = None,
) -> None:
    """Two-row preview: range channel on top, class ids below."""
    rows = 2 if classes is not None else 1
    fig, axes = plt.subplots(rows, 1, figsize=(10, 1.6 * rows + 0.6), squeeze=False)
    vmax = r_max if r_max is not None else max(float(np.max(range_img)), 1.0)
    im = axes[0][0].imshow(
        range_img, origin="lower", cmap="viridis", vmin=0.0, vmax=vmax, aspect="auto"
    )
    axes[0][0].set_ylabel("range")
    fig.colorbar(im, ax=axes[0][0], fraction=0.025)
    if classes is not None:
        im2 = axes[1][0].imshow(
            classes, origin="lower", cmap="tab10", vmin=0, vmax=9, aspect="auto"
        )
        axes[1][0].set_ylabel("class")
        fig.colorbar(im2, ax=axes[1][0], fraction=0.025)
    if title:
        fig.suptitle(title)
    for row in axes:
        row[0].set_xticks([])
        row[0].set_yticks([])
    _save(fig, path)


def save_loss_curves(csv_path: str | Path, out_path: str | Path) -> None:
    """Training curves from a loss.csv file (step, ddpm, sa, lambda)."""
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    if data.size == 0:
        return
    data = np.atleast_1d(data)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.plot(data["step"], data["ddpm_loss"], lw=0.8, label="noise MSE")
    ax1.set_yscale("log")
    ax1.set_ylabel("noise MSE")
    ax1.legend(loc="upper right")
    ax2.plot(data["step"], data["sa_loss"], lw=0.8, color="tab:orange", label="alignment")
    ax2.set_ylabel("alignment loss")
    ax2.set_xlabel("step")
    ax2.legend(loc="upper right")
    _save(fig, out_path)


def save_metrics_figure(rows: list[tuple[str, str]], out_path: str | Path) -> None:
    """Bar chart of the numeric metric entries of a report."""
    names, vals = [], []
    for key, val in rows:
        if key.startswith("provenance."):
            continue
        try:
            vals.append(float(val))
            names.append(key)
        except ValueError:
            continue
    fig, ax = plt.subplots(figsize=(6, 3.2))
    if names:
        ax.bar(range(len(names)), vals, color="tab:blue")
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
        for i, v in enumerate(vals):
            ax.annotate(f"{v:.4g}", (i, v), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("value")
    ax.set_title("evaluation metrics")
    _save(fig, out_path)


def save_sweep_figure(
    values: list[float],
    metric_rows: list[dict],
    grid_key: str,
    out_path: str | Path,
) -> None:
    """Sweep curves plus the fidelity/diversity trade-off panel."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
    for key in ("ffd", "jsd", "mmd"):
        ys = [row.get(key) for row in metric_rows]
        if any(y is not None for y in ys):
            ax1.plot(values, ys, marker="o", label=key)
    ax1.set_xlabel(grid_key)
    ax1.set_ylabel("metric")
    ax1.legend()
    ax1.set_title(f"metrics vs {grid_key}")

    ffd = [row.get("ffd") for row in metric_rows]
    jsd_v = [row.get("jsd") for row in metric_rows]
    if all(v is not None for v in ffd) and all(v is not None for v in jsd_v):
        ax2.plot(ffd, jsd_v, marker="o", color="tab:red")
        for x, y, v in zip(ffd, jsd_v, values):
            ax2.annotate(f"{v:g}", (x, y), fontsize=8)
        ax2.set_xlabel("feature distance (fidelity)")
        ax2.set_ylabel("jsd (diversity)")
        ax2.set_title("fidelity vs diversity")
    _save(fig, out_path)
