"""Figures rendered next to training logs and evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
}

LOSS_TERMS = ("recon", "kl", "adv_g", "fm", "scl", "adv_d")


def _smooth(y, width):
    if width <= 1 or len(y) < width:
        return np.asarray(y, dtype=float)
    k = np.ones(width) / width
    return np.convolve(y, k, mode="valid")


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_log(records: list[dict], path, phase_boundary: int | None = None, smooth: int = 25) -> Path:
    """One panel per loss term against step, with the phase switch marked."""
    steps = np.array([r["step"] for r in records])
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 3, figsize=(10, 5.2), sharex=True)
        for ax, key in zip(axes.flat, LOSS_TERMS):
            y = np.array([r[key] for r in records], dtype=float)
            ax.plot(steps, y, color="0.8", lw=0.6)
            ys = _smooth(y, smooth)
            ax.plot(steps[len(steps) - len(ys):], ys, color="C0", lw=1.2)
            if phase_boundary is not None:
                ax.axvline(phase_boundary, color="C3", ls="--", lw=0.8)
            ax.set_title(key)
        for ax in axes[-1]:
            ax.set_xlabel("step")
        fig.tight_layout()
    return save(fig, path)


def plot_similarity_trials(same: list[float], cross: list[float], path) -> Path:
    """Paired similarity to the intended vs the other reference, per trial."""
    idx = np.arange(len(same))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.bar(idx - 0.2, same, 0.4, label="target reference")
        ax.bar(idx + 0.2, cross, 0.4, label="other reference")
        ax.set_xlabel("trial")
        ax.set_ylabel("cosine similarity")
        ax.set_xticks(idx)
        ax.legend(frameon=False)
        fig.tight_layout()
    return save(fig, path)


def plot_report(rows: list[dict], path) -> Path:
    """Histograms of the numeric metrics in an evaluation report."""
    keys = ("speaker_similarity", "f0_pcc", "content_distance")
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.8))
        for ax, key in zip(axes, keys):
            vals = []
            for r in rows:
                try:
                    vals.append(float(r[key]))
                except (TypeError, ValueError):
                    pass
            if vals:
                ax.hist(vals, bins=min(20, max(3, len(vals))), color="C0")
            else:
                ax.text(0.5, 0.5, "no values", ha="center", va="center", transform=ax.transAxes)
            ax.set_title(key)
        fig.tight_layout()
    return save(fig, path)
