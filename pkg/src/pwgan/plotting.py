"""Report figures written next to the key=value outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import tensor as T  # noqa: E402
from .dsp import StftConfig, stft_magnitude  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fig.get_layout_engine() is None:
        fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training(records: Sequence[dict], validation: Sequence[dict], path) -> Path:
    """Loss curves (top) and learning rates (bottom) against step."""
    steps = np.array([r["step"] for r in records])
    fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(6.4, 5.2), sharex=True,
                                    gridspec_kw={"height_ratios": [3, 1]})
    for key, label in (("l_aux", "multi-res STFT"), ("l_adv", "adversarial (G)"), ("l_d", "discriminator")):
        if records and key in records[0]:
            ax.plot(steps, [r[key] for r in records], lw=0.8, label=label)
    if validation:
        ax.plot([v["step"] for v in validation], [v["val_aux"] for v in validation],
                "o-", ms=3, color="k", label="held-out STFT")
    frozen = [r["step"] for r in records if r.get("phase") == "frozen"]
    if frozen:
        ax.axvspan(min(frozen), max(frozen), color="0.92", zorder=0, label="D frozen")
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax_lr.plot(steps, [r["lr_g"] for r in records], label="G")
    ax_lr.plot(steps, [r["lr_d"] for r in records], label="D")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.legend(frameon=False)
    return _save(fig, path)


def plot_spectrograms(reference: np.ndarray, generated: np.ndarray, path,
                      cfg: StftConfig = StftConfig(1024, 600, 120)) -> Path:
    with T.no_grad():
        mags = [stft_magnitude(np.asarray(x, dtype=np.float64), cfg).data for x in (reference, generated)]
    vmax = max(20 * np.log10(m).max() for m in mags)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3), sharey=True, layout="constrained")
    for ax, mag, title in zip(axes, mags, ("reference", "generated")):
        im = ax.imshow(20 * np.log10(mag.T), origin="lower", aspect="auto",
                       vmin=vmax - 80, vmax=vmax, cmap="magma",
                       extent=(0, mag.shape[0], 0, 12.0))
        ax.set_title(title)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("kHz")
    fig.colorbar(im, ax=axes, label="dB")
    return _save(fig, path)


def plot_eval(rows: Sequence[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 2.8))
    vals = [r["l_aux"] for r in rows]
    ax.bar(range(len(vals)), vals, color="0.4")
    ax.axhline(np.mean(vals), color="C3", lw=1, label=f"mean {np.mean(vals):.3f}")
    ax.set_xlabel("clip")
    ax.set_ylabel("multi-res STFT loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_bench(seconds: Sequence[float], wall: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(seconds, wall, "o-")
    ax.set_xlabel("audio seconds")
    ax.set_ylabel("wall seconds")
    ax.set_xlim(left=0)
    ax.set_ylim(bottom=0)
    return _save(fig, path)
