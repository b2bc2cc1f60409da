"""Matplotlib renderings of score distributions, sweeps and cross-talk.

Every function writes one PNG and returns its path; the matching tables
are written separately as CSV by the CLI.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

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
    "savefig.dpi": 150,
}
REAL_COLOR = "#1f5fbf"
FAKE_COLOR = "#c0392b"


def _save(fig, path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path


def plot_distributions(dist: dict, path, ks: Optional[float] = None, title: str = "",
                       metadata: Optional[dict] = None) -> Path:
    """Score histograms per class with the empirical CDFs in an inset."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        edges = dist["edges"]
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = np.diff(edges)
        ax.bar(centers, dist["counts_real"], width=width, color=REAL_COLOR, alpha=0.6, label="real")
        ax.bar(centers, dist["counts_fake"], width=width, color=FAKE_COLOR, alpha=0.6, label="fake")
        ax.axvline(0.0, color="k", lw=0.8, ls="--")
        ax.set_xlabel("normalized differential score")
        ax.set_ylabel("count")
        ax.legend(loc="upper left", frameon=False)
        inset = ax.inset_axes([0.62, 0.52, 0.36, 0.42])
        x = dist["cdf_x"]
        inset.step(x, dist["cdf_real"], where="post", color=REAL_COLOR, lw=1)
        inset.step(x, dist["cdf_fake"], where="post", color=FAKE_COLOR, lw=1)
        if ks is not None:
            gap = np.abs(dist["cdf_real"] - dist["cdf_fake"])
            k = int(np.argmax(gap))
            inset.vlines(x[k], dist["cdf_real"][k], dist["cdf_fake"][k], color="k", lw=1.5)
            inset.set_title(f"D_KS = {ks:.3f}", fontsize=7)
        inset.tick_params(labelsize=6)
        if title:
            ax.set_title(title)
        return _save(fig, path, metadata)


def plot_sweep(rows: Sequence[dict], xkey: str, path, *, xlabel: str = "", keys=("accuracy", "sensitivity", "specificity"),
               title: str = "", metadata: Optional[dict] = None) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        x = [r[xkey] for r in rows]
        for key, marker in zip(keys, "osd^v"):
            ax.plot(x, [np.nan if r.get(key) is None else r[key] for r in rows], marker=marker, ms=3, lw=1, label=key)
        ax.set_xlabel(xlabel or xkey)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path, metadata)


def plot_channel_metrics(report: dict, path, metadata: Optional[dict] = None) -> Path:
    """Bar chart of per-channel accuracy / sensitivity / specificity with the channel means dashed."""
    chans = report["channels"]
    keys = ("accuracy", "sensitivity", "specificity")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        v = np.arange(len(chans))
        w = 0.27
        for k, key in enumerate(keys):
            vals = [np.nan if c[key] is None else c[key] for c in chans]
            bars = ax.bar(v + (k - 1) * w, vals, width=w, label=key)
            if report["mean"].get(key) is not None:
                ax.axhline(report["mean"][key], ls="--", lw=0.8, color=bars.patches[0].get_facecolor())
        ax.set_xticks(v)
        ax.set_xticklabels([str(i + 1) for i in v])
        ax.set_xlabel("video channel")
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False, ncol=3, loc="lower center")
        return _save(fig, path, metadata)


def plot_crosstalk(matrix: np.ndarray, path, metadata: Optional[dict] = None) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        im = ax.imshow(np.asarray(matrix), cmap="magma", vmin=0)
        ax.set_xlabel("detector pair v")
        ax.set_ylabel("lit tile u")
        fig.colorbar(im, ax=ax, fraction=0.046, label="energy fraction")
        return _save(fig, path, metadata)


def plot_phase_and_sensor(phase: np.ndarray, sensor: np.ndarray, regions, path, metadata: Optional[dict] = None) -> Path:
    """Phase map next to the sensor image with the detector rectangles outlined."""
    from matplotlib.patches import Rectangle

    with plt.rc_context(RC):
        fig, (a, b) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        a.imshow(phase, cmap="twilight", vmin=0, vmax=2 * np.pi)
        a.set_title("phase map")
        b.imshow(sensor, cmap="gray")
        for pos, neg in regions:
            for (r, c, h, w), col in ((pos, FAKE_COLOR), (neg, REAL_COLOR)):
                b.add_patch(Rectangle((c - 0.5, r - 0.5), w, h, fill=False, ec=col, lw=0.8))
        b.set_title("sensor intensity")
        for ax in (a, b):
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path, metadata)
