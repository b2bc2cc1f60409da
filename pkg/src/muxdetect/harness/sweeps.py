"""Degradation and misalignment sweeps over a trained hybrid model."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from muxdetect.data import VideoDataset
from muxdetect.harness.perturb import Perturbation, perturb
from muxdetect.model import HybridModel
from muxdetect.trainer import EvalResult, evaluate


def summarize(result: EvalResult, L: int) -> dict:
    rep = result.report(L)
    return {
        "accuracy": rep.mean["accuracy"],
        "sensitivity": rep.mean["sensitivity"],
        "specificity": rep.mean["specificity"],
        "accuracy_std": rep.std["accuracy"],
        "ks": rep.overall.ks,
        "overall_accuracy": rep.overall.accuracy,
    }


def _noise_stream(p: Perturbation):
    # one generator per sweep cell so every video draws fresh noise, in a fixed order
    rng = np.random.default_rng(p.seed)

    def apply(raw):
        return np.clip(raw + rng.normal(0.0, p.magnitude, size=raw.shape), 0.0, 1.0)

    return apply


def degradation_sweep(model: HybridModel, testset: VideoDataset, kind: str, magnitudes: Sequence[float], *,
                      seed: int = 0, eval_seed: int = 1234) -> list[dict]:
    rows = []
    for mag in magnitudes:
        p = Perturbation(kind, mag, seed)
        if (kind != "jpeg" and mag == 0):
            fn = None
        elif kind == "gaussian_noise":
            fn = _noise_stream(p)
        else:
            fn = p
        res = evaluate(model, testset, seed=eval_seed, perturb=fn)
        rows.append({"kind": kind, "magnitude": float(mag), **summarize(res, model.layout.L)})
    return rows


def misalignment_sweep(model: HybridModel, testset: VideoDataset, lateral_grid: Sequence[tuple[float, float]],
                       axial_grid: Sequence[float], *, eval_seed: int = 1234) -> list[dict]:
    """Metrics at every (dx, dy, dz) in micrometers, using the training-time shift mechanics."""
    rows = []
    for dx, dy in lateral_grid:
        shift = model.shift_pixels(dx, dy)
        for dz in axial_grid:
            res = evaluate(model, testset, seed=eval_seed, shift=shift, dz=float(dz))
            rows.append({"dx_um": float(dx), "dy_um": float(dy), "dz_um": float(dz),
                         "shift_rows": shift[0], "shift_cols": shift[1], **summarize(res, model.layout.L)})
    return rows
