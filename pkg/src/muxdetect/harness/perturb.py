"""Frame degradations in the canonical [0, 1] intensity domain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from muxdetect.errors import InvalidInputError

KINDS = ("gaussian_noise", "gaussian_blur", "jpeg")

LUMA_QUANT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class Perturbation:
    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if self.kind == "jpeg":
            if self.magnitude != int(self.magnitude) or not 1 <= self.magnitude <= 100:
                raise InvalidInputError(f"JPEG quality must be an integer in [1, 100], got {self.magnitude}")
        elif not (self.magnitude >= 0 and math.isfinite(self.magnitude)):
            raise InvalidInputError(f"{self.kind} sigma must be finite and >= 0, got {self.magnitude}")

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        return perturb(frames, self)


def quant_table(quality: int) -> np.ndarray:
    """IJG-scaled luminance quantization table."""
    q = int(quality)
    scale = 5000 / q if q < 50 else 200 - 2 * q
    table = np.floor((LUMA_QUANT * scale + 50) / 100)
    return np.clip(table, 1, 255)


def jpeg_roundtrip(frame: np.ndarray, quality: int) -> np.ndarray:
    """Quantize/dequantize 8x8 DCT blocks of an 8-bit-scaled [0, 1] frame."""
    x = np.round(np.clip(frame, 0.0, 1.0) * 255.0) - 128.0
    h, w = x.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    blocks = x.reshape(x.shape[0] // 8, 8, x.shape[1] // 8, 8).transpose(0, 2, 1, 3)
    table = quant_table(quality)
    coef = sfft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    coef = np.round(coef / table) * table
    rec = sfft.idctn(coef, type=2, norm="ortho", axes=(-2, -1))
    rec = rec.transpose(0, 2, 1, 3).reshape(x.shape)[:h, :w]
    return np.clip(np.round(rec + 128.0), 0, 255) / 255.0


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def perturb(frames: np.ndarray, p: Perturbation) -> np.ndarray:
    """Apply ``p`` to frames (..., H, W) with values in [0, 1]."""
    x = np.asarray(frames, dtype=np.float64)
    if p.kind == "gaussian_noise":
        if p.magnitude == 0:
            return x.copy()
        rng = np.random.default_rng(p.seed)
        return np.clip(x + rng.normal(0.0, p.magnitude, size=x.shape), 0.0, 1.0)
    if p.kind == "gaussian_blur":
        if p.magnitude == 0:
            return x.copy()
        k = gaussian_kernel(p.magnitude)
        out = ndimage.convolve1d(x, k, axis=-2, mode="nearest")
        return ndimage.convolve1d(out, k, axis=-1, mode="nearest")
    flat = x.reshape(-1, *x.shape[-2:])
    out = np.stack([jpeg_roundtrip(f, int(p.magnitude)) for f in flat])
    return out.reshape(x.shape)
