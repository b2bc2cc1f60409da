"""Optical decoder twin: phase map in, sensor image and per-channel scores out."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from muxdetect.errors import ConfigError, ShapeError
from muxdetect.muxlayout import MuxLayout, readout, to_sensor
from muxdetect.wavefield import CDTYPE, RDTYPE, Field, PropagationPlan, apply_phase, propagate

REAL, FAKE = 0, 1


class DiffractiveStack(nn.Module):
    """K phase-only layers on the modulator grid with K+1 free-space hops.

    Layer phases are stored unwrapped; :meth:`wrapped_layers` gives the
    values in [0, 2*pi) for export.
    """

    def __init__(
        self,
        K: int,
        distances: Sequence[float],
        rows: int,
        cols: int,
        pitch: float,
        *,
        band_limit: bool = True,
        pad_factor: int = 2,
        illumination: Optional[torch.Tensor] = None,
        init_phases: Optional[torch.Tensor] = None,
    ):
        super().__init__()
        if K < 0:
            raise ConfigError("K must be >= 0")
        distances = tuple(float(d) for d in distances)
        if len(distances) != K + 1:
            raise ConfigError(f"K={K} needs {K + 1} distances, got {len(distances)}")
        if any(d <= 0 for d in distances):
            raise ConfigError("all propagation distances must be positive")
        self.K = K
        self.distances = distances
        self.rows, self.cols, self.pitch = rows, cols, float(pitch)
        self.band_limit = band_limit
        self.pad_factor = pad_factor
        phases = torch.zeros(K, rows, cols, dtype=RDTYPE) if init_phases is None else init_phases.to(RDTYPE).clone()
        if tuple(phases.shape) != (K, rows, cols):
            raise ShapeError(f"layer phases must have shape {(K, rows, cols)}")
        self.layers = nn.Parameter(phases, requires_grad=K > 0)
        self.illumination = illumination

    @classmethod
    def free_space(cls, layout: MuxLayout, distance: Optional[float] = None, **kw) -> "DiffractiveStack":
        d = layout.propagation_distance if distance is None else distance
        return cls(0, (d,), layout.slm_rows, layout.slm_cols, layout.slm_pitch, **kw)

    @classmethod
    def with_layers(cls, layout: MuxLayout, K: int, **kw) -> "DiffractiveStack":
        """K layers splitting the layout's total distance into K+1 equal hops."""
        d = layout.propagation_distance / (K + 1)
        return cls(K, (d,) * (K + 1), layout.slm_rows, layout.slm_cols, layout.slm_pitch, **kw)

    def wrapped_layers(self) -> torch.Tensor:
        return torch.remainder(self.layers.detach(), 2 * math.pi)

    def geometry(self) -> dict:
        return {
            "K": self.K,
            "distances": list(self.distances),
            "rows": self.rows,
            "cols": self.cols,
            "pitch": self.pitch,
            "band_limit": self.band_limit,
            "pad_factor": self.pad_factor,
        }

    def plans(self, dz: float = 0.0) -> list[PropagationPlan]:
        ds = list(self.distances)
        ds[-1] += dz
        return [PropagationPlan(d, self.band_limit, self.pad_factor) for d in ds]


def propagate_stack(amplitude: torch.Tensor, stack: DiffractiveStack, layout: MuxLayout, dz: float = 0.0) -> torch.Tensor:
    """Complex output-plane field for an input amplitude of shape (..., rows, cols)."""
    if tuple(amplitude.shape[-2:]) != (stack.rows, stack.cols):
        raise ShapeError(f"input grid {tuple(amplitude.shape[-2:])} does not match stack {(stack.rows, stack.cols)}")
    field = Field(amplitude, layout.slm_pitch, layout.wavelength, check=False)
    plans = stack.plans(dz)
    field = propagate(field, plans[0])
    for k in range(stack.K):
        field = apply_phase(field, stack.layers[k])
        field = propagate(field, plans[k + 1])
    return field.amplitude


def modulate(phase: torch.Tensor, stack: DiffractiveStack) -> torch.Tensor:
    amp = torch.polar(torch.ones_like(phase, dtype=RDTYPE), phase.to(RDTYPE))
    if stack.illumination is not None:
        amp = amp * stack.illumination.to(CDTYPE)
    return amp


def decode(phase: torch.Tensor, stack: DiffractiveStack, layout: MuxLayout, dz: float = 0.0) -> torch.Tensor:
    """Sensor intensity for a phase map (..., slm_rows, slm_cols)."""
    if tuple(phase.shape[-2:]) != (layout.slm_rows, layout.slm_cols):
        raise ShapeError(f"phase map {tuple(phase.shape[-2:])} does not match modulator {(layout.slm_rows, layout.slm_cols)}")
    out = propagate_stack(modulate(phase, stack), stack, layout, dz)
    return to_sensor(out.real**2 + out.imag**2, layout)


def differential_scores(pairs: torch.Tensor) -> torch.Tensor:
    """(I+ - I-) / (I+ + I-) from a (..., L, 2) readout; 0 where both vanish."""
    ip, im = pairs[..., 0], pairs[..., 1]
    total = ip + im
    dark = total == 0
    safe = torch.where(dark, torch.ones_like(total), total)
    return torch.where(dark, torch.zeros_like(total), (ip - im) / safe)


def decide(score) -> int:
    return FAKE if score > 0 else REAL


@dataclass(frozen=True)
class ChannelScore:
    v: int
    i_plus: float
    i_minus: float
    score: float
    decision: int

    @property
    def label(self) -> str:
        return "fake" if self.decision == FAKE else "real"


def score_channels(image: torch.Tensor, layout: MuxLayout) -> list[ChannelScore]:
    pairs = readout(torch.as_tensor(image, dtype=RDTYPE), layout)
    scores = differential_scores(pairs)
    return [
        ChannelScore(v, float(pairs[v, 0]), float(pairs[v, 1]), float(scores[v]), decide(float(scores[v])))
        for v in range(layout.L)
    ]


def illumination_correct(raw: np.ndarray, flat_reference: np.ndarray, blur_sigma: float, floor: float = 1e-12) -> np.ndarray:
    """Divide a capture by the blurred, mean-normalized flat-field capture."""
    raw = np.asarray(raw, dtype=np.float64)
    flat = np.asarray(flat_reference, dtype=np.float64)
    if raw.shape != flat.shape:
        raise ShapeError(f"raw {raw.shape} and flat reference {flat.shape} differ")
    blurred = ndimage.gaussian_filter(flat, blur_sigma, mode="nearest") if blur_sigma > 0 else flat
    blurred = np.maximum(blurred, floor * max(float(blurred.max()), 1.0))
    gain = blurred / blurred.mean()
    return raw / gain


# FLOP convention: a 2D transform of P points costs 5*P*log2(P); a complex
# multiply 6; |.|^2 costs 3 per pixel. Sensor resampling is not counted.
def flops_fft(points: int) -> float:
    return 5.0 * points * math.log2(points)


def flops_decode(layout: MuxLayout, stack: DiffractiveStack) -> float:
    grid = layout.slm_rows * layout.slm_cols
    padded = grid * stack.pad_factor**2
    hop = 2 * flops_fft(padded) + 6 * padded
    return (stack.K + 1) * hop + stack.K * 6 * grid + 3 * grid
