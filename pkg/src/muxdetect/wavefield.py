"""Scalar coherent wave optics on a sampled grid.

Fields are complex128 tensors whose last two axes are (rows, cols); any
leading axes are treated as a batch. All propagation runs in double
precision through the band-limited angular spectrum method, and the
propagation operator carries its own adjoint so gradients flow through
:func:`propagate_adjoint` rather than through autograd's FFT rules.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace

import torch

from muxdetect.errors import InvalidInputError, ShapeError

log = logging.getLogger(__name__)

CDTYPE = torch.complex128
RDTYPE = torch.float64


@dataclass(frozen=True)
class Field:
    """Complex amplitude on a square-pixel grid.

    Lengths are in micrometers. ``amplitude`` may carry leading batch axes.
    """

    amplitude: torch.Tensor
    pitch: float
    wavelength: float
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        amp = self.amplitude
        if amp.ndim < 2:
            raise ShapeError(f"field needs at least 2 dims, got shape {tuple(amp.shape)}")
        if amp.shape[-1] < 1 or amp.shape[-2] < 1:
            raise ShapeError("field grid must be at least 1x1")
        if not (self.pitch > 0 and self.wavelength > 0):
            raise InvalidInputError("pitch and wavelength must be positive")
        if not amp.is_complex():
            object.__setattr__(self, "amplitude", amp.to(CDTYPE))
        elif amp.dtype != CDTYPE:
            object.__setattr__(self, "amplitude", amp.to(CDTYPE))
        if self.check and not bool(torch.isfinite(torch.view_as_real(self.amplitude.detach())).all()):
            raise InvalidInputError("field contains non-finite values")

    @property
    def rows(self) -> int:
        return self.amplitude.shape[-2]

    @property
    def cols(self) -> int:
        return self.amplitude.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def energy(self) -> torch.Tensor:
        """Sum of |amplitude|^2 over the grid (per batch element)."""
        return intensity(self).sum(dim=(-2, -1))

    def with_amplitude(self, amplitude: torch.Tensor) -> "Field":
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class PropagationPlan:
    distance: float
    band_limit: bool = False
    pad_factor: int = 1

    def __post_init__(self):
        if self.pad_factor not in (1, 2):
            raise InvalidInputError(f"pad_factor must be 1 or 2, got {self.pad_factor}")
        if not math.isfinite(self.distance):
            raise InvalidInputError("propagation distance must be finite")


def plane_wave(rows: int, cols: int, pitch: float, wavelength: float) -> Field:
    return Field(torch.ones(rows, cols, dtype=CDTYPE), pitch, wavelength)


def intensity(field: Field) -> torch.Tensor:
    amp = field.amplitude
    return amp.real**2 + amp.imag**2


def apply_phase(field: Field, phase: torch.Tensor) -> Field:
    if tuple(phase.shape[-2:]) != field.shape:
        raise ShapeError(f"phase grid {tuple(phase.shape[-2:])} does not match field {field.shape}")
    return replace(field, amplitude=field.amplitude * torch.polar(torch.ones_like(phase, dtype=RDTYPE), phase.to(RDTYPE)), check=False)


@functools.lru_cache(maxsize=None)
def _sampling_note(pitch: float, wavelength: float) -> None:
    # lru_cache makes this fire once per (pitch, wavelength)
    log.warning(
        "pitch %.4g um exceeds wavelength/2 (%.4g um); only the paraxial part of the angular spectrum is sampled",
        pitch,
        wavelength / 2,
    )


@functools.lru_cache(maxsize=64)
def transfer_function(
    rows: int, cols: int, pitch: float, wavelength: float, distance: float, band_limit: bool
) -> torch.Tensor:
    """Angular spectrum transfer function on an unshifted FFT frequency grid.

    Evanescent frequencies are always zeroed. With ``band_limit`` the
    per-axis anti-aliasing bound 1/(lambda*sqrt((2*df*z)^2 + 1)) is applied
    as well. The returned tensor is shared through the cache and must not be
    modified in place.
    """
    fy = torch.fft.fftfreq(rows, d=pitch, dtype=RDTYPE)
    fx = torch.fft.fftfreq(cols, d=pitch, dtype=RDTYPE)
    FY, FX = torch.meshgrid(fy, fx, indexing="ij")
    arg = 1.0 / wavelength**2 - FX**2 - FY**2
    propagating = arg > 0
    kz = torch.sqrt(torch.clamp(arg, min=0.0))
    H = torch.polar(propagating.to(RDTYPE), 2 * math.pi * distance * kz)
    if band_limit:
        dfy = 1.0 / (rows * pitch)
        dfx = 1.0 / (cols * pitch)
        fmax_y = 1.0 / (wavelength * math.sqrt((2 * dfy * distance) ** 2 + 1))
        fmax_x = 1.0 / (wavelength * math.sqrt((2 * dfx * distance) ** 2 + 1))
        keep = (FX.abs() <= fmax_x) & (FY.abs() <= fmax_y)
        H = H * keep
    return H


def _padded_shape(rows: int, cols: int, pad_factor: int) -> tuple[int, int]:
    return rows * pad_factor, cols * pad_factor


def _apply_transfer(amp: torch.Tensor, H: torch.Tensor, pad_factor: int) -> torch.Tensor:
    rows, cols = amp.shape[-2:]
    if pad_factor == 1:
        return torch.fft.ifft2(torch.fft.fft2(amp) * H)
    prow, pcol = _padded_shape(rows, cols, pad_factor)
    r0, c0 = (prow - rows) // 2, (pcol - cols) // 2
    padded = amp.new_zeros(amp.shape[:-2] + (prow, pcol))
    padded[..., r0 : r0 + rows, c0 : c0 + cols] = amp
    out = torch.fft.ifft2(torch.fft.fft2(padded) * H)
    return out[..., r0 : r0 + rows, c0 : c0 + cols]


class _Propagate(torch.autograd.Function):
    @staticmethod
    def forward(ctx, amp, H, pad_factor):
        ctx.save_for_backward(H)
        ctx.pad_factor = pad_factor
        return _apply_transfer(amp, H, pad_factor)

    @staticmethod
    def backward(ctx, grad):
        (H,) = ctx.saved_tensors
        # torch's complex convention: the vjp of a linear map is its conjugate transpose
        return _apply_transfer(grad, H.conj(), ctx.pad_factor), None, None


def _plan_transfer(field: Field, plan: PropagationPlan) -> torch.Tensor:
    if field.pitch > field.wavelength / 2:
        _sampling_note(field.pitch, field.wavelength)
    prow, pcol = _padded_shape(field.rows, field.cols, plan.pad_factor)
    return transfer_function(prow, pcol, float(field.pitch), float(field.wavelength), float(plan.distance), plan.band_limit)


def propagate(field: Field, plan: PropagationPlan) -> Field:
    if plan.distance == 0 and not plan.band_limit:
        return field
    H = _plan_transfer(field, plan)
    out = _Propagate.apply(field.amplitude, H, plan.pad_factor)
    return replace(field, amplitude=out, check=False)


def propagate_adjoint(cotangent: Field, plan: PropagationPlan) -> Field:
    """Conjugate transpose of :func:`propagate` for the same grid and plan."""
    if plan.distance == 0 and not plan.band_limit:
        return cotangent
    H = _plan_transfer(cotangent, plan)
    out = _apply_transfer(cotangent.amplitude, H.conj(), plan.pad_factor)
    return replace(cotangent, amplitude=out, check=False)


def inner(u: Field, v: Field) -> complex:
    """<u, v> = sum(conj(u) * v)."""
    return complex(torch.sum(u.amplitude.conj() * v.amplitude))
