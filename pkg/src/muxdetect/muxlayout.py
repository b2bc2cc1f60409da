"""Placement of video/frame tiles on the modulator and detector pairs on the sensor.

Pixel rectangles are ``(row0, col0, rows, cols)``, half-open. Physical
coordinates are measured from the optical axis, which passes through the
center of both the modulator grid and the sensor grid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import torch

from muxdetect.errors import ConfigError, InvalidInputError, ShapeError

TWO_PI = 2 * math.pi

Rect = tuple[int, int, int, int]


def _grid_for(count: int) -> tuple[int, int]:
    known = {1: (1, 1), 4: (2, 2), 12: (3, 4), 15: (3, 5), 16: (4, 4), 18: (3, 6)}
    if count in known:
        return known[count]
    rows = int(math.floor(math.sqrt(count)))
    return rows, int(math.ceil(count / rows))


def _overlap(a: Rect, b: Rect) -> bool:
    return not (
        a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0] or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1]
    )


@dataclass(frozen=True)
class MuxLayout:
    """Geometry of L video tiles x N frame sub-tiles and 2L detector rectangles.

    Lengths in micrometers, gaps and detector sizes in pixels (modulator
    pixels for tile gaps, sensor pixels for detectors). When
    ``detector_regions`` is left empty it is derived: each channel gets a
    positive (left) and negative (right) rectangle of ``det_rows x det_cols``
    separated by ``det_gap`` and centered under the channel's tile footprint
    mapped through ``sensor_scale``.
    """

    L: int = 15
    N: int = 12
    interp_factor: int = 2
    tile_rows: int = 32
    tile_cols: int = 32
    video_grid: tuple[int, int] = (3, 5)
    frame_grid: tuple[int, int] = (3, 4)
    frame_gap: int = 0
    video_gap: int = 64
    slm_rows: int = 1056
    slm_cols: int = 1920
    slm_pitch: float = 8.0
    sensor_rows: int = 1216
    sensor_cols: int = 1936
    sensor_pitch: float = 5.86
    sensor_scale: float = 0.72
    det_rows: int = 64
    det_cols: int = 64
    det_gap: int = 32
    wavelength: float = 0.52
    propagation_distance: float = 50_000.0
    detector_regions: tuple = field(default=())

    def __post_init__(self):
        for name in ("video_grid", "frame_grid"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        if self.L < 1 or self.N < 1 or self.interp_factor < 1:
            raise ConfigError("L, N and interp_factor must be >= 1")
        if self.L > self.video_grid[0] * self.video_grid[1]:
            raise ConfigError(f"video grid {self.video_grid} cannot hold L={self.L} tiles")
        if self.N > self.frame_grid[0] * self.frame_grid[1]:
            raise ConfigError(f"frame grid {self.frame_grid} cannot hold N={self.N} sub-tiles")
        if min(self.slm_pitch, self.sensor_pitch, self.sensor_scale, self.wavelength) <= 0:
            raise ConfigError("pitches, sensor_scale and wavelength must be positive")
        if min(self.frame_gap, self.video_gap) < 0:
            raise ConfigError("gaps must be non-negative")
        vr, vc = self.array_shape
        if vr > self.slm_rows or vc > self.slm_cols:
            raise ConfigError(
                f"tile array {vr}x{vc} does not fit the {self.slm_rows}x{self.slm_cols} modulator"
            )
        if self.detector_regions:
            regions = tuple((tuple(int(x) for x in p), tuple(int(x) for x in n)) for p, n in self.detector_regions)
        else:
            regions = self._derive_detectors()
        if len(regions) != self.L:
            raise ConfigError(f"need {self.L} detector pairs, got {len(regions)}")
        object.__setattr__(self, "detector_regions", regions)
        self._check_detectors(regions)

    # ---- modulator plane -------------------------------------------------

    @property
    def subtile_shape(self) -> tuple[int, int]:
        return self.tile_rows * self.interp_factor, self.tile_cols * self.interp_factor

    @property
    def video_block_shape(self) -> tuple[int, int]:
        sr, sc = self.subtile_shape
        fr, fc = self.frame_grid
        return fr * sr + (fr - 1) * self.frame_gap, fc * sc + (fc - 1) * self.frame_gap

    @property
    def array_shape(self) -> tuple[int, int]:
        br, bc = self.video_block_shape
        gr, gc = self.video_grid
        return gr * br + (gr - 1) * self.video_gap, gc * bc + (gc - 1) * self.video_gap

    def video_origin(self, v: int) -> tuple[int, int]:
        br, bc = self.video_block_shape
        ar, ac = self.array_shape
        r0 = (self.slm_rows - ar) // 2
        c0 = (self.slm_cols - ac) // 2
        gr, gc = divmod(v, self.video_grid[1])
        return r0 + gr * (br + self.video_gap), c0 + gc * (bc + self.video_gap)

    def video_rect(self, v: int) -> Rect:
        self._check_index(v, 0)
        r, c = self.video_origin(v)
        return (r, c, *self.video_block_shape)

    def slot(self, v: int, i: int) -> Rect:
        """Modulator rectangle holding frame ``i`` of video ``v`` (after upsampling)."""
        self._check_index(v, i)
        r, c = self.video_origin(v)
        sr, sc = self.subtile_shape
        fr, fc = divmod(i, self.frame_grid[1])
        return (r + fr * (sr + self.frame_gap), c + fc * (sc + self.frame_gap), sr, sc)

    def _check_index(self, v: int, i: int):
        if not (0 <= v < self.L and 0 <= i < self.N):
            raise IndexError(f"slot ({v}, {i}) out of range for L={self.L}, N={self.N}")

    def video_center_um(self, v: int) -> tuple[float, float]:
        r, c, h, w = self.video_rect(v)
        y = (r + (h - 1) / 2 - (self.slm_rows - 1) / 2) * self.slm_pitch
        x = (c + (w - 1) / 2 - (self.slm_cols - 1) / 2) * self.slm_pitch
        return y, x

    # ---- sensor plane ----------------------------------------------------

    def _derive_detectors(self) -> tuple:
        out = []
        for v in range(self.L):
            y, x = self.video_center_um(v)
            cy = (self.sensor_rows - 1) / 2 + y * self.sensor_scale / self.sensor_pitch
            cx = (self.sensor_cols - 1) / 2 + x * self.sensor_scale / self.sensor_pitch
            r0 = int(round(cy - (self.det_rows - 1) / 2))
            width = 2 * self.det_cols + self.det_gap
            c0 = int(round(cx - (width - 1) / 2))
            pos = (r0, c0, self.det_rows, self.det_cols)
            neg = (r0, c0 + self.det_cols + self.det_gap, self.det_rows, self.det_cols)
            out.append((pos, neg))
        return tuple(out)

    def _check_detectors(self, regions):
        rects = [r for pair in regions for r in pair]
        for r in rects:
            if r[2] < 1 or r[3] < 1:
                raise ConfigError(f"empty detector rectangle {r}")
            if r[0] < 0 or r[1] < 0 or r[0] + r[2] > self.sensor_rows or r[1] + r[3] > self.sensor_cols:
                raise ConfigError(f"detector rectangle {r} leaves the {self.sensor_rows}x{self.sensor_cols} sensor")
        for a in range(len(rects)):
            for b in range(a + 1, len(rects)):
                if _overlap(rects[a], rects[b]):
                    raise ConfigError(f"detector rectangles {rects[a]} and {rects[b]} overlap")

    def shifted(self, drow: int, dcol: int) -> "MuxLayout":
        """Same layout with every detector rectangle moved by whole sensor pixels."""
        if drow == 0 and dcol == 0:
            return self
        regions = tuple(
            tuple((r[0] + drow, r[1] + dcol, r[2], r[3]) for r in pair) for pair in self.detector_regions
        )
        return replace(self, detector_regions=regions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["video_grid"] = list(self.video_grid)
        d["frame_grid"] = list(self.frame_grid)
        d["detector_regions"] = [[list(p), list(n)] for p, n in self.detector_regions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MuxLayout":
        d = dict(d)
        if "detector_regions" in d:
            d["detector_regions"] = tuple((tuple(p), tuple(n)) for p, n in d["detector_regions"])
        for k in ("video_grid", "frame_grid"):
            if k in d:
                d[k] = tuple(d[k])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown layout keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def for_counts(cls, L: int, N: int, **kw) -> "MuxLayout":
        kw.setdefault("video_grid", _grid_for(L))
        kw.setdefault("frame_grid", _grid_for(N))
        return cls(L=L, N=N, **kw)

    @classmethod
    def toy(cls, **kw) -> "MuxLayout":
        """Desk-scale geometry: 4 videos x 4 frames of 64x64 tiles on a 384x384 grid."""
        params = dict(
            L=4, N=4, interp_factor=1, tile_rows=64, tile_cols=64, video_grid=(2, 2), frame_grid=(2, 2),
            frame_gap=0, video_gap=64, slm_rows=384, slm_cols=384, slm_pitch=8.0,
            sensor_rows=384, sensor_cols=384, sensor_pitch=8.0, sensor_scale=1.0,
            det_rows=24, det_cols=24, det_gap=16, propagation_distance=20_000.0,
        )
        params.update(kw)
        return cls(**params)


# ---- phase map assembly ---------------------------------------------------


def assemble_phase(tiles: torch.Tensor, layout: MuxLayout) -> torch.Tensor:
    """Write L x N phase sub-tiles into a modulator-sized phase map.

    ``tiles`` has shape (..., L, N, tile_rows, tile_cols). Each sub-tile is
    upsampled by nearest-neighbour replication; pixels outside every slot
    stay at phase 0.
    """
    expected = (layout.L, layout.N, layout.tile_rows, layout.tile_cols)
    if tuple(tiles.shape[-4:]) != expected:
        raise ShapeError(f"expected tiles of shape (..., {expected}), got {tuple(tiles.shape)}")
    f = layout.interp_factor
    up = tiles
    if f > 1:
        up = tiles.repeat_interleave(f, dim=-2).repeat_interleave(f, dim=-1)
    phase = tiles.new_zeros(tiles.shape[:-4] + (layout.slm_rows, layout.slm_cols))
    for v in range(layout.L):
        for i in range(layout.N):
            r, c, h, w = layout.slot(v, i)
            phase[..., r : r + h, c : c + w] = up[..., v, i, :, :]
    return phase


def extract_tile(phase: torch.Tensor, v: int, i: int, layout: MuxLayout) -> torch.Tensor:
    r, c, h, w = layout.slot(v, i)
    f = layout.interp_factor
    return phase[..., r : r + h : f, c : c + w : f]


def slot_mask(layout: MuxLayout, videos=None) -> torch.Tensor:
    """Boolean modulator mask covering the frame slots of the given videos (default all)."""
    mask = torch.zeros(layout.slm_rows, layout.slm_cols, dtype=torch.bool)
    for v in range(layout.L) if videos is None else videos:
        for i in range(layout.N):
            r, c, h, w = layout.slot(v, i)
            mask[r : r + h, c : c + w] = True
    return mask


# ---- sensor plane ---------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _box_weights(n_out: int, pitch_out: float, n_in: int, pitch_in: float):
    """Area-overlap weights mapping an input pixel row onto output pixels.

    Returns (index, weight) tensors of shape (n_out, taps); weights are the
    overlap length divided by the output pixel width, so a uniform input of
    value c maps to c wherever the output pixel is fully covered.
    """
    taps = int(math.ceil(pitch_out / pitch_in)) + 2
    j = torch.arange(n_out, dtype=torch.float64)
    lo = (j - (n_out - 1) / 2) * pitch_out - pitch_out / 2
    hi = lo + pitch_out
    # fractional input-pixel coordinate of each output pixel's lower edge
    first = torch.floor(lo / pitch_in + (n_in - 1) / 2 + 0.5).to(torch.int64)
    idx = first[:, None] + torch.arange(taps)[None, :]
    in_lo = (idx.to(torch.float64) - (n_in - 1) / 2) * pitch_in - pitch_in / 2
    in_hi = in_lo + pitch_in
    ov = torch.clamp(torch.minimum(in_hi, hi[:, None]) - torch.maximum(in_lo, lo[:, None]), min=0.0)
    valid = (idx >= 0) & (idx < n_in)
    w = torch.where(valid, ov / pitch_out, torch.zeros_like(ov))
    idx = idx.clamp(0, n_in - 1)
    return idx, w


def _resample_axis(img: torch.Tensor, idx: torch.Tensor, w: torch.Tensor, dim: int) -> torch.Tensor:
    img = img.movedim(dim, -1)
    gathered = img[..., idx]  # (..., n_out, taps)
    out = (gathered * w).sum(-1)
    return out.movedim(-1, dim)


def to_sensor(image: torch.Tensor, layout: MuxLayout) -> torch.Tensor:
    """Box-integrate a modulator-grid intensity onto the sensor grid.

    Sensor pixels have an effective width of sensor_pitch / sensor_scale in
    the modulator plane. Output values are area-averaged intensities.
    """
    eff = layout.sensor_pitch / layout.sensor_scale
    if (
        image.shape[-2:] == (layout.sensor_rows, layout.sensor_cols)
        and math.isclose(eff, layout.slm_pitch, rel_tol=0, abs_tol=1e-12)
        and (layout.sensor_rows, layout.sensor_cols) == (layout.slm_rows, layout.slm_cols)
    ):
        return image
    iy, wy = _box_weights(layout.sensor_rows, eff, layout.slm_rows, layout.slm_pitch)
    ix, wx = _box_weights(layout.sensor_cols, eff, layout.slm_cols, layout.slm_pitch)
    out = _resample_axis(image, iy, wy.to(image.dtype), -2)
    return _resample_axis(out, ix, wx.to(image.dtype), -1)


def sensor_pixel_area(layout: MuxLayout) -> float:
    """Area of one sensor pixel referred back to the modulator plane (um^2)."""
    return (layout.sensor_pitch / layout.sensor_scale) ** 2


def readout(image: torch.Tensor, layout: MuxLayout) -> torch.Tensor:
    """Mean intensity in each detector rectangle.

    Returns shape (..., L, 2) with [..., v, 0] the positive and [..., v, 1]
    the negative detector of channel v.
    """
    if tuple(image.shape[-2:]) != (layout.sensor_rows, layout.sensor_cols):
        raise ShapeError(
            f"image {tuple(image.shape[-2:])} does not match sensor {(layout.sensor_rows, layout.sensor_cols)}"
        )
    means = []
    for pair in layout.detector_regions:
        for r, c, h, w in pair:
            means.append(image[..., r : r + h, c : c + w].mean(dim=(-2, -1)))
    out = torch.stack(means, dim=-1)
    return out.reshape(out.shape[:-1] + (layout.L, 2))


def crosstalk_matrix(layout: MuxLayout, stack=None, batch: int = 1) -> torch.Tensor:
    """Energy fraction reaching channel v's detector pair when only tile u is lit.

    Tile u is illuminated with unit amplitude and flat phase over its frame
    slots; everything else on the modulator is dark. Fractions are relative
    to the total output-plane energy.
    """
    from muxdetect.decoder import DiffractiveStack, propagate_stack

    if stack is None:
        stack = DiffractiveStack.free_space(layout)
    area = sensor_pixel_area(layout)
    rows = []
    with torch.no_grad():
        for start in range(0, layout.L, batch):
            us = range(start, min(start + batch, layout.L))
            amp = torch.stack([slot_mask(layout, [u]).to(torch.complex128) for u in us])
            out_field = propagate_stack(amp, stack, layout)
            out_int = out_field.real**2 + out_field.imag**2
            total = out_int.sum(dim=(-2, -1)) * layout.slm_pitch**2
            sensor = to_sensor(out_int, layout)
            pairs = readout(sensor, layout)
            det_px = torch.tensor(
                [[p[2] * p[3] for p in pair] for pair in layout.detector_regions], dtype=torch.float64
            )
            energy = (pairs * det_px).sum(-1) * area
            rows.append(energy / total[:, None])
    return torch.cat(rows, dim=0)
