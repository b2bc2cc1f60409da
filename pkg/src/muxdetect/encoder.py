"""Digital front-end: frame sampling, standardization and the phase-tile encoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from muxdetect.errors import ConfigError, InvalidInputError, ShapeError
from muxdetect.muxlayout import MuxLayout, assemble_phase

TWO_PI = 2 * math.pi
# largest double strictly below 2*pi
PHASE_MAX = math.nextafter(TWO_PI, 0.0)
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class VideoSample:
    frames: np.ndarray  # (N, H, W), standardized
    label: int  # 0 real, 1 fake
    source_id: str = ""
    raw: Optional[np.ndarray] = field(default=None, repr=False)  # (N, H, W) in [0, 1]
    indices: tuple = ()


def to_unit_range(frames: np.ndarray) -> np.ndarray:
    """Grayscale frames in [0, 1]; uint8 input is scaled by 1/255."""
    arr = np.asarray(frames)
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    arr = arr.astype(np.float64) / scale
    if arr.ndim == 4 and arr.shape[-1] == 3:
        arr = arr @ LUMA
    return arr


def standardize(frames: np.ndarray) -> np.ndarray:
    """Per-frame zero mean, unit (population) std; constant frames become zeros."""
    arr = np.asarray(frames, dtype=np.float64)
    mean = arr.mean(axis=(-2, -1), keepdims=True)
    std = arr.std(axis=(-2, -1), keepdims=True)
    centered = arr - mean
    flat = std < 1e-12
    return np.where(flat, 0.0, centered / np.where(flat, 1.0, std))


def standardize_torch(frames: torch.Tensor) -> torch.Tensor:
    mean = frames.mean(dim=(-2, -1), keepdim=True)
    std = frames.std(dim=(-2, -1), keepdim=True, unbiased=False)
    flat = std < 1e-12
    return torch.where(flat, torch.zeros_like(frames), (frames - mean) / torch.where(flat, torch.ones_like(std), std))


def sample_indices(n_frames: int, N: int, seed: int) -> np.ndarray:
    if n_frames < 1:
        raise InvalidInputError("video has no frames")
    rng = np.random.default_rng(seed)
    if n_frames >= N:
        return np.sort(rng.choice(n_frames, size=N, replace=False))
    return np.sort(rng.integers(0, n_frames, size=N))


def sample_frames(video, N: int, seed: int, label: int = 0, source_id: str = "") -> VideoSample:
    """Draw N frames (sorted, without replacement when possible) and standardize them."""
    if video is None or len(video) == 0:
        raise InvalidInputError("video has no frames")
    idx = sample_indices(len(video), N, seed)
    raw = to_unit_range(np.asarray(video)[idx])
    return VideoSample(standardize(raw), int(label), source_id, raw, tuple(int(i) for i in idx))


@dataclass
class EncoderConfig:
    frame_rows: int = 64
    frame_cols: int = 64
    tile_rows: int = 64
    tile_cols: int = 64
    channels: tuple = (8, 16, 16)
    kernel: int = 3
    stride: int = 2

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels or min(self.channels) < 1:
            raise ConfigError("encoder needs at least one convolution with >= 1 channel")
        if self.kernel < 1 or self.stride < 1:
            raise ConfigError("kernel and stride must be >= 1")

    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.frame_rows, self.frame_cols
        pad = self.kernel // 2
        for _ in self.channels:
            h = (h + 2 * pad - self.kernel) // self.stride + 1
            w = (w + 2 * pad - self.kernel) // self.stride + 1
        return self.channels[-1], h, w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
        return cls(**d)


def _branch(channels: Sequence[int], kernel: int, stride: int) -> nn.Sequential:
    layers = []
    cin = 1
    for cout in channels:
        layers += [nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, dtype=torch.float64), nn.SiLU()]
        cin = cout
    return nn.Sequential(*layers)


def log_spectrum(frames: torch.Tensor) -> torch.Tensor:
    spec = torch.fft.fftshift(torch.fft.fft2(frames), dim=(-2, -1))
    return torch.log1p(spec.abs())


class Encoder(nn.Module):
    """Spatial and Fourier CNN branches, attention-gated fusion, affine phase head."""

    def __init__(self, config: EncoderConfig, seed: Optional[int] = 0):
        super().__init__()
        self.config = config
        c = config.channels
        self.spatial = _branch(c, config.kernel, config.stride)
        self.fourier = _branch(c, config.kernel, config.stride)
        self.gate = nn.Conv2d(2 * c[-1], c[-1], 1, dtype=torch.float64)
        fc, fh, fw = config.feature_shape()
        self.head = nn.Linear(fc * fh * fw, config.tile_rows * config.tile_cols, dtype=torch.float64)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                with torch.no_grad():
                    m.weight.copy_(torch.rand(m.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                    m.bias.zero_()

    def features(self, frames: torch.Tensor) -> torch.Tensor:
        """Fused feature vector per frame; ``frames`` is (B, H, W) standardized."""
        cfg = self.config
        if tuple(frames.shape[-2:]) != (cfg.frame_rows, cfg.frame_cols):
            raise ShapeError(f"frames {tuple(frames.shape[-2:])} do not match encoder input {(cfg.frame_rows, cfg.frame_cols)}")
        x = frames.to(torch.float64).unsqueeze(1)
        s = self.spatial(x)
        f = self.fourier(log_spectrum(x))
        g = torch.sigmoid(self.gate(torch.cat([s, f], dim=1)))
        fused = g * s + (1 - g) * f
        return fused.flatten(1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Phase tiles (B, tile_rows, tile_cols) in [0, 2*pi)."""
        cfg = self.config
        logits = self.head(self.features(frames))
        phase = TWO_PI * torch.sigmoid(logits)
        phase = torch.clamp(phase, max=PHASE_MAX)
        return phase.reshape(-1, cfg.tile_rows, cfg.tile_cols)

    def flops_per_frame(self) -> float:
        """Multiply-add count x2 of one frame's forward pass (FFT at 5*P*log2 P)."""
        cfg = self.config
        total = 0.0
        h, w = cfg.frame_rows, cfg.frame_cols
        pad = cfg.kernel // 2
        cin = 1
        for cout in cfg.channels:
            h = (h + 2 * pad - cfg.kernel) // cfg.stride + 1
            w = (w + 2 * pad - cfg.kernel) // cfg.stride + 1
            total += 2 * (2.0 * cin * cfg.kernel**2 * cout + cout) * h * w  # both branches, + activation
            cin = cout
        fc, fh, fw = cfg.feature_shape()
        total += 2.0 * (2 * fc) * fc * fh * fw  # 1x1 gate
        total += 4.0 * fc * fh * fw  # sigmoid mix
        total += 2.0 * self.head.in_features * self.head.out_features
        p = cfg.frame_rows * cfg.frame_cols
        total += 5.0 * p * math.log2(p) + 3.0 * p
        return total

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def encode_frame(frame: torch.Tensor, encoder: Encoder) -> torch.Tensor:
    frame = torch.as_tensor(frame, dtype=torch.float64)
    return encoder(frame.unsqueeze(0))[0]


def frames_tensor(videos) -> torch.Tensor:
    if isinstance(videos, torch.Tensor):
        return videos.to(torch.float64)
    return torch.as_tensor(np.stack([v.frames for v in videos]), dtype=torch.float64)


def forward_batch(videos, encoder: Encoder, layout: MuxLayout) -> torch.Tensor:
    """Phase map for a batch of exactly L videos of N standardized frames each."""
    frames = frames_tensor(videos)
    if frames.shape[0] != layout.L:
        raise ShapeError(f"batch holds {frames.shape[0]} videos, layout expects L={layout.L}")
    if frames.shape[1] != layout.N:
        raise ShapeError(f"videos carry {frames.shape[1]} frames, layout expects N={layout.N}")
    L, N, H, W = frames.shape
    tiles = encoder(frames.reshape(L * N, H, W)).reshape(L, N, layout.tile_rows, layout.tile_cols)
    return assemble_phase(tiles, layout)
