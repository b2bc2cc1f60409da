"""The hybrid encoder + optical decoder pipeline as one module."""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

from muxdetect.decoder import DiffractiveStack, decode, differential_scores
from muxdetect.encoder import Encoder, EncoderConfig
from muxdetect.errors import ConfigError, ShapeError
from muxdetect.muxlayout import MuxLayout, assemble_phase, readout


class HybridModel(nn.Module):
    def __init__(self, layout: MuxLayout, encoder: Encoder, stack: DiffractiveStack):
        super().__init__()
        cfg = encoder.config
        if (cfg.tile_rows, cfg.tile_cols) != (layout.tile_rows, layout.tile_cols):
            raise ConfigError(
                f"encoder tiles {(cfg.tile_rows, cfg.tile_cols)} do not match layout {(layout.tile_rows, layout.tile_cols)}"
            )
        if (stack.rows, stack.cols) != (layout.slm_rows, layout.slm_cols):
            raise ConfigError("diffractive layers must share the modulator grid")
        self.layout = layout
        self.encoder = encoder
        self.stack = stack

    @classmethod
    def build(cls, layout: MuxLayout, K: int = 0, *, seed: int = 0, encoder_config: Optional[EncoderConfig] = None,
              band_limit: bool = True, pad_factor: int = 2) -> "HybridModel":
        if encoder_config is None:
            encoder_config = EncoderConfig(tile_rows=layout.tile_rows, tile_cols=layout.tile_cols)
        encoder = Encoder(encoder_config, seed=seed)
        if K == 0:
            stack = DiffractiveStack.free_space(layout, band_limit=band_limit, pad_factor=pad_factor)
        else:
            stack = DiffractiveStack.with_layers(layout, K, band_limit=band_limit, pad_factor=pad_factor)
        return cls(layout, encoder, stack)

    def phase_map(self, frames: torch.Tensor) -> torch.Tensor:
        """Phase maps (..., slm_rows, slm_cols) for frames (..., L, N, H, W)."""
        lay = self.layout
        if tuple(frames.shape[-4:-2]) != (lay.L, lay.N):
            raise ShapeError(f"expected (..., {lay.L}, {lay.N}, H, W) frames, got {tuple(frames.shape)}")
        lead = frames.shape[:-4]
        H, W = frames.shape[-2:]
        tiles = self.encoder(frames.reshape(-1, H, W))
        tiles = tiles.reshape(*lead, lay.L, lay.N, lay.tile_rows, lay.tile_cols)
        return assemble_phase(tiles, lay)

    def readout_pairs(self, phase: torch.Tensor, shift: tuple[int, int] = (0, 0), dz: float = 0.0) -> torch.Tensor:
        image = decode(phase, self.stack, self.layout, dz=dz)
        return readout(image, self.layout.shifted(*shift))

    def forward(self, frames: torch.Tensor, shift: tuple[int, int] = (0, 0), dz: float = 0.0) -> torch.Tensor:
        """Normalized differential scores (..., L)."""
        return differential_scores(self.readout_pairs(self.phase_map(frames), shift, dz))

    def shift_pixels(self, dx_um: float, dy_um: float) -> tuple[int, int]:
        """Lateral sensor-plane offset in whole sensor pixels, as (rows, cols)."""
        p = self.layout.sensor_pitch
        return int(round(dy_um / p)), int(round(dx_um / p))
