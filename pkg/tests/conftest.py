import numpy as np
import pytest
import torch

from muxdetect.encoder import EncoderConfig
from muxdetect.model import HybridModel
from muxdetect.muxlayout import MuxLayout


def tiny_layout(**kw) -> MuxLayout:
    """Two videos of two 8x8 frames on a 32x48 grid; fast enough for gradient checks."""
    params = dict(
        L=2, N=2, interp_factor=1, tile_rows=8, tile_cols=8, video_grid=(1, 2), frame_grid=(1, 2),
        frame_gap=0, video_gap=8, slm_rows=32, slm_cols=48, slm_pitch=8.0,
        sensor_rows=32, sensor_cols=48, sensor_pitch=8.0, sensor_scale=1.0,
        det_rows=4, det_cols=4, det_gap=2, propagation_distance=2000.0,
    )
    params.update(kw)
    return MuxLayout(**params)


def tiny_encoder_config(**kw) -> EncoderConfig:
    params = dict(frame_rows=16, frame_cols=16, tile_rows=8, tile_cols=8, channels=(2, 3, 3))
    params.update(kw)
    return EncoderConfig(**params)


@pytest.fixture
def layout():
    return tiny_layout()


@pytest.fixture
def tiny_model():
    return HybridModel.build(tiny_layout(), K=1, seed=3, encoder_config=tiny_encoder_config())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field(rng, shape) -> torch.Tensor:
    return torch.as_tensor(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), dtype=torch.complex128)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
