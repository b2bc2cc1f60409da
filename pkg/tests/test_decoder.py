import math

import numpy as np
import pytest
import torch

from muxdetect.decoder import (
    FAKE,
    REAL,
    DiffractiveStack,
    decide,
    decode,
    differential_scores,
    flops_decode,
    illumination_correct,
    propagate_stack,
    score_channels,
)
from muxdetect.errors import ConfigError, ShapeError

from conftest import random_field, tiny_layout


def test_global_phase_offset_leaves_image_unchanged(layout, rng):
    stack = DiffractiveStack.with_layers(layout, 2)
    with torch.no_grad():
        stack.layers.copy_(torch.as_tensor(rng.random(stack.layers.shape) * 6))
    phase = torch.as_tensor(rng.random((layout.slm_rows, layout.slm_cols)) * 2 * math.pi)
    a = decode(phase, stack, layout)
    b = decode(phase + 1.234, stack, layout)
    assert torch.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_zero_layers_collapse_to_free_space(layout, rng):
    # exact only without padding and band limit, where hops compose multiplicatively
    stack = DiffractiveStack(3, (500.0, 700.0, 300.0, 500.0), layout.slm_rows, layout.slm_cols, layout.slm_pitch,
                             band_limit=False, pad_factor=1)
    free = DiffractiveStack(0, (2000.0,), layout.slm_rows, layout.slm_cols, layout.slm_pitch,
                            band_limit=False, pad_factor=1)
    amp = random_field(rng, (layout.slm_rows, layout.slm_cols))
    a = propagate_stack(amp, stack, layout)
    b = propagate_stack(amp, free, layout)
    assert float((a - b).abs().max().detach()) < 1e-10


def test_axial_offset_extends_last_hop(layout, rng):
    stack = DiffractiveStack(1, (800.0, 1200.0), layout.slm_rows, layout.slm_cols, layout.slm_pitch,
                             band_limit=False, pad_factor=1)
    longer = DiffractiveStack(1, (800.0, 1500.0), layout.slm_rows, layout.slm_cols, layout.slm_pitch,
                              band_limit=False, pad_factor=1)
    amp = random_field(rng, (layout.slm_rows, layout.slm_cols))
    assert torch.allclose(propagate_stack(amp, stack, layout, dz=300.0), propagate_stack(amp, longer, layout), atol=1e-12)


def test_differential_scores():
    pairs = torch.tensor([[3.0, 1.0], [1.0, 3.0], [0.0, 0.0], [2.0, 2.0], [5.0, 0.0]], dtype=torch.float64)
    s = differential_scores(pairs)
    assert s.tolist() == [0.5, -0.5, 0.0, 0.0, 1.0]
    assert [decide(float(x)) for x in s] == [FAKE, REAL, REAL, REAL, FAKE]


def test_scores_are_scale_invariant_and_bounded(rng):
    pairs = torch.as_tensor(rng.random((50, 2)))
    s = differential_scores(pairs)
    assert torch.all(s.abs() <= 1)
    assert torch.allclose(differential_scores(pairs * 37.0), s, atol=1e-15)


def test_score_channels_reads_detectors(layout):
    img = torch.zeros(layout.sensor_rows, layout.sensor_cols, dtype=torch.float64)
    (pos0, neg0), (pos1, neg1) = layout.detector_regions
    r, c, h, w = pos0
    img[r : r + h, c : c + w] = 2.0
    r, c, h, w = neg1
    img[r : r + h, c : c + w] = 1.0
    out = score_channels(img, layout)
    assert [o.decision for o in out] == [FAKE, REAL]
    assert out[0].score == 1.0 and out[1].score == -1.0 and out[1].label == "real"


def test_illumination_correction_removes_vignette(rng):
    yy, xx = np.mgrid[0:40, 0:50]
    vignette = 0.4 + 0.6 * np.exp(-((yy - 20) ** 2 + (xx - 25) ** 2) / 3000.0)
    scene = rng.random((40, 50)) + 0.5
    corrected = illumination_correct(scene * vignette, vignette, blur_sigma=0.0)
    assert np.allclose(corrected, scene * vignette.mean(), rtol=1e-12)
    # a smooth vignette survives blurring almost untouched
    blurred = illumination_correct(scene * vignette, vignette, blur_sigma=1.0)
    assert np.max(np.abs(blurred / (scene * vignette.mean()) - 1)) < 0.01
    with pytest.raises(ShapeError):
        illumination_correct(scene, vignette[:-1], 0.0)


def test_flop_count_hand_values():
    lay = tiny_layout(slm_rows=16, slm_cols=16, sensor_rows=16, sensor_cols=16, video_grid=(1, 1), frame_grid=(1, 1),
                      L=1, N=1, tile_rows=4, tile_cols=4, det_rows=2, det_cols=2, det_gap=1)
    one = DiffractiveStack.with_layers(lay, 1, pad_factor=1)
    two = DiffractiveStack.with_layers(lay, 1, pad_factor=2)
    assert flops_decode(lay, one) == 46336
    assert flops_decode(lay, two) == 219392


def test_stack_validation(layout):
    with pytest.raises(ConfigError):
        DiffractiveStack(1, (10.0,), 4, 4, 8.0)
    with pytest.raises(ConfigError):
        DiffractiveStack(1, (10.0, 0.0), 4, 4, 8.0)
    with pytest.raises(ConfigError):
        DiffractiveStack(-1, (), 4, 4, 8.0)
    with pytest.raises(ShapeError):
        DiffractiveStack(1, (1.0, 1.0), 4, 4, 8.0, init_phases=torch.zeros(1, 3, 4))
    stack = DiffractiveStack.with_layers(layout, 3)
    assert math.isclose(sum(stack.distances), layout.propagation_distance)
    assert not DiffractiveStack.free_space(layout).layers.requires_grad
    with pytest.raises(ShapeError):
        decode(torch.zeros(4, 4), stack, layout)


def test_wrapped_layers(layout):
    stack = DiffractiveStack.with_layers(layout, 1)
    with torch.no_grad():
        stack.layers.fill_(-0.5)
    w = stack.wrapped_layers()
    assert torch.allclose(w, torch.full_like(w, 2 * math.pi - 0.5))
