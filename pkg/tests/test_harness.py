import math

import numpy as np
import pytest
import torch

from muxdetect.data import SyntheticConfig, synth_dataset
from muxdetect.errors import ConfigError, InvalidInputError
from muxdetect.harness import EnergyModel, Perturbation, energy_report, perturb
from muxdetect.harness.attacks import (
    AttackSpec,
    DigitalDetector,
    Surrogate,
    attack_eval,
    attack_train,
    attacker_subset,
    craft_attacks,
    evaluate_logits,
    fit_classifier,
    stamp,
)
from muxdetect.harness.perturb import LUMA_QUANT, gaussian_kernel, jpeg_roundtrip, quant_table
from muxdetect.harness.sweeps import degradation_sweep, misalignment_sweep, summarize
from muxdetect.model import HybridModel
from muxdetect.muxlayout import MuxLayout
from muxdetect.decoder import DiffractiveStack
from muxdetect.trainer import evaluate

from conftest import tiny_encoder_config, tiny_layout


def tiny_data(n=8, seed=0):
    return synth_dataset(SyntheticConfig(n_videos=n, frames=4, size=16, seed=seed))


# ---- perturbations --------------------------------------------------------


def _dct_matrix():
    C = np.zeros((8, 8))
    for k in range(8):
        a = math.sqrt(1 / 8) if k == 0 else math.sqrt(2 / 8)
        for n in range(8):
            C[k, n] = a * math.cos(math.pi * (2 * n + 1) * k / 16)
    return C


def _jpeg_oracle(frame, quality):
    C = _dct_matrix()
    q = quant_table(quality)
    x = np.round(np.clip(frame, 0, 1) * 255) - 128
    out = np.empty_like(x)
    for r in range(0, x.shape[0], 8):
        for c in range(0, x.shape[1], 8):
            coef = C @ x[r : r + 8, c : c + 8] @ C.T
            coef = np.round(coef / q) * q
            out[r : r + 8, c : c + 8] = C.T @ coef @ C
    return np.clip(np.round(out + 128), 0, 255) / 255


def test_quant_tables():
    assert np.array_equal(quant_table(50), LUMA_QUANT)
    assert np.all(quant_table(100) == 1)
    assert np.all(quant_table(10) >= quant_table(50))


def test_jpeg_matches_matrix_dct_oracle(rng):
    frame = rng.random((24, 32))
    for q in (10, 50, 90):
        assert np.array_equal(jpeg_roundtrip(frame, q), _jpeg_oracle(frame, q))


def test_jpeg_q100_is_near_lossless(rng):
    frames = rng.random((3, 21, 30))
    out = perturb(frames, Perturbation("jpeg", 100))
    assert out.shape == frames.shape
    assert np.max(np.abs(out - np.round(frames * 255) / 255)) <= 2 / 255


def test_noise_statistics():
    x = np.full((40, 64, 64), 0.5)
    out = perturb(x, Perturbation("gaussian_noise", 0.05, seed=3))
    assert abs((out - x).std() - 0.05) < 0.002 and abs((out - x).mean()) < 0.002
    assert np.array_equal(out, perturb(x, Perturbation("gaussian_noise", 0.05, seed=3)))
    big = perturb(x, Perturbation("gaussian_noise", 2.0, seed=3))
    assert big.min() >= 0 and big.max() <= 1


def test_blur():
    rng = np.random.default_rng(0)
    x = rng.random((2, 20, 20))
    assert np.array_equal(perturb(x, Perturbation("gaussian_blur", 0.0)), x)
    const = np.full((10, 10), 0.3)
    assert np.allclose(perturb(const, Perturbation("gaussian_blur", 2.0)), 0.3)
    k = gaussian_kernel(1.5)
    assert len(k) == 2 * 5 + 1 and math.isclose(k.sum(), 1.0)
    blurred = perturb(x, Perturbation("gaussian_blur", 1.0))
    assert blurred.std() < x.std()


def test_perturbation_validation():
    with pytest.raises(InvalidInputError):
        Perturbation("jpeg", 0)
    with pytest.raises(InvalidInputError):
        Perturbation("jpeg", 50.5)
    with pytest.raises(InvalidInputError):
        Perturbation("gaussian_noise", -0.1)
    with pytest.raises(InvalidInputError):
        Perturbation("salt", 0.1)


# ---- energy ---------------------------------------------------------------


def test_energy_reference_numbers():
    rep = energy_report(EnergyModel())
    # independent arithmetic from the published inputs
    assert rep.encoder_mj_per_video == pytest.approx(2.7e9 * 12 * 5.5e-12 * 1e3, rel=1e-12)
    assert rep.decoder_mj_per_batch == pytest.approx((3.73 / 180 * 1e3, 7.40 / 120 * 1e3), rel=1e-12)
    # and the figures as printed, at their printed precision
    assert round(rep.encoder_mj_per_video, 1) == 178.2
    assert [round(x, 1) for x in rep.decoder_mj_per_batch] == [20.7, 61.7]
    assert [round(x, 2) for x in rep.decoder_mj_per_video] == [1.38, 4.11]
    rep18 = energy_report(EnergyModel(L=18, N=12))
    assert [round(x, 2) for x in rep18.decoder_mj_per_video] == [1.15, 3.43]


def test_optical_energy_ignores_layer_count():
    lay = MuxLayout.toy()
    reps = [energy_report(EnergyModel(), lay, DiffractiveStack.with_layers(lay, K) if K else DiffractiveStack.free_space(lay))
            for K in (0, 1, 3)]
    assert len({r.decoder_mj_per_video for r in reps}) == 1
    flops = [r.twin_decoder_flops for r in reps]
    assert flops[0] < flops[1] < flops[2]


def test_energy_validation():
    with pytest.raises(ConfigError):
        EnergyModel(decoder_power_low=10.0, decoder_power_high=1.0)
    with pytest.raises(ConfigError):
        EnergyModel(joules_per_flop=0.0)
    with pytest.raises(ConfigError):
        EnergyModel.from_dict({"watts": 1})


# ---- attacks --------------------------------------------------------------


def test_pgd_stays_inside_ball():
    ds = tiny_data(8)
    sur = fit_classifier(Surrogate(4, seed=0), ds, 2, epochs=1, seed=0, raw_input=True)
    for eps in (1 / 255, 8 / 255):
        res = attack_train(AttackSpec(m=1, seed=5, epsilon=eps, epochs=3, N=2), ds, sur, (16, 16))
        assert float(np.abs(res.delta).max()) <= eps
        assert all(m <= eps for m in res.max_abs_per_step)
        assert res.surrogate_loss_after >= res.surrogate_loss_before - 1e-12


def test_zero_epoch_attack_is_initial_draw():
    ds = tiny_data(4)
    sur = Surrogate(4, seed=0)
    a = attack_train(AttackSpec(m=1, seed=5, epsilon=0.02, epochs=0, N=2), ds, sur, (16, 16))
    b = attack_train(AttackSpec(m=1, seed=5, epsilon=0.02, epochs=0, N=2), ds, sur, (16, 16))
    assert np.array_equal(a.delta, b.delta) and np.abs(a.delta).max() <= 0.02


def test_stamp_clips():
    raw = torch.tensor([[0.0, 0.5, 1.0]], dtype=torch.float64)
    out = stamp(raw, torch.tensor([[-0.1, 0.1, 0.1]], dtype=torch.float64))
    assert out.tolist() == [[0.0, 0.6, 1.0]]


def test_attacker_subsets_are_balanced_and_distinct():
    ds = tiny_data(40)
    a, b = attacker_subset(ds, 1, 0.2, 0), attacker_subset(ds, 2, 0.2, 0)
    assert len(a) == 8 and int(a.labels.sum()) == 4
    assert a.ids != b.ids


def test_attack_pipeline_rows():
    ds = tiny_data(8)
    attacks = craft_attacks(ds, [2 / 255], n_attackers=2, N=2, fraction=0.5, surrogate_epochs=1, epochs=1, seed=1)
    assert len(attacks[2 / 255]) == 2
    model = HybridModel.build(tiny_layout(), K=0, seed=0, encoder_config=tiny_encoder_config())
    digital = DigitalDetector(tiny_encoder_config(), seed=0)
    victims = {
        "hybrid": lambda d, p: evaluate(model, d, perturb=p),
        "digital": lambda d, p: evaluate_logits(digital, d, 2, perturb=p),
    }
    rows = attack_eval(victims, attacks, ds, [0.0, 2 / 255])
    assert [(r["model"], r["epsilon"]) for r in rows] == [("hybrid", 0.0), ("hybrid", 2 / 255), ("digital", 0.0),
                                                          ("digital", 2 / 255)]
    assert rows[0]["attackers"] == 1 and rows[1]["attackers"] == 2
    assert all(r["attack_success_rate"] == pytest.approx(1 - r["accuracy"]) for r in rows)


# ---- sweeps ---------------------------------------------------------------


def test_sweep_zero_rows_match_clean():
    model = HybridModel.build(tiny_layout(), K=1, seed=0, encoder_config=tiny_encoder_config())
    ds = tiny_data(8)
    clean = summarize(evaluate(model, ds), 2)
    for kind in ("gaussian_noise", "gaussian_blur"):
        rows = degradation_sweep(model, ds, kind, [0.0, 0.1])
        assert rows[0]["accuracy"] == clean["accuracy"] and rows[0]["ks"] == clean["ks"]
    mis = misalignment_sweep(model, ds, [(0.0, 0.0), (8.0, 0.0)], [0.0])
    assert mis[0]["accuracy"] == clean["accuracy"] and mis[1]["shift_cols"] == 1
