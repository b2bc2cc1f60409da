import json

import pytest

from muxdetect.config import DEFAULTS, config_hash, env_overrides, load_config
from muxdetect.errors import ConfigError


def test_defaults_validate():
    cfg = load_config()
    assert cfg.layout.L == 4 and cfg.K == 0 and cfg.train.seed == cfg.seed == 0
    assert len(cfg.hash) == 16


def test_hash_tracks_content(tmp_path):
    a = load_config(seed=1)
    b = load_config(seed=1)
    c = load_config(seed=2)
    assert a.hash == b.hash != c.hash
    assert config_hash({"x": 1, "y": 2}) == config_hash({"y": 2, "x": 1})


def test_file_and_env_overrides(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"epochs": 7}, "stack": {"K": 2}}))
    env = {"MUXDETECT_TRAIN__TAU": "0.5", "MUXDETECT_LAYOUT__PRESET": "full", "UNRELATED": "1"}
    cfg = load_config(tmp_path / "c.json", environ=env)
    assert cfg.train.epochs == 7 and cfg.train.tau == 0.5 and cfg.K == 2 and cfg.layout.L == 15
    assert env_overrides({"MUXDETECT_DATA__TEST__N_VIDEOS": "12"}) == {"data": {"test": {"n_videos": 12}}}


def test_presets():
    for preset, L in (("toy", 4), ("full", 15), ("full18", 18)):
        assert load_config(environ={"MUXDETECT_LAYOUT__PRESET": json.dumps(preset)}).layout.L == L


@pytest.mark.parametrize(
    "override",
    [
        {"bogus": 1},
        {"layout": {"preset": "nope"}},
        {"layout": {"wobble": 1}},
        {"train": {"tau": -1}},
        {"stack": {"K": 2, "distances": [1.0]}},
        {"stack": {"pad_factor": 3}},
        {"stack": {"extra": 1}},
        {"harness": {"jpeg_qualities": [0]}},
        {"harness": {"noise_sigmas": [-0.1]}},
        {"harness": {"surprise": 1}},
        {"data": {"train": {"signal": 2}}},
        {"energy": {"decoder_power_low": -1}},
    ],
)
def test_invalid_configs(tmp_path, override):
    (tmp_path / "c.json").write_text(json.dumps(override))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")


def test_defaults_are_not_mutated():
    before = json.dumps(DEFAULTS, sort_keys=True)
    load_config(environ={"MUXDETECT_TRAIN__EPOCHS": "9"})
    assert json.dumps(DEFAULTS, sort_keys=True) == before
