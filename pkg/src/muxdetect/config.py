"""Experiment configuration: JSON file, environment overrides, validation, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from muxdetect.data import SyntheticConfig
from muxdetect.encoder import EncoderConfig
from muxdetect.errors import ConfigError
from muxdetect.harness.energy import EnergyModel
from muxdetect.muxlayout import MuxLayout
from muxdetect.trainer import TrainConfig

ENV_PREFIX = "MUXDETECT_"

LAYOUT_PRESETS = {
    "full": {},
    "full18": {"L": 18, "N": 16, "video_grid": [3, 6], "frame_grid": [4, 4], "tile_rows": 24, "tile_cols": 24,
                "video_gap": 32, "det_rows": 48, "det_cols": 48, "det_gap": 24},
    "toy": None,
}

DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "runs/default",
    "layout": {"preset": "toy"},
    "encoder": {},
    "stack": {"K": 0, "band_limit": True, "pad_factor": 2, "distances": None},
    "train": {"epochs": 3},
    "data": {
        "train_manifest": None,
        "test_manifest": None,
        "finetune_manifest": None,
        "train": {"preset": "easy", "n_videos": 160, "seed": 1},
        "test": {"preset": "easy", "n_videos": 120, "seed": 2},
        "finetune": {"preset": "easy", "n_videos": 40, "seed": 3},
    },
    "harness": {
        "eval_seed": 1234,
        "bins": 40,
        "noise_sigmas": [0.0, 0.05, 0.1, 0.2, 0.5],
        "blur_sigmas": [0.0, 0.5, 1.0, 2.0, 4.0],
        "jpeg_qualities": [100, 90, 70, 50, 30, 10],
        "lateral_grid_um": [-96.0, -48.0, 0.0, 48.0, 96.0],
        "axial_grid_um": [0.0, 500.0, 1000.0, 2000.0],
        "epsilons_255": [0, 1, 2, 4, 8],
        "n_attackers": 10,
        "attack_epochs": 10,
        "subset_fraction": 0.1,
        "surrogate_epochs": 5,
        "digital_epochs": 3,
        "victim_checkpoints": {},
        "full_steps": None,
    },
    "energy": {"use_measured_flops": False},
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Nested overrides from variables like MUXDETECT_TRAIN__EPOCHS=5 (values parsed as JSON when possible)."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(prefix):
            continue
        path = [p.lower() for p in key[len(prefix):].split("__") if p]
        if not path:
            continue
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(raw: dict) -> str:
    """Short sha256 of the canonical JSON; the output directory is not part of an experiment's identity."""
    content = {k: v for k, v in raw.items() if k != "out_dir"}
    return hashlib.sha256(canonical_json(content).encode("utf-8")).hexdigest()[:16]


def build_layout(spec: dict) -> MuxLayout:
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset is None:
        return MuxLayout.from_dict(spec)
    if preset not in LAYOUT_PRESETS:
        raise ConfigError(f"unknown layout preset {preset!r}")
    if preset == "toy":
        return MuxLayout.toy(**_layout_kw(spec))
    return MuxLayout.from_dict({**LAYOUT_PRESETS[preset], **spec})


def _layout_kw(spec: dict) -> dict:
    unknown = set(spec) - set(MuxLayout.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown layout keys: {sorted(unknown)}")
    return spec


def build_synthetic(spec: dict) -> SyntheticConfig:
    spec = dict(spec)
    preset = spec.pop("preset", "easy")
    unknown = set(spec) - set(SyntheticConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown synthetic data keys: {sorted(unknown)}")
    return SyntheticConfig.preset(preset, **spec)


@dataclass
class ExperimentConfig:
    raw: dict
    layout: MuxLayout
    encoder: EncoderConfig
    train: TrainConfig
    energy: EnergyModel
    use_measured_flops: bool
    stack: dict
    data: dict
    harness: dict
    seed: int
    out_dir: Path
    hash: str = field(default="")

    @property
    def K(self) -> int:
        return int(self.stack["K"])


def load_config(path: Optional[str] = None, *, seed: Optional[int] = None, out_dir: Optional[str] = None,
                environ=None) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        raw = deep_merge(raw, user)
    raw = deep_merge(raw, env_overrides(environ))
    if seed is not None:
        raw["seed"] = int(seed)
    if out_dir is not None:
        raw["out_dir"] = str(out_dir)
    return validate(raw)


def validate(raw: dict) -> ExperimentConfig:
    try:
        seed = int(raw["seed"])
        layout = build_layout(raw["layout"])
        enc = {"frame_rows": 64, "frame_cols": 64, "tile_rows": layout.tile_rows, "tile_cols": layout.tile_cols}
        enc.update(raw["encoder"])
        encoder = EncoderConfig.from_dict(enc)
        train_raw = {"seed": seed, **raw["train"]}
        train = TrainConfig.from_dict(train_raw)
        energy_raw = dict(raw["energy"])
        use_measured = bool(energy_raw.pop("use_measured_flops", False))
        energy = EnergyModel.from_dict(energy_raw)
        stack = dict(raw["stack"])
        unknown = set(stack) - {"K", "band_limit", "pad_factor", "distances"}
        if unknown:
            raise ConfigError(f"unknown stack keys: {sorted(unknown)}")
        if int(stack["K"]) < 0:
            raise ConfigError("stack.K must be >= 0")
        if stack.get("distances") is not None and len(stack["distances"]) != int(stack["K"]) + 1:
            raise ConfigError("stack.distances needs K+1 entries")
        if int(stack.get("pad_factor", 2)) not in (1, 2):
            raise ConfigError("stack.pad_factor must be 1 or 2")
        data = raw["data"]
        for key in ("train", "test", "finetune"):
            build_synthetic(data[key])
        harness = raw["harness"]
        unknown = set(harness) - set(DEFAULTS["harness"])
        if unknown:
            raise ConfigError(f"unknown harness keys: {sorted(unknown)}")
        for q in harness["jpeg_qualities"]:
            if int(q) != q or not 1 <= q <= 100:
                raise ConfigError(f"JPEG quality {q} outside [1, 100]")
        if any(s < 0 for s in harness["noise_sigmas"] + harness["blur_sigmas"] + harness["epsilons_255"]):
            raise ConfigError("sweep magnitudes must be non-negative")
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from exc
    return ExperimentConfig(
        raw=raw, layout=layout, encoder=encoder, train=train, energy=energy, use_measured_flops=use_measured,
        stack=stack, data=data, harness=harness, seed=seed, out_dir=Path(raw["out_dir"]), hash=config_hash(raw),
    )
