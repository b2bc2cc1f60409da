"""Joint training of the encoder and diffractive layers, evaluation and gradient checks."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from muxdetect.data import VideoDataset
from muxdetect.decoder import decode, differential_scores
from muxdetect.encoder import standardize
from muxdetect.errors import ConfigError, TrainingDiverged
from muxdetect.metrics import ChannelReport, channel_report
from muxdetect.model import HybridModel
from muxdetect.muxlayout import readout

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    tau: float = 0.1
    lr: float = 1e-3
    phase_lr: float = 0.05
    weight_decay: float = 1e-4
    epochs: int = 10
    max_steps: Optional[int] = None
    groups_per_step: int = 1
    seed: int = 0
    vaccination: bool = False
    lateral_max: float = 0.0  # micrometers
    axial_max: float = 0.0  # micrometers
    fine_tune_fraction: float = 1.0
    freeze_encoder: bool = False
    freeze_stack: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.lateral_max < 0 or self.axial_max < 0:
            raise ConfigError("misalignment ranges must be non-negative")
        if not 0 < self.fine_tune_fraction <= 1:
            raise ConfigError("fine_tune_fraction must lie in (0, 1]")
        if self.epochs < 0 or self.groups_per_step < 1:
            raise ConfigError("epochs must be >= 0 and groups_per_step >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


def loss(scores: torch.Tensor, labels, tau: float) -> torch.Tensor:
    """Mean binary cross-entropy of sigmoid(score / tau) against labels (fake = 1)."""
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    labels = torch.as_tensor(labels, dtype=torch.float64).expand_as(scores)
    return F.binary_cross_entropy_with_logits(scores / tau, labels)


def vaccinate_sample(config: TrainConfig, rng: np.random.Generator) -> tuple[float, float, float]:
    """One lateral (dx, dy) and axial dz misalignment draw in micrometers."""
    dx, dy = rng.uniform(-config.lateral_max, config.lateral_max, size=2) if config.lateral_max > 0 else (0.0, 0.0)
    dz = rng.uniform(0.0, config.axial_max) if config.axial_max > 0 else 0.0
    return float(dx), float(dy), float(dz)


# ---- batching -------------------------------------------------------------


def _video_seed(seed: int, epoch: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, j]).generate_state(1)[0])


def batch_frames(dataset: VideoDataset, indices, N: int, seed: int, epoch: int,
                 perturb: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> tuple[torch.Tensor, np.ndarray]:
    """Standardized frames (len(indices), N, H, W) and labels.

    ``perturb`` acts on the canonical [0, 1] frames before standardization.
    """
    frames, labels = [], []
    for j in indices:
        sample = dataset.sample(int(j), N, _video_seed(seed, epoch, int(j)))
        if perturb is None:
            frames.append(sample.frames)
        else:
            frames.append(standardize(perturb(sample.raw)))
        labels.append(sample.label)
    return torch.as_tensor(np.stack(frames), dtype=torch.float64), np.asarray(labels)


def epoch_groups(n_videos: int, L: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled groups of exactly L videos; leftovers wrap around to the start."""
    perm = rng.permutation(n_videos)
    n_groups = max(1, math.ceil(n_videos / L)) if n_videos else 0
    perm = np.resize(perm, n_groups * L)
    return [perm[g * L : (g + 1) * L] for g in range(n_groups)]


# ---- evaluation -----------------------------------------------------------


@dataclass
class EvalResult:
    scores: np.ndarray
    labels: np.ndarray
    channels: np.ndarray

    def streams(self, L: int) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.scores[self.channels == v], self.labels[self.channels == v]) for v in range(L)]

    def report(self, L: int) -> ChannelReport:
        return channel_report(self.streams(L))

    @property
    def accuracy(self) -> float:
        return float(np.mean((self.scores > 0) == (self.labels == 1)))

    @property
    def decisions(self) -> np.ndarray:
        return (self.scores > 0).astype(np.int64)


def evaluate(model: HybridModel, dataset: VideoDataset, *, seed: int = 1234, shift=(0, 0), dz: float = 0.0,
             perturb: Optional[Callable] = None, groups_per_pass: int = 4) -> EvalResult:
    """Score every video once; video j sits in channel j mod L.

    A trailing partial group is filled with repeats that are discarded.
    """
    L, N = model.layout.L, model.layout.N
    n = len(dataset)
    order = np.arange(n)
    scores = np.empty(n)
    model.eval()
    with torch.no_grad():
        groups = [order[g : g + L] for g in range(0, n, L)]
        for start in range(0, len(groups), groups_per_pass):
            chunk = groups[start : start + groups_per_pass]
            padded = [np.resize(g, L) if len(g) < L else g for g in chunk]
            idx = np.concatenate(padded)
            frames, _ = batch_frames(dataset, idx, N, seed, 0, perturb)
            frames = frames.reshape(len(chunk), L, N, *frames.shape[-2:])
            s = model(frames, shift=shift, dz=dz).numpy()
            for g, row in zip(chunk, s):
                scores[g] = row[: len(g)]
    return EvalResult(scores, dataset.labels.copy(), order % L)


def dataset_loss(model: HybridModel, dataset: VideoDataset, tau: float, seed: int = 4321) -> float:
    res = evaluate(model, dataset, seed=seed)
    return float(loss(torch.as_tensor(res.scores), res.labels, tau))


# ---- training -------------------------------------------------------------


@dataclass
class History:
    loss_before: float = float("nan")
    epoch_train_loss: list = field(default_factory=list)
    epoch_eval_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _param_groups(model: HybridModel, config: TrainConfig) -> list[dict]:
    groups = []
    if not config.freeze_encoder:
        groups.append({"params": list(model.encoder.parameters()), "lr": config.lr, "weight_decay": config.weight_decay})
    if not config.freeze_stack and model.stack.K > 0:
        groups.append({"params": [model.stack.layers], "lr": config.phase_lr, "weight_decay": 0.0})
    return groups


def steps_per_epoch(n_videos: int, L: int, groups_per_step: int) -> int:
    return math.ceil(math.ceil(n_videos / L) / groups_per_step) if n_videos else 0


def train(model: HybridModel, dataset: VideoDataset, config: TrainConfig, val: Optional[VideoDataset] = None,
          track_loss: bool = True) -> tuple[HybridModel, History]:
    """Optimize a copy of ``model``; the argument is left untouched."""
    model = copy.deepcopy(model)
    history = History()
    L, N = model.layout.L, model.layout.N
    torch.manual_seed(config.seed)
    for p in model.encoder.parameters():
        p.requires_grad_(not config.freeze_encoder)
    model.stack.layers.requires_grad_(model.stack.K > 0 and not config.freeze_stack)
    groups = _param_groups(model, config)
    per_epoch = steps_per_epoch(len(dataset), L, config.groups_per_step)
    total = per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    if track_loss:
        history.loss_before = dataset_loss(model, dataset, config.tau)
    if total == 0 or not groups or len(dataset) == 0:
        return model, history
    opt = torch.optim.AdamW(groups)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total)
    vac_rng = np.random.default_rng([config.seed, 7])
    step = 0
    epoch = 0
    while step < total:
        model.train()
        rng = np.random.default_rng([config.seed, epoch])
        video_groups = epoch_groups(len(dataset), L, rng)
        losses = []
        for g0 in range(0, len(video_groups), config.groups_per_step):
            if step >= total:
                break
            chunk = video_groups[g0 : g0 + config.groups_per_step]
            idx = np.concatenate(chunk)
            frames, labels = batch_frames(dataset, idx, N, config.seed + 1, epoch)
            frames = frames.reshape(len(chunk), L, N, *frames.shape[-2:])
            shift, dz = (0, 0), 0.0
            if config.vaccination:
                dx, dy, dz = vaccinate_sample(config, vac_rng)
                shift = model.shift_pixels(dx, dy)
            scores = model(frames, shift=shift, dz=dz)
            value = loss(scores.reshape(-1), labels, config.tau)
            if not torch.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at step {step} (epoch {epoch})")
            opt.zero_grad(set_to_none=True)
            value.backward()
            opt.step()
            sched.step()
            losses.append(value.item())
            step += 1
        history.epoch_train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if track_loss:
            history.epoch_eval_loss.append(dataset_loss(model, dataset, config.tau))
        if val is not None and len(val):
            history.val_accuracy.append(evaluate(model, val).accuracy)
        log.info("epoch %d: train loss %.4f", epoch, history.epoch_train_loss[-1])
        epoch += 1
    history.steps = step
    for p in model.parameters():
        p.requires_grad_(True)
    model.stack.layers.requires_grad_(model.stack.K > 0)
    return model, history


def fine_tune(model: HybridModel, dataset: VideoDataset, config: TrainConfig, full_steps: int,
              val: Optional[VideoDataset] = None) -> tuple[HybridModel, History]:
    """Continue training for ``fine_tune_fraction`` of a full run's step budget."""
    if len(dataset) == 0:
        raise ConfigError("fine-tuning needs a non-empty dataset")
    budget = max(1, math.ceil(config.fine_tune_fraction * full_steps))
    per_epoch = steps_per_epoch(len(dataset), model.layout.L, config.groups_per_step)
    epochs = max(1, math.ceil(budget / per_epoch))
    cfg = TrainConfig(**{**config.to_dict(), "max_steps": budget, "epochs": epochs})
    return train(model, dataset, cfg, val)


# ---- gradient checking ----------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_group: dict
    checked: int

    def to_dict(self) -> dict:
        return asdict(self)


def central_difference(fn: Callable[[], torch.Tensor], tensor: torch.Tensor, index: tuple, step: float) -> float:
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + step
        up = float(fn())
        tensor[index] = orig - step
        down = float(fn())
        tensor[index] = orig
    return (up - down) / (2 * step)


def gradcheck(fn: Callable[[], torch.Tensor], tensors: dict, *, n_entries: int = 8, step: float = 1e-5,
              seed: int = 0, min_fraction: float = 1e-3) -> GradcheckReport:
    """Compare autograd gradients of scalar ``fn()`` with central differences.

    Entries are drawn at random among those whose analytic gradient is at
    least ``min_fraction`` of the tensor's largest gradient, so the relative
    error is not dominated by entries whose true gradient is ~0.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    value = fn()
    grads = torch.autograd.grad(value, list(tensors.values()))
    per_group = {}
    checked = 0
    for (name, t), g in zip(tensors.items(), grads):
        g = g.detach()
        mag = g.abs().flatten()
        if float(mag.max()) == 0.0:
            per_group[name] = 0.0
            continue
        candidates = torch.nonzero(mag >= min_fraction * mag.max()).flatten().numpy()
        pick = rng.choice(candidates, size=min(n_entries, candidates.size), replace=False)
        worst = 0.0
        for flat in pick:
            index = np.unravel_index(int(flat), tuple(t.shape))
            analytic = float(g[index])
            numeric = central_difference(fn, t, index, step)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
            checked += 1
        per_group[name] = worst
    return GradcheckReport(max(per_group.values()) if per_group else 0.0, per_group, checked)


def gradcheck_model(model: HybridModel, frames: torch.Tensor, labels, tau: float = 1.0, **kw) -> GradcheckReport:
    """Gradient check of the training loss w.r.t. encoder weights, layer phases and the phase map."""
    lay = model.layout
    frames = frames.to(torch.float64)

    def from_frames():
        return loss(model(frames).reshape(-1), labels, tau)

    tensors = {f"encoder.{n}": p for n, p in model.encoder.named_parameters() if p.requires_grad}
    if model.stack.K > 0:
        tensors["stack.layers"] = model.stack.layers
    report = gradcheck(from_frames, tensors, **kw)
    with torch.no_grad():
        phase = model.phase_map(frames).detach().clone()
    phase.requires_grad_(True)

    def from_phase():
        pairs = readout(decode(phase, model.stack, lay), lay)
        return loss(differential_scores(pairs).reshape(-1), labels, tau)

    phase_report = gradcheck(from_phase, {"phase_map": phase}, **kw)
    per_group = {**report.per_group, **phase_report.per_group}
    return GradcheckReport(max(per_group.values()), per_group, report.checked + phase_report.checked)
