"""Black-box universal perturbations crafted on a surrogate classifier.

Each attacker owns a seed, a class-balanced data subset and a surrogate
network of a different family than the victims. A single pattern delta is
stamped on every frame (in the [0, 1] frame domain) and kept inside the
L-infinity ball of radius epsilon after every signed-gradient step.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from muxdetect.data import VideoDataset
from muxdetect.encoder import Encoder, EncoderConfig, standardize_torch
from muxdetect.errors import ConfigError, TrainingDiverged
from muxdetect.trainer import EvalResult, _video_seed, epoch_groups

EPSILONS = (1 / 255, 2 / 255, 4 / 255, 8 / 255)


def _raw_batch(dataset: VideoDataset, indices, N: int, seed: int, epoch: int) -> tuple[torch.Tensor, torch.Tensor]:
    raws, labels = [], []
    for j in indices:
        s = dataset.sample(int(j), N, _video_seed(seed, epoch, int(j)))
        raws.append(s.raw)
        labels.append(s.label)
    return torch.as_tensor(np.stack(raws), dtype=torch.float64), torch.as_tensor(labels, dtype=torch.float64)


def stamp(raw: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    return torch.clamp(raw + delta, 0.0, 1.0)


class Surrogate(nn.Module):
    """Four conv blocks, global average pooling and an affine head; frame logits averaged per video."""

    def __init__(self, width: int = 8, seed: int = 0):
        super().__init__()
        chans = [1, width, 2 * width, 2 * width, 4 * width]
        blocks = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [nn.Conv2d(cin, cout, 3, padding=1, dtype=torch.float64), nn.SiLU(), nn.AvgPool2d(2, ceil_mode=True)]
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(chans[-1], 1, dtype=torch.float64)
        gen = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                bound = math.sqrt(3.0 / m.weight[0].numel())
                with torch.no_grad():
                    m.weight.copy_(torch.rand(m.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                    m.bias.zero_()

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        """Video logits for raw [0, 1] frames (B, N, H, W)."""
        B, N, H, W = raw.shape
        x = standardize_torch(raw.reshape(B * N, 1, H, W))
        feats = self.blocks(x).mean(dim=(-2, -1))
        return self.head(feats).reshape(B, N).mean(dim=1)


class DigitalDetector(nn.Module):
    """All-digital baseline: the hybrid's encoder features followed by an MLP decoder."""

    def __init__(self, config: EncoderConfig, hidden: int = 64, seed: int = 0):
        super().__init__()
        self.encoder = Encoder(config, seed=seed)
        fc, fh, fw = config.feature_shape()
        self.decoder = nn.Sequential(
            nn.Linear(fc * fh * fw, hidden, dtype=torch.float64), nn.SiLU(), nn.Linear(hidden, 1, dtype=torch.float64)
        )
        gen = torch.Generator().manual_seed(int(seed) + 1)
        for m in self.decoder:
            if isinstance(m, nn.Linear):
                bound = math.sqrt(3.0 / m.weight[0].numel())
                with torch.no_grad():
                    m.weight.copy_(torch.rand(m.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                    m.bias.zero_()

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Video logits for standardized frames (B, N, H, W)."""
        B, N, H, W = frames.shape
        feats = self.encoder.features(frames.reshape(B * N, H, W)).reshape(B, N, -1).mean(dim=1)
        return self.decoder(feats).squeeze(-1)


def fit_classifier(net: nn.Module, dataset: VideoDataset, N: int, *, epochs: int = 5, batch: int = 8, lr: float = 1e-3,
                   seed: int = 0, raw_input: bool = False) -> nn.Module:
    """BCE training of a video-logit network (surrogate or digital baseline); returns a trained copy."""
    net = copy.deepcopy(net)
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=1e-4)
    torch.manual_seed(seed)
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch, 3])
        for idx in epoch_groups(len(dataset), batch, rng):
            raw, y = _raw_batch(dataset, idx, N, seed + 1, epoch)
            x = raw if raw_input else standardize_torch(raw)
            value = F.binary_cross_entropy_with_logits(net(x), y)
            if not torch.isfinite(value):
                raise TrainingDiverged("non-finite loss while fitting classifier")
            opt.zero_grad(set_to_none=True)
            value.backward()
            opt.step()
    return net


def evaluate_logits(net: nn.Module, dataset: VideoDataset, N: int, *, seed: int = 1234,
                    perturb: Optional[Callable] = None, raw_input: bool = False, L: int = 1) -> EvalResult:
    """Scores (logits) for every video with the same frame draws as the hybrid evaluator."""
    n = len(dataset)
    scores = np.empty(n)
    with torch.no_grad():
        for start in range(0, n, 32):
            idx = np.arange(start, min(n, start + 32))
            raw, _ = _raw_batch(dataset, idx, N, seed, 0)
            if perturb is not None:
                raw = torch.as_tensor(perturb(raw.numpy()), dtype=torch.float64)
            x = raw if raw_input else standardize_torch(raw)
            scores[idx] = net(x).numpy()
    return EvalResult(scores, dataset.labels.copy(), np.arange(n) % L)


@dataclass
class AttackSpec:
    m: int
    seed: int
    epsilon: float
    epochs: int = 10
    step_size: Optional[float] = None  # defaults to epsilon / 4
    batch: int = 8
    N: int = 4

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.epochs < 0:
            raise ConfigError("attack epochs must be >= 0")

    @property
    def alpha(self) -> float:
        return self.epsilon / 4 if self.step_size is None else self.step_size


@dataclass
class AttackResult:
    delta: np.ndarray
    surrogate_loss_before: float
    surrogate_loss_after: float
    max_abs_per_step: list = field(default_factory=list)


def surrogate_loss(surrogate: nn.Module, dataset: VideoDataset, delta: torch.Tensor, N: int, seed: int) -> float:
    raw, y = _raw_batch(dataset, range(len(dataset)), N, seed, 0)
    with torch.no_grad():
        return float(F.binary_cross_entropy_with_logits(surrogate(stamp(raw, delta)), y))


def attack_train(spec: AttackSpec, subset: VideoDataset, surrogate: nn.Module, frame_shape: tuple[int, int]) -> AttackResult:
    """Universal L-infinity PGD ascent on the surrogate's BCE over the attacker's subset."""
    eps = float(spec.epsilon)
    gen = torch.Generator().manual_seed(int(spec.seed))
    delta = (torch.rand(frame_shape, generator=gen, dtype=torch.float64) * 2 - 1) * eps
    delta = torch.clamp(delta, -eps, eps)
    before = surrogate_loss(surrogate, subset, delta, spec.N, spec.seed)
    for p in surrogate.parameters():
        p.requires_grad_(False)
    trace = [float(delta.abs().max())]
    for epoch in range(spec.epochs):
        rng = np.random.default_rng([spec.seed, epoch, 11])
        for idx in epoch_groups(len(subset), min(spec.batch, len(subset)), rng):
            raw, y = _raw_batch(subset, idx, spec.N, spec.seed, epoch)
            d = delta.clone().requires_grad_(True)
            value = F.binary_cross_entropy_with_logits(surrogate(stamp(raw, d)), y)
            (grad,) = torch.autograd.grad(value, d)
            if not bool(torch.isfinite(grad).all()):
                raise TrainingDiverged(f"attacker {spec.m}: non-finite gradient")
            delta = torch.clamp(delta + spec.alpha * torch.sign(grad), -eps, eps)
            trace.append(float(delta.abs().max()))
    for p in surrogate.parameters():
        p.requires_grad_(True)
    after = surrogate_loss(surrogate, subset, delta, spec.N, spec.seed)
    return AttackResult(delta.numpy(), before, after, trace)


def attacker_subset(dataset: VideoDataset, m: int, fraction: float, seed: int) -> VideoDataset:
    """Class-balanced random subset for attacker m."""
    rng = np.random.default_rng([seed, m])
    per_class = max(1, int(round(fraction * len(dataset) / 2)))
    picks = []
    for cls in (0, 1):
        idx = np.flatnonzero(dataset.labels == cls)
        picks += rng.choice(idx, size=min(per_class, idx.size), replace=False).tolist()
    return dataset.subset(sorted(picks))


def craft_attacks(dataset: VideoDataset, epsilons: Sequence[float], *, n_attackers: int = 10, N: int = 4,
                  fraction: float = 0.1, surrogate_epochs: int = 5, surrogate_width: int = 8, epochs: int = 10,
                  seed: int = 0) -> dict:
    """Train one surrogate per attacker on its subset and craft delta for every epsilon.

    Returns {epsilon: [AttackResult per attacker]}.
    """
    frame_shape = dataset.frame_shape()
    out = {float(e): [] for e in epsilons}
    for m in range(1, n_attackers + 1):
        aseed = int(np.random.SeedSequence([seed, m]).generate_state(1)[0] % (2**31))
        subset = attacker_subset(dataset, m, fraction, aseed)
        surrogate = fit_classifier(Surrogate(surrogate_width, seed=aseed), subset, N, epochs=surrogate_epochs,
                                   seed=aseed, raw_input=True)
        for e in epsilons:
            spec = AttackSpec(m=m, seed=aseed, epsilon=float(e), epochs=epochs, N=N)
            out[float(e)].append(attack_train(spec, subset, surrogate, frame_shape))
    return out


def attack_eval(victims: dict, attacks: dict, testset: VideoDataset, epsilons: Sequence[float]) -> list[dict]:
    """Metrics per (victim, epsilon), averaged over the attackers' patterns.

    ``victims`` maps a name to ``fn(dataset, perturb) -> EvalResult``. The
    epsilon = 0 row is the clean evaluation.
    """
    from muxdetect.metrics import confusion

    rows = []
    for name, fn in victims.items():
        clean = None
        for e in epsilons:
            e = float(e)
            if e == 0.0:
                clean = clean or fn(testset, None)
                results = [clean]
            else:
                results = []
                for res in attacks[e]:
                    delta = res.delta
                    results.append(fn(testset, lambda raw, d=delta: np.clip(raw + d, 0.0, 1.0)))
            mets = [confusion(r.scores, r.labels) for r in results]
            acc = float(np.mean([m.accuracy for m in mets]))
            rows.append({
                "model": name,
                "epsilon": e,
                "epsilon_255": e * 255,
                "accuracy": acc,
                "sensitivity": float(np.mean([m.sensitivity for m in mets if m.sensitivity is not None])),
                "specificity": float(np.mean([m.specificity for m in mets if m.specificity is not None])),
                "attack_success_rate": 1.0 - acc,
                "attackers": len(results),
            })
    return rows
