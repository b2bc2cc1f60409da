"""Classification metrics, ROC/KS analysis and distribution tables.

Scores above the threshold are called fake; a score exactly at the
threshold is called real.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from muxdetect.errors import InvalidInputError, ShapeError, UndefinedMetricError

AGGREGATED = ("accuracy", "sensitivity", "specificity", "ks")


@dataclass
class ChannelMetrics:
    v: Optional[int]
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    auroc: Optional[float] = None
    ks: Optional[float] = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise InvalidInputError("need at least one scored item")
    return s, y


def confusion(scores, labels, threshold: float = 0.0, v: Optional[int] = None) -> ChannelMetrics:
    s, y = _arrays(scores, labels)
    pred = s > threshold
    fake = y == 1
    tp = int(np.sum(pred & fake))
    fn = int(np.sum(~pred & fake))
    fp = int(np.sum(pred & ~fake))
    tn = int(np.sum(~pred & ~fake))
    return ChannelMetrics(
        v=v, tp=tp, fp=fp, tn=tn, fn=fn,
        accuracy=(tp + tn) / (tp + tn + fp + fn),
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
    )


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(fake score > real score) with ties counted 1/2."""
    s, y = _arrays(scores, labels)
    n_fake = int(np.sum(y == 1))
    n_real = s.size - n_fake
    if n_fake == 0 or n_real == 0:
        raise UndefinedMetricError("AUROC needs both real and fake samples")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_fake * (n_fake + 1) / 2
    return float(u / (n_fake * n_real))


def ecdf(sample, points) -> np.ndarray:
    """Right-continuous empirical CDF of ``sample`` evaluated at ``points``."""
    srt = np.sort(np.asarray(sample, dtype=np.float64))
    return np.searchsorted(srt, np.asarray(points, dtype=np.float64), side="right") / srt.size


def ks_distance(real_scores, fake_scores) -> float:
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    if real.size == 0 or fake.size == 0:
        raise InvalidInputError("KS distance needs two non-empty samples")
    pooled = np.concatenate([real, fake])
    return float(np.max(np.abs(ecdf(real, pooled) - ecdf(fake, pooled))))


def channel_metrics(scores, labels, v: Optional[int] = None, threshold: float = 0.0) -> ChannelMetrics:
    m = confusion(scores, labels, threshold, v)
    s, y = _arrays(scores, labels)
    if 0 < y.sum() < y.size:
        m.auroc = auroc(s, y)
        m.ks = ks_distance(s[y == 0], s[y == 1])
    return m


@dataclass
class ChannelReport:
    channels: list[ChannelMetrics]
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    overall: Optional[ChannelMetrics] = None
    std_kind: str = "population"

    def to_dict(self) -> dict:
        return {
            "channels": [c.to_dict() for c in self.channels],
            "mean": self.mean,
            "std": self.std,
            "std_kind": self.std_kind,
            "overall": self.overall.to_dict() if self.overall else None,
        }


def channel_report(streams: Sequence[tuple], threshold: float = 0.0) -> ChannelReport:
    """Per-channel metrics plus the unweighted mean and population std across channels.

    ``streams[v]`` is ``(scores, labels)`` for channel v. AUROC is left out
    of the aggregates. ``overall`` pools every channel's items.
    """
    channels = [channel_metrics(s, y, v, threshold) for v, (s, y) in enumerate(streams)]
    mean, std = {}, {}
    for key in AGGREGATED:
        vals = np.array([getattr(c, key) for c in channels if getattr(c, key) is not None], dtype=np.float64)
        mean[key] = float(vals.mean()) if vals.size else None
        std[key] = float(vals.std()) if vals.size else None
    all_s = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s, _ in streams])
    all_y = np.concatenate([np.asarray(y).ravel() for _, y in streams])
    overall = channel_metrics(all_s, all_y, None, threshold)
    return ChannelReport(channels, mean, std, overall)


def export_distributions(real_scores, fake_scores, bins: int = 40, value_range=None) -> dict:
    """Histogram counts per class and pooled-point CDF table."""
    if bins < 2:
        raise InvalidInputError("need at least 2 bins")
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    pooled = np.concatenate([real, fake])
    edges = np.histogram_bin_edges(pooled, bins=bins, range=value_range)
    counts_real = np.histogram(real, bins=edges)[0] if real.size else np.zeros(bins, dtype=np.int64)
    counts_fake = np.histogram(fake, bins=edges)[0] if fake.size else np.zeros(bins, dtype=np.int64)
    points = np.unique(pooled)
    start = edges[0] - (edges[1] - edges[0])
    x = np.concatenate([[start], points])
    cdf_real = ecdf(real, x) if real.size else np.zeros_like(x)
    cdf_fake = ecdf(fake, x) if fake.size else np.zeros_like(x)
    return {
        "edges": edges,
        "counts_real": counts_real.astype(np.int64),
        "counts_fake": counts_fake.astype(np.int64),
        "cdf_x": x,
        "cdf_real": cdf_real,
        "cdf_fake": cdf_fake,
    }
