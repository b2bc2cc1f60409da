"""Synthetic video generation, PGM frame files, manifests and lazy ingestion."""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from muxdetect.encoder import VideoSample, sample_frames
from muxdetect.errors import ConfigError, IngestError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
LABELS = {"real": 0, "fake": 1}
LABEL_NAMES = {0: "real", 1: "fake"}


# ---- PGM ------------------------------------------------------------------


def write_pgm(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame)
    if frame.dtype != np.uint8 or frame.ndim != 2:
        raise ValueError("PGM frames must be 2D uint8")
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(frame).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


# ---- datasets ---------------------------------------------------------------


class VideoDataset:
    """Labelled videos held as uint8 frame stacks (T, H, W)."""

    def __init__(self, videos: Sequence[np.ndarray], labels: Sequence[int], ids: Optional[Sequence[str]] = None):
        if len(videos) != len(labels):
            raise ValueError("videos and labels differ in length")
        self._videos = list(videos)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.ids = list(ids) if ids is not None else [f"v{j:05d}" for j in range(len(videos))]

    def __len__(self) -> int:
        return len(self.labels)

    def video(self, j: int) -> np.ndarray:
        return self._videos[j]

    def frame_shape(self) -> tuple[int, int]:
        return tuple(self.video(0).shape[1:3])

    def sample(self, j: int, N: int, seed: int) -> VideoSample:
        return sample_frames(self.video(j), N, seed, int(self.labels[j]), self.ids[j])

    def __iter__(self):
        for j in range(len(self)):
            yield self.video(j), int(self.labels[j])

    def subset(self, indices) -> "VideoDataset":
        idx = [int(i) for i in indices]
        return VideoDataset([self.video(i) for i in idx], self.labels[idx], [self.ids[i] for i in idx])

    def split(self, fraction: float, seed: int) -> tuple["VideoDataset", "VideoDataset"]:
        """Class-stratified split; the first part holds ``fraction`` of each class."""
        rng = np.random.default_rng(seed)
        first, second = [], []
        for cls in (0, 1):
            idx = np.flatnonzero(self.labels == cls)
            rng.shuffle(idx)
            k = int(round(fraction * len(idx)))
            first += idx[:k].tolist()
            second += idx[k:].tolist()
        return self.subset(sorted(first)), self.subset(sorted(second))


class ManifestDataset(VideoDataset):
    """Dataset backed by PGM files; each video is read and validated on first access."""

    def __init__(self, root: Path, entries: list[dict], frame_shape: Optional[tuple[int, int]] = None):
        self.root = Path(root)
        self.entries = entries
        self.labels = np.asarray([LABELS[e["label"]] for e in entries], dtype=np.int64)
        self.ids = [e.get("id", e["video"]) for e in entries]
        self._shape = tuple(frame_shape) if frame_shape else None
        self._cache: dict[int, np.ndarray] = {}

    def frame_shape(self) -> tuple[int, int]:
        if self._shape is None:
            self.video(0)
        return self._shape

    def video(self, j: int) -> np.ndarray:
        if j in self._cache:
            return self._cache[j]
        entry = self.entries[j]
        vdir = self.root / entry["video"]
        files = sorted(vdir.glob("*.pgm"))
        problems = []
        if len(files) != entry["frames"]:
            problems.append(f"{vdir}: manifest lists {entry['frames']} frames, found {len(files)}")
        frames = []
        for path in files:
            try:
                frame = read_pgm(path)
            except (OSError, ValueError) as exc:
                problems.append(f"{path}: {exc}")
                continue
            if self._shape is None:
                self._shape = frame.shape
            if frame.shape != self._shape:
                problems.append(f"{path}: frame is {frame.shape[0]}x{frame.shape[1]}, expected {self._shape[0]}x{self._shape[1]}")
                continue
            frames.append(frame)
        if problems:
            raise IngestError(problems)
        arr = np.stack(frames)
        self._cache[j] = arr
        return arr


def write_manifest(path, entries: list[dict], *, frame_shape, extra: Optional[dict] = None) -> dict:
    manifest = {"format_version": MANIFEST_VERSION, "root": ".", "frame_shape": list(frame_shape), "entries": entries}
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def ingest(manifest_path) -> ManifestDataset:
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError([f"{path}: {exc}"]) from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise IngestError([f"{path}: unsupported manifest version {manifest.get('format_version')!r}"])
    entries = manifest.get("entries", [])
    problems = []
    for e in entries:
        if e.get("label") not in LABELS:
            problems.append(f"{e.get('video')}: label must be real or fake, got {e.get('label')!r}")
        if not (path.parent / manifest.get("root", ".") / e.get("video", "")).is_dir():
            problems.append(f"{e.get('video')}: video directory missing")
    if problems:
        raise IngestError(problems)
    if not entries:
        warnings.warn(f"{path}: manifest has no entries", stacklevel=2)
    return ManifestDataset(path.parent / manifest.get("root", "."), entries, manifest.get("frame_shape"))


# ---- synthetic videos -------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for the toy real/fake video generator.

    ``signal`` scales every fake-specific cue; at 0 both classes are drawn
    from the same distribution.
    """

    signal: float = 1.0
    n_videos: int = 200
    frames: int = 16
    size: int = 64
    seed: int = 0
    correlation: float = 0.9
    correlation_shift: float = 0.3
    texture_cutoff: float = 0.08  # cycles/pixel, Gaussian low-pass std
    contrast: float = 0.15
    artifact_amplitude: float = 0.06
    artifact_period: float = 3.0
    random_orientation: bool = False
    sensor_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.signal <= 1.0:
            raise ConfigError("signal strength must lie in [0, 1]")
        if self.n_videos < 0 or self.frames < 1 or self.size < 8:
            raise ConfigError("need n_videos >= 0, frames >= 1, size >= 8")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("temporal correlation must lie in [0, 1)")

    @classmethod
    def preset(cls, name: str, **kw) -> "SyntheticConfig":
        presets = {
            "easy": {},
            "hard": dict(signal=0.3, artifact_amplitude=0.03, random_orientation=True, sensor_noise=0.06, correlation_shift=0.0),
            "subtle": dict(artifact_amplitude=0.013, sensor_noise=0.06, correlation_shift=0.0),
            "null": dict(signal=0.0),
        }
        if name not in presets:
            raise ConfigError(f"unknown synthetic preset {name!r}")
        params = dict(presets[name])
        params.update(kw)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)


def _lowpass_noise(rng: np.random.Generator, T: int, size: int, cutoff: float) -> np.ndarray:
    white = rng.standard_normal((T, size, size))
    f = np.fft.fftfreq(size)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    filt = np.exp(-(fx**2 + fy**2) / (2 * cutoff**2))
    out = np.fft.ifft2(np.fft.fft2(white) * filt).real
    return out / out.std(axis=(1, 2), keepdims=True)


def synth_video(rng: np.random.Generator, fake: bool, cfg: SyntheticConfig) -> np.ndarray:
    T, S = cfg.frames, cfg.size
    s = cfg.signal if fake else 0.0
    rho = cfg.correlation * (1.0 - cfg.correlation_shift * s)
    innov = _lowpass_noise(rng, T, S, cfg.texture_cutoff)
    tex = np.empty_like(innov)
    tex[0] = innov[0]
    for t in range(1, T):
        tex[t] = rho * tex[t - 1] + np.sqrt(1 - rho**2) * innov[t]
    frames = 0.5 + cfg.contrast * tex
    theta = rng.uniform(0, np.pi) if cfg.random_orientation else 0.0
    phase0 = rng.uniform(0, 2 * np.pi)
    if s > 0:
        yy, xx = np.mgrid[0:S, 0:S]
        k = 2 * np.pi / cfg.artifact_period
        arg = k * (np.cos(theta) * xx + np.sin(theta) * yy)
        drift = rng.uniform(0, 2 * np.pi, size=T) * 0.1
        pattern = np.cos(arg[None] + phase0 + drift[:, None, None])
        frames = frames + s * cfg.artifact_amplitude * pattern
    if cfg.sensor_noise > 0:
        frames = frames + cfg.sensor_noise * rng.standard_normal(frames.shape)
    return np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)


def synth_dataset(cfg: SyntheticConfig) -> VideoDataset:
    """Balanced in-memory dataset; labels alternate real/fake before a seeded shuffle."""
    rng = np.random.default_rng(cfg.seed)
    labels = np.arange(cfg.n_videos) % 2
    rng.shuffle(labels)
    videos = []
    for j, lab in enumerate(labels):
        vrng = np.random.default_rng([cfg.seed, j])
        videos.append(synth_video(vrng, bool(lab), cfg))
    return VideoDataset(videos, labels, [f"syn{cfg.seed}_{j:05d}" for j in range(cfg.n_videos)])


def gen_synthetic(cfg: SyntheticConfig, out_dir, *, extra: Optional[dict] = None) -> dict:
    """Write a synthetic dataset as PGM frames plus manifest.json; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IngestError([f"{out}: directory is not writable ({exc})"]) from exc
    ds = synth_dataset(cfg)
    entries = []
    for j in range(len(ds)):
        rel = f"videos/{ds.ids[j]}"
        vdir = out / rel
        vdir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(ds.video(j)):
            write_pgm(vdir / f"frame_{t:05d}.pgm", frame)
        entries.append({"video": rel, "id": ds.ids[j], "label": LABEL_NAMES[int(ds.labels[j])], "frames": cfg.frames, "source": "synthetic"})
    meta = {"generator": cfg.to_dict()}
    if extra:
        meta.update(extra)
    return write_manifest(out / "manifest.json", entries, frame_shape=(cfg.size, cfg.size), extra=meta)
