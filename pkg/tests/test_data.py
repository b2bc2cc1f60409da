import json

import numpy as np
import pytest

from muxdetect.data import (
    SyntheticConfig,
    VideoDataset,
    gen_synthetic,
    ingest,
    read_pgm,
    synth_dataset,
    write_pgm,
)
from muxdetect.errors import ConfigError, IngestError


def test_pgm_round_trip(tmp_path, rng):
    frame = rng.integers(0, 256, size=(7, 11), dtype=np.uint8)
    write_pgm(tmp_path / "f.pgm", frame)
    assert np.array_equal(read_pgm(tmp_path / "f.pgm"), frame)


def test_pgm_header_comments(tmp_path):
    body = bytes(range(6))
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n3 2\n# depth\n255\n" + body)
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[0, 1, 2], [3, 4, 5]]


@pytest.mark.parametrize("payload", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n"])
def test_pgm_rejects_bad_files(tmp_path, payload):
    (tmp_path / "b.pgm").write_bytes(payload)
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "b.pgm")


def test_write_pgm_rejects_non_uint8(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2)))


def test_synthetic_is_deterministic_and_balanced():
    cfg = SyntheticConfig(n_videos=10, frames=3, size=16, seed=4)
    a, b = synth_dataset(cfg), synth_dataset(cfg)
    assert all(np.array_equal(a.video(j), b.video(j)) for j in range(10))
    assert a.labels.sum() == 5 and a.video(0).dtype == np.uint8 and a.video(0).shape == (3, 16, 16)
    c = synth_dataset(SyntheticConfig(n_videos=10, frames=3, size=16, seed=5))
    assert not np.array_equal(a.video(0), c.video(0))


def test_zero_signal_classes_share_a_distribution():
    ds = synth_dataset(SyntheticConfig(n_videos=200, frames=2, size=16, seed=0, signal=0.0))
    hf = []
    for j in range(len(ds)):
        v = ds.video(j).astype(float)
        hf.append(np.abs(np.diff(v, axis=-1)).mean())
    hf = np.array(hf)
    real, fake = hf[ds.labels == 0], hf[ds.labels == 1]
    pooled = hf.std() * np.sqrt(1 / len(real) + 1 / len(fake))
    assert abs(real.mean() - fake.mean()) < 3 * pooled


def test_synthetic_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(signal=1.5)
    with pytest.raises(ConfigError):
        SyntheticConfig.preset("impossible")
    assert SyntheticConfig.preset("null").signal == 0.0
    assert SyntheticConfig.preset("hard", n_videos=3).n_videos == 3
    subtle = SyntheticConfig.preset("subtle")
    assert subtle.artifact_amplitude < SyntheticConfig().artifact_amplitude and subtle.correlation_shift == 0.0


def test_gen_then_ingest_round_trip(tmp_path):
    cfg = SyntheticConfig(n_videos=6, frames=3, size=16, seed=2)
    manifest = gen_synthetic(cfg, tmp_path / "ds")
    ds = ingest(tmp_path / "ds" / "manifest.json")
    mem = synth_dataset(cfg)
    assert len(ds) == 6 == len(manifest["entries"])
    assert ds.labels.tolist() == mem.labels.tolist()
    assert all(np.array_equal(ds.video(j), mem.video(j)) for j in range(6))
    assert ds.frame_shape() == (16, 16)


def test_gen_is_bit_identical(tmp_path):
    cfg = SyntheticConfig(n_videos=2, frames=2, size=8, seed=1)
    gen_synthetic(cfg, tmp_path / "a")
    gen_synthetic(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.pgm"))
    assert files
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)


def test_ingest_reports_bad_frames(tmp_path):
    gen_synthetic(SyntheticConfig(n_videos=2, frames=2, size=8, seed=1), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    vdir = tmp_path / man["entries"][1]["video"]
    bad = vdir / "frame_00001.pgm"
    write_pgm(bad, np.zeros((9, 8), dtype=np.uint8))
    ds = ingest(tmp_path / "manifest.json")
    ds.video(0)
    with pytest.raises(IngestError) as info:
        ds.video(1)
    assert "frame_00001.pgm" in str(info.value)
    (vdir / "frame_00000.pgm").unlink()
    with pytest.raises(IngestError) as info:
        ingest(tmp_path / "manifest.json").video(1)
    assert "found 1" in str(info.value)


def test_ingest_manifest_errors(tmp_path):
    with pytest.raises(IngestError):
        ingest(tmp_path / "missing.json")
    (tmp_path / "m.json").write_text(json.dumps({"format_version": 99, "entries": []}))
    with pytest.raises(IngestError):
        ingest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text(json.dumps({"format_version": 1, "entries": [
        {"video": "nope", "label": "maybe", "frames": 1}]}))
    with pytest.raises(IngestError) as info:
        ingest(tmp_path / "m.json")
    assert len(info.value.problems) == 2


def test_empty_manifest_warns(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"format_version": 1, "entries": []}))
    with pytest.warns(UserWarning, match="no entries"):
        ds = ingest(tmp_path / "m.json")
    assert len(ds) == 0


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IngestError):
        gen_synthetic(SyntheticConfig(n_videos=1, frames=1, size=8), blocker / "sub")


def test_split_is_stratified():
    ds = VideoDataset([np.zeros((1, 2, 2), np.uint8)] * 20, [0] * 10 + [1] * 10)
    a, b = ds.split(0.3, seed=0)
    assert len(a) == 6 and a.labels.sum() == 3 and len(b) == 14
    assert not set(a.ids) & set(b.ids)
