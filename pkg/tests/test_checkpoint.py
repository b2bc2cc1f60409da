import pytest
import torch

from muxdetect.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from muxdetect.model import HybridModel

from conftest import tiny_encoder_config, tiny_layout


def test_round_trip_is_bit_identical(tmp_path, tiny_model):
    with torch.no_grad():
        tiny_model.stack.layers.uniform_(0, 6, generator=torch.Generator().manual_seed(1))
    save_checkpoint(tiny_model, tmp_path / "m.ckpt", extra={"note": "x"})
    loaded, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "x"}
    assert loaded.layout == tiny_model.layout
    frames = torch.randn(3, 2, 2, 16, 16, dtype=torch.float64)
    with torch.no_grad():
        assert torch.equal(loaded(frames), tiny_model(frames))
    for (na, a), (nb, b) in zip(tiny_model.named_parameters(), loaded.named_parameters()):
        assert na == nb and torch.equal(a, b)


def test_free_space_model_round_trip(tmp_path):
    model = HybridModel.build(tiny_layout(), K=0, seed=0, encoder_config=tiny_encoder_config(), pad_factor=1,
                              band_limit=False)
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.stack.geometry() == model.stack.geometry()


def test_corrupt_files(tmp_path, tiny_model):
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_header(tmp_path / "junk")
    save_checkpoint(tiny_model, tmp_path / "m.ckpt")
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "cut.ckpt")
