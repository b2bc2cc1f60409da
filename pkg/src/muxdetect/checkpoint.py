"""Model checkpoints: JSON header followed by little-endian float64 tensor payloads.

Layout on disk::

    b"MUXCKPT\\n"            8-byte magic
    uint64 (little endian)   header length in bytes
    header                   UTF-8 JSON, sorted keys
    payload                  tensors in header order, '<f8', C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from muxdetect.decoder import DiffractiveStack
from muxdetect.encoder import Encoder, EncoderConfig
from muxdetect.errors import MuxDetectError
from muxdetect.model import HybridModel
from muxdetect.muxlayout import MuxLayout

MAGIC = b"MUXCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(MuxDetectError):
    pass


def _tensors(model: HybridModel) -> list[tuple[str, torch.Tensor]]:
    out = [(f"encoder.{name}", t) for name, t in model.encoder.state_dict().items()]
    out.append(("stack.layers", model.stack.layers.detach()))
    if model.stack.illumination is not None:
        out.append(("stack.illumination", model.stack.illumination.real.detach()))
    return out


def save_checkpoint(model: HybridModel, path, extra: Optional[dict] = None) -> None:
    tensors = _tensors(model)
    entries, blobs, offset = [], [], 0
    for name, t in tensors:
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f8")
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "layout": model.layout.to_dict(),
        "encoder": model.encoder.config.to_dict(),
        "stack": model.stack.geometry(),
        "tensors": entries,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, data[16 + n :]


def load_checkpoint(path) -> tuple[HybridModel, dict]:
    header, payload = read_header(path)
    arrays = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = torch.from_numpy(np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64))
    layout = MuxLayout.from_dict(header["layout"])
    encoder = Encoder(EncoderConfig.from_dict(header["encoder"]), seed=None)
    state = {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")}
    encoder.load_state_dict(state)
    g = header["stack"]
    stack = DiffractiveStack(
        g["K"], g["distances"], g["rows"], g["cols"], g["pitch"], band_limit=g["band_limit"], pad_factor=g["pad_factor"],
        init_phases=arrays["stack.layers"], illumination=arrays.get("stack.illumination"),
    )
    return HybridModel(layout, encoder, stack), header.get("extra", {})
