"""FFM1 checkpoints: magic, JSON descriptor (length-prefixed), little-endian f32 parameters."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .network import ModelConfig, NoisePredictor, param_shapes

MAGIC = b"FFM1"
VERSION = 1


def encode_checkpoint(model: NoisePredictor, extra: dict = None) -> bytes:
    desc = {"version": VERSION, "config": model.config.to_dict(),
            "params": [[n, list(s)] for n, s in param_shapes(model.config)],
            "n_params": model.n_params}
    if extra:
        desc["extra"] = extra
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + model.flat().astype("<f4").tobytes()


def decode_checkpoint(data: bytes):
    """Model (parameters widened back to float64) and the descriptor dict."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not an FFM1 checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    if 8 + n > len(data):
        raise FormatError("truncated checkpoint descriptor")
    try:
        desc = json.loads(data[8:8 + n].decode())
        cfg = ModelConfig(**desc["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad checkpoint descriptor: {exc}") from exc
    if desc.get("version") != VERSION:
        raise FormatError(f"unsupported checkpoint version {desc.get('version')}")
    expected = [[name, list(s)] for name, s in param_shapes(cfg)]
    if desc.get("params") != expected:
        raise FormatError("parameter layout does not match the architecture")
    body = data[8 + n:]
    count = sum(int(np.prod(s)) for _, s in expected)
    if len(body) != 4 * count:
        raise FormatError(f"expected {4 * count} parameter bytes, found {len(body)}")
    model = NoisePredictor(cfg)
    model.set_flat(np.frombuffer(body, dtype="<f4").astype(np.float64))
    return model, desc


def save_checkpoint(path, model: NoisePredictor, extra: dict = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
