"""``TDCK`` checkpoints: a config blob followed by a named-tensor table.

Layout (little-endian)::

    magic "TDCK" | u16 version | u32 config length | config JSON (utf-8)
    u32 tensor count
    per tensor: u16 name length | name | u8 dtype code | u8 ndim | ndim x u32 dims | raw data
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np
import torch

from .model import ToyConfig, ToyDenoiser

MAGIC = b"TDCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def encode(config: dict, tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)  # tobytes() below is C-order; keeps 0-d shapes
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(dt).tobytes())
    return b"".join(out)


def decode(data: bytes) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a TDCK checkpoint")
    try:
        version, n_cfg = struct.unpack_from("<HI", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 10
        config = json.loads(data[pos : pos + n_cfg].decode())
        pos += n_cfg
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + n].decode()
            pos += n
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(data):
                raise CheckpointError(f"truncated tensor {name}")
            tensors[name] = np.frombuffer(data, dt, count=nbytes // dt.itemsize, offset=pos).reshape(
                shape
            )
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes after tensor table")
    return config, tensors


def save_model(model: ToyDenoiser, extra: dict | None = None) -> bytes:
    config = {"model": model.cfg.to_dict(), "use_adapter": model.use_adapter}
    if extra:
        config.update(extra)
    tensors = OrderedDict(
        (k, v.detach().cpu().numpy()) for k, v in model.state_dict().items()
    )
    return encode(config, tensors)


def load_model(data: bytes) -> tuple[ToyDenoiser, dict]:
    config, tensors = decode(data)
    model = ToyDenoiser(ToyConfig(**config["model"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.use_adapter = bool(config.get("use_adapter", False))
    return model, config
