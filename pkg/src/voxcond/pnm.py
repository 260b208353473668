"""Binary PPM (P6) / PGM (P5) reading and writing, 8- or 16-bit."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(rb"\A(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def encode(image: np.ndarray, maxval: int = 255) -> bytes:
    """Encode (H, W) as P5 or (H, W, 3) as P6. 16-bit samples are big-endian."""
    img = np.asarray(image)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {img.shape}")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise ValueError("sample outside [0, maxval]")
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = img.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + img.astype(dtype).tobytes()


def decode(data: bytes) -> tuple[np.ndarray, int]:
    m = _HEADER.match(data)
    if m is None:
        raise ValueError("not a binary PPM/PGM payload")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    dtype = ">u1" if maxval < 256 else ">u2"
    chans = 3 if magic == b"P6" else 1
    n = w * h * chans
    body = np.frombuffer(data, dtype=dtype, count=n, offset=m.end())
    shape = (h, w, 3) if chans == 3 else (h, w)
    out = body.reshape(shape)
    return out.astype(np.uint8 if maxval < 256 else np.uint16), maxval


def write(path, image: np.ndarray, maxval: int = 255) -> None:
    Path(path).write_bytes(encode(image, maxval))


def read(path) -> tuple[np.ndarray, int]:
    return decode(Path(path).read_bytes())
