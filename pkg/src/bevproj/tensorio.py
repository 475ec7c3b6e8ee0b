"""BVT1 tensor files and 8-bit PGM previews.

BVT1 layout (all integers little-endian u32)::

    b"BVT1" | dtype code | rank | dim_0 ... dim_{rank-1} | payload

Only dtype code 1 (float32, little-endian) is defined. The payload is
row-major and must end exactly at end-of-file.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"BVT1"
DTYPE_F32 = 1
_DTYPES = {DTYPE_F32: np.dtype("<f4")}


def encode_tensor(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<II", DTYPE_F32, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("not a BVT1 tensor (bad magic)")
    code, rank = struct.unpack_from("<II", buf, 4)
    if code not in _DTYPES:
        raise FormatError(f"unsupported dtype code {code}")
    off = 12 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    dtype = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - off}")
    if len(buf) - off > nbytes:
        raise FormatError(f"{len(buf) - off - nbytes} trailing bytes after payload")
    return np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=off).reshape(dims).astype(np.float32)


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path, shape=None) -> np.ndarray:
    """Read a BVT1 file, optionally checking its shape."""
    arr = decode_tensor(Path(path).read_bytes())
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise FormatError(f"{path}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def to_u8(image, lo=None, hi=None) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    img = np.where(np.isfinite(img), img, 0.0)
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)


def write_pgm(path, image, lo=None, hi=None) -> None:
    """Binary (P5) greyscale preview, linearly scaled to [0, 255]."""
    img = to_u8(image, lo, hi)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise FormatError("only 8-bit P5 PGM supported")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
