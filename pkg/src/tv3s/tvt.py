"""TVT1 tensor files.

Layout: magic ``b"TVT1"``, u8 dtype code (1 = f32, 2 = f64), u8 ndim, ndim
little-endian u32 extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"TVT1"
_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def encode(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        if arr.size and np.abs(arr).max() >= 2**24:
            raise FormatError("integer tensor too large to store exactly as f32")
        arr = arr.astype("<f4")
    elif arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = MAGIC + struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad TVT1 magic")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    off = 6 + 4 * ndim
    if len(buf) < off:
        raise FormatError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", buf, 6)
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + count * dtype.itemsize:
        raise FormatError(f"{source}: payload size does not match shape {shape}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save(path: str | os.PathLike, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), source=os.fspath(path))
