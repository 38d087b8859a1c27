"""Binary ``.dtns`` tensor files.

Layout (little endian): ``b"DTNS"``, u32 version (1), u8 dtype code
(0=f32, 1=f64, 2=u8), u32 rank, u64 dims[rank], then the raw row-major payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"DTNS"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    if dtype not in _CODES:
        raise FormatError(f"cannot encode dtype {arr.dtype}")
    header = MAGIC + struct.pack("<IBI", VERSION, _CODES[dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def decode(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < 13 or buf[:4] != MAGIC:
        raise FormatError(f"{name}: bad magic, not a .dtns tensor")
    version, code, rank = struct.unpack_from("<IBI", buf, 4)
    if version != VERSION:
        raise FormatError(f"{name}: unsupported .dtns version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{name}: unknown dtype code {code}")
    off = 13
    if len(buf) < off + 8 * rank:
        raise FormatError(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"{name}: payload has {len(buf) - off} bytes, expected {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode(buf, name=os.fspath(path))
