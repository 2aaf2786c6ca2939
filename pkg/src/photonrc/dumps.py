"""Per-point diagnostic dumps: float arrays in a tiny binary container.

Layout: 16-byte header (8-byte magic "PHRCDMP1", uint32 version, uint16
dtype code, uint16 ndim), then ndim uint64 dimensions, then the raw
little-endian array data in C order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PHRCDMP1"
VERSION = 1

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_array(path: str, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    elif arr.dtype == np.complex128:
        arr = arr.astype("<c16", copy=False)
    else:
        raise TypeError(f"unsupported dtype {arr.dtype} (float64/complex128 only)")
    code = _CODES[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IHH", VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_array(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, code, ndim = struct.unpack("<IHH", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype=_DTYPES[code])
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ValueError(f"{path}: truncated payload ({data.size} of {expected} items)")
    return data.reshape(shape).copy()
