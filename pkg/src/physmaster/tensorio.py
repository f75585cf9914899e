"""Binary tensor container used by clips, preference pairs, and checkpoints.

Record layout: a 32-byte header (magic ``PMT1``, dtype code u8, ndim u8, six
little-endian u32 dims, two zero pad bytes) followed by the row-major payload.
Floats are little-endian 32-bit. A file may hold several records back to back;
byte offsets are tracked by whoever owns the file (manifest, pair index,
checkpoint metadata).
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"PMT1"
HEADER_SIZE = 32
MAX_DIMS = 6

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("?")}
_CODE_FOR_KIND = {"f": 0, "u": 1, "b": 2}


def _dtype_code(arr: np.ndarray) -> int:
    kind = arr.dtype.kind
    if kind == "f" and arr.dtype.itemsize == 4:
        return 0
    if kind == "u" and arr.dtype.itemsize == 1:
        return 1
    if kind == "b":
        return 2
    raise TypeError(f"unsupported dtype {arr.dtype}; use float32, uint8, or bool")


def write_record(fh: BinaryIO, arr: np.ndarray) -> int:
    """Append one tensor record; returns the byte offset it starts at."""
    if arr.ndim > MAX_DIMS:
        raise ValueError(f"at most {MAX_DIMS} dims supported, got {arr.ndim}")
    code = _dtype_code(arr)
    offset = fh.tell()
    dims = list(arr.shape) + [0] * (MAX_DIMS - arr.ndim)
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack("<6I", *dims)
    header += b"\x00" * (HEADER_SIZE - len(header))
    fh.write(header)
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    return offset


def read_record(fh: BinaryIO, offset: int | None = None) -> np.ndarray:
    """Read one tensor record, optionally seeking to `offset` first."""
    if offset is not None:
        fh.seek(offset)
    header = fh.read(HEADER_SIZE)
    if len(header) != HEADER_SIZE or header[:4] != MAGIC:
        raise ValueError("not a tensor record (bad magic)")
    code, ndim = struct.unpack("<BB", header[4:6])
    if code not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype code {code}")
    if ndim > MAX_DIMS:
        raise ValueError(f"bad ndim {ndim}")
    dims = struct.unpack("<6I", header[6:30])[:ndim]
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if code == 2:
        arr = arr.astype(bool)
    return arr.copy()


def write_tensor_file(path, tensors: dict[str, np.ndarray]) -> dict[str, int]:
    """Write named tensors back to back into one file; returns name -> offset."""
    offsets: dict[str, int] = {}
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            offsets[name] = write_record(fh, arr)
    return offsets


def read_tensor_file(path, offsets: dict[str, int]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        for name, offset in offsets.items():
            out[name] = read_record(fh, offset)
    return out
