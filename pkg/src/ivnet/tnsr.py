"""The TNSR binary tensor file format.

Layout: magic ``TNSR``, version u8 = 1, dtype u8 (1 = f32, 2 = f64, 3 = u8),
ndim u8, one pad byte, ndim x u64 little-endian extents, then the row-major
little-endian payload. Used by frame storage, normalization stats,
checkpoints and weight import.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}


class TnsrFormatError(ValueError):
    pass


def write_tnsr(f, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)  # note: would promote 0-d to 1-d
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    code = _DTYPE_CODES.get(np.dtype(dt))
    if code is None:
        raise TnsrFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TnsrFormatError("too many dimensions")
    f.write(MAGIC)
    f.write(struct.pack("<BBBB", VERSION, code, arr.ndim, 0))
    for extent in arr.shape:
        f.write(struct.pack("<Q", extent))
    f.write(arr.astype(dt, copy=False).tobytes(order="C"))


def read_tnsr(f) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise TnsrFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    header = f.read(4)
    if len(header) != 4:
        raise TnsrFormatError("truncated header")
    version, code, ndim, _pad = struct.unpack("<BBBB", header)
    if version != VERSION:
        raise TnsrFormatError(f"unsupported version {version}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise TnsrFormatError(f"unknown dtype code {code}")
    raw = f.read(8 * ndim)
    if len(raw) != 8 * ndim:
        raise TnsrFormatError("truncated extents")
    shape = struct.unpack(f"<{ndim}Q", raw) if ndim else ()
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    payload = f.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise TnsrFormatError("truncated payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_tnsr(path, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tnsr(f, array)


def load_tnsr(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tnsr(f)


def tnsr_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tnsr(buf, array)
    return buf.getvalue()
