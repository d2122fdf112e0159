"""ATNS binary tensor blocks.

Layout: ``b"ATNS"``, u8 version (1), u8 dtype (0=f64, 1=f32), u8 ndim, one
padding byte, ``ndim`` little-endian u64 extents, then the row-major
little-endian payload.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

MAGIC = b"ATNS"
VERSION = 1
_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class ATNSError(ValueError):
    pass


def write_atns(fh: BinaryIO, array) -> int:
    """Write one block; returns the number of bytes written."""
    arr = np.asarray(array)
    if arr.dtype.kind != "f" or arr.dtype.itemsize not in (4, 8):
        raise ATNSError(f"ATNS stores f32/f64 only, got {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    code = _CODES[arr.dtype]
    if arr.ndim > 255:
        raise ATNSError("too many dimensions")
    head = MAGIC + struct.pack("<BBBx", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes(order="C")
    fh.write(head)
    fh.write(payload)
    return len(head) + len(payload)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ATNSError(f"truncated ATNS block: wanted {n} bytes, got {len(buf)}")
    return buf


def read_atns(fh: BinaryIO) -> np.ndarray:
    head = _read_exact(fh, 8)
    if head[:4] != MAGIC:
        raise ATNSError(f"bad magic {head[:4]!r}")
    version, code, ndim = struct.unpack("<BBBx", head[4:])
    if version != VERSION:
        raise ATNSError(f"unsupported ATNS version {version}")
    if code not in _DTYPES:
        raise ATNSError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim)) if ndim else ()
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def to_bytes(array) -> bytes:
    buf = io.BytesIO()
    write_atns(buf, array)
    return buf.getvalue()


def from_bytes(data: bytes) -> np.ndarray:
    return read_atns(io.BytesIO(data))


def save(path: Union[str, Path], array) -> None:
    with open(path, "wb") as fh:
        write_atns(fh, array)


def load(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_atns(fh)
        if fh.read(1):
            raise ATNSError(f"{path}: trailing bytes after ATNS block")
    return arr
