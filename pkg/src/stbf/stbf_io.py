"""STBF binary tensor format.

Layout: magic "STBF", version u16, dtype code u8 (f32=1, f64=2), ndims u8,
then ndims shape entries as u64, the payload row-major, and a trailing CRC32
of the payload bytes. All integers little-endian.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError

MAGIC = b"STBF"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_MAX_NDIMS = 8


def pack_tensor(arr: np.ndarray) -> bytes:
    """Serialize one array to STBF frame bytes."""
    # asarray, not ascontiguousarray: the latter silently promotes 0-dim
    # input to shape (1,), bypassing the ndim guard below
    a = np.asarray(arr)
    if a.dtype == np.float32:
        a = a.astype("<f4", copy=False)
    elif a.dtype == np.float64:
        a = a.astype("<f8", copy=False)
    else:
        raise ParameterError(f"unsupported dtype for STBF: {arr.dtype}")
    if a.ndim < 1 or a.ndim > _MAX_NDIMS:
        raise ParameterError(f"ndims must be 1..{_MAX_NDIMS}, got {a.ndim}")
    payload = a.tobytes(order="C")
    head = MAGIC + struct.pack("<HBB", VERSION, _DTYPE_CODES[a.dtype], a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one STBF frame starting at ``offset``.

    Returns the array and the offset just past the frame's CRC.
    """
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError("bad STBF magic")
    offset += 4
    if len(buf) < offset + 4:
        raise FormatError("truncated STBF header")
    version, code, ndims = struct.unpack_from("<HBB", buf, offset)
    offset += 4
    if version != VERSION:
        raise FormatError(f"unsupported STBF version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown STBF dtype code {code}")
    if ndims < 1 or ndims > _MAX_NDIMS:
        raise FormatError(f"STBF ndims out of range: {ndims}")
    if len(buf) < offset + 8 * ndims:
        raise FormatError("truncated STBF shape")
    shape = struct.unpack_from(f"<{ndims}Q", buf, offset)
    offset += 8 * ndims
    dtype = _CODE_DTYPES[code]
    n_bytes = int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize
    if len(buf) < offset + n_bytes + 4:
        raise FormatError("truncated STBF payload")
    payload = buf[offset : offset + n_bytes]
    offset += n_bytes
    (crc,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise FormatError("STBF CRC mismatch")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return arr, offset


def write_stbf(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(pack_tensor(arr))


def read_stbf(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = unpack_tensor(buf, 0)
    if end != len(buf):
        raise FormatError("trailing bytes after STBF frame")
    return arr


def write_sidecar(path: str | Path, payload: dict) -> None:
    """Write a JSON sidecar with stable key order (byte-reproducible)."""
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
