"""A2TN binary tensor files.

Layout: magic ``A2TN``, u8 version (1), u8 precision (4 = float32,
8 = float64), u8 ndim, one padding byte (header is 8 bytes total),
then ndim little-endian u32 extents, then the row-major little-endian
IEEE-754 payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"A2TN"
VERSION = 1

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class TensorFileError(ValueError):
    """Raised for malformed A2TN data."""


def tensor_to_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype == np.float32:
        precision = 4
    elif a.dtype == np.float64:
        precision = 8
    else:
        raise TensorFileError(f"unsupported dtype {a.dtype}; use float32 or float64")
    if a.ndim < 1 or a.ndim > 255:
        raise TensorFileError(f"unsupported ndim {a.ndim}")
    header = MAGIC + struct.pack("<BBBx", VERSION, precision, a.ndim)
    extents = struct.pack(f"<{a.ndim}I", *a.shape)
    payload = np.ascontiguousarray(a).astype(_DTYPES[precision], copy=False).tobytes()
    return header + extents + payload


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorFileError("not an A2TN blob (bad magic)")
    version, precision, ndim = struct.unpack("<BBBx", raw[4:8])
    if version != VERSION:
        raise TensorFileError(f"unsupported A2TN version {version}")
    if precision not in _DTYPES:
        raise TensorFileError(f"unsupported precision byte {precision}")
    offset = 8 + 4 * ndim
    if len(raw) < offset:
        raise TensorFileError("truncated A2TN header")
    shape = struct.unpack(f"<{ndim}I", raw[8:offset])
    count = int(np.prod(shape)) if shape else 1
    expected = offset + count * precision
    if len(raw) != expected:
        raise TensorFileError(f"payload size mismatch: expected {expected} bytes, got {len(raw)}")
    flat = np.frombuffer(raw, dtype=_DTYPES[precision], count=count, offset=offset)
    return flat.reshape(shape).copy()


def save_tensor(path: str | Path, a: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(a))


def load_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
