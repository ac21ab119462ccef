"""Versioned flat-binary parameter checkpoints.

Layout: the 8 ASCII bytes ``rtcnn v1``, then for each tensor: u32 name
length, UTF-8 name, u32 rows, u32 cols (all little-endian), then rows*cols
float64 values, row-major little-endian. Vectors are stored as one row,
scalars as 1x1. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "MAGIC", "load_params", "save_params"]

MAGIC = b"rtcnn v1"


class CheckpointError(ValueError):
    """Corrupt or mismatched checkpoint content."""


def _as_matrix(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim == 2:
        return a
    raise CheckpointError(f"cannot store tensor of rank {a.ndim}")


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Write tensors in sorted-name order so equal dicts give equal bytes."""
    chunks = [MAGIC]
    for name in sorted(params):
        mat = np.ascontiguousarray(_as_matrix(params[name]))
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<II", mat.shape[0], mat.shape[1]))
        if mat.dtype.byteorder == ">":  # big-endian hosts: normalize on disk
            mat = mat.astype("<f8")
        chunks.append(mat.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    """Read all tensors; errors name the tensor at which parsing failed."""
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(
            f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r}")
    offset = len(MAGIC)
    out: dict[str, np.ndarray] = {}
    index = 0
    total = len(blob)
    while offset < total:
        index += 1
        where = f"{path}: tensor #{index}"
        if offset + 4 > total:
            raise CheckpointError(f"{where}: truncated name length")
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + name_len > total:
            raise CheckpointError(f"{where}: truncated name")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        where = f"{path}: tensor '{name}'"
        if offset + 8 > total:
            raise CheckpointError(f"{where}: truncated shape")
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        nbytes = rows * cols * 8
        if offset + nbytes > total:
            raise CheckpointError(
                f"{where}: truncated data, need {nbytes} bytes, have {total - offset}")
        flat = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
        offset += nbytes
        if name in out:
            raise CheckpointError(f"{where}: duplicate tensor name")
        out[name] = flat.reshape(rows, cols).astype(np.float64)
    return out
