"""Reading and writing the fvecs / ivecs benchmark vector formats.

A file is a sequence of records ``[int32 dim d][d payload values]``,
little-endian, float32 payload for fvecs and int32 for ivecs. All records in
a file must share the same dimension.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["read_fvecs", "write_fvecs", "read_ivecs", "write_ivecs"]


def _read_vecs(path: str, payload_dtype: str) -> np.ndarray:
    size = os.path.getsize(path)
    if size == 0:
        return np.zeros((0, 0), dtype=payload_dtype)
    if size < 4:
        raise ValueError(f"{path}: truncated record at byte offset 0")
    raw = np.fromfile(path, dtype=np.uint8)
    dim = int(raw[:4].view("<i4")[0])
    if dim <= 0:
        raise ValueError(f"{path}: non-positive dimension {dim} at byte offset 0")
    record = 4 * (1 + dim)
    n, rem = divmod(size, record)
    if rem:
        raise ValueError(f"{path}: truncated record at byte offset {n * record}")
    table = raw.view("<i4").reshape(n, 1 + dim)
    bad = np.flatnonzero(table[:, 0] != dim)
    if bad.size:
        raise ValueError(
            f"{path}: inconsistent dimension {table[bad[0], 0]} at byte offset "
            f"{int(bad[0]) * record}"
        )
    return np.ascontiguousarray(table[:, 1:]).view(payload_dtype).copy()


def read_fvecs(path: str) -> np.ndarray:
    """Read an fvecs file into an (n, d) float32 matrix."""
    return _read_vecs(path, "<f4")


def read_ivecs(path: str) -> np.ndarray:
    """Read an ivecs file into an (n, d) int32 matrix."""
    return _read_vecs(path, "<i4")


def _write_vecs(path: str, x: np.ndarray, payload_dtype: str) -> None:
    x = np.atleast_2d(np.asarray(x))
    n, dim = x.shape
    if n and dim <= 0:
        raise ValueError(f"cannot write records of dimension {dim}")
    table = np.empty((n, 1 + dim), dtype="<i4")
    table[:, 0] = dim
    table[:, 1:] = x.astype(payload_dtype).view("<i4")
    table.tofile(path)


def write_fvecs(path: str, x: np.ndarray) -> None:
    """Write an (n, d) matrix as float32 fvecs records."""
    _write_vecs(path, x, "<f4")


def write_ivecs(path: str, x: np.ndarray) -> None:
    """Write an (n, d) matrix as int32 ivecs records."""
    _write_vecs(path, x, "<i4")
