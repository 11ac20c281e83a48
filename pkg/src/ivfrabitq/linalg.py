"""Dense linear algebra utilities: seeded random rotations and an exact k-NN oracle.

Everything here is a pure function of its inputs; matrices are never mutated
after creation, so all operations are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Rotation", "gen_rotation", "rotate", "exact_knn"]


@dataclass(frozen=True)
class Rotation:
    """A random orthogonal matrix, reproducible from ``(dims, seed)``."""

    dims: int
    matrix: np.ndarray  # (dims, dims), orthogonal
    seed: int


def gen_rotation(dims: int, seed: int) -> Rotation:
    """Generate a random orthogonal matrix from a seeded Gaussian via QR.

    The signs of the Q columns are fixed so that the diagonal of the
    triangular factor is positive, which makes the decomposition unique and
    the result bit-reproducible for a given ``(dims, seed)``.
    """
    if dims < 1:
        raise ValueError(f"dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dims, dims))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs[np.newaxis, :]
    return Rotation(dims=dims, matrix=q, seed=seed)


def rotate(rot: Rotation, x: np.ndarray) -> np.ndarray:
    """Rotate a vector or a matrix of row vectors: output row i is ``R @ x[i]``."""
    x = np.asarray(x)
    if x.shape[-1] != rot.dims:
        raise ValueError(
            f"dimension mismatch: rotation is {rot.dims}-d, input is {x.shape[-1]}-d"
        )
    return x @ rot.matrix.T


def exact_knn(
    base: np.ndarray,
    queries: np.ndarray,
    k: int,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors under squared Euclidean distance.

    Returns ``(ids, dists)`` of shape (n_queries, k'), where k' = min(k, n_base),
    sorted ascending by distance with ties broken by smaller id. Distances are
    accumulated in float64. Queries are processed in chunks so the distance
    matrix never exceeds ``chunk * n_base`` floats.
    """
    base = np.ascontiguousarray(base, dtype=np.float64)
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if base.ndim != 2 or base.shape[0] == 0:
        raise ValueError("base must be a nonempty 2-d array")
    if base.shape[1] != q.shape[1]:
        raise ValueError(
            f"dimension mismatch: base is {base.shape[1]}-d, queries are {q.shape[1]}-d"
        )
    n_base = base.shape[0]
    k_eff = min(k, n_base)
    base_sq = np.einsum("ij,ij->i", base, base)
    ids = np.empty((q.shape[0], k_eff), dtype=np.int64)
    dists = np.empty((q.shape[0], k_eff), dtype=np.float64)
    for start in range(0, q.shape[0], chunk):
        qc = q[start : start + chunk]
        q_sq = np.einsum("ij,ij->i", qc, qc)
        d = q_sq[:, np.newaxis] + base_sq[np.newaxis, :] - 2.0 * (qc @ base.T)
        np.maximum(d, 0.0, out=d)
        # Stable sort so equal distances resolve to the smaller id.
        order = np.argsort(d, axis=1, kind="stable")[:, :k_eff]
        ids[start : start + chunk] = order
        dists[start : start + chunk] = np.take_along_axis(d, order, axis=1)
    return ids, dists
