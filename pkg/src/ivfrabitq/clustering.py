"""Coarse IVF partitioning: Lloyd's k-means with k-means++ seeding.

Training is deterministic for a fixed seed: point-to-centroid distances use
float64 accumulation, centroid updates sum points in stable label order, and
empty clusters are reseeded to the point currently farthest from its own
centroid (processed in ascending cluster id). The implementation is
single-threaded numpy, so results do not depend on any worker-count setting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Centroids", "train_kmeans", "assign"]


@dataclass(frozen=True)
class Centroids:
    """Cluster centroids plus their cached squared norms."""

    values: np.ndarray  # (n_clusters, dims)
    squared_norms: np.ndarray  # (n_clusters,), float64

    @classmethod
    def from_values(cls, values: np.ndarray) -> "Centroids":
        values = np.atleast_2d(np.asarray(values))
        sq = np.einsum("ij,ij->i", values.astype(np.float64), values.astype(np.float64))
        return cls(values=values, squared_norms=sq)

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


def _label_chunks(
    x: np.ndarray, centroids: np.ndarray, sq_norms: np.ndarray, chunk: int = 8192
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels and the distance to that centroid, in float64."""
    labels = np.empty(x.shape[0], dtype=np.int64)
    dmin = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], chunk):
        xc = x[start : start + chunk]
        x_sq = np.einsum("ij,ij->i", xc, xc)
        d = x_sq[:, np.newaxis] + sq_norms[np.newaxis, :] - 2.0 * (xc @ centroids.T)
        # argmin returns the first occurrence, i.e. the smaller cluster id on ties
        lab = np.argmin(d, axis=1)
        labels[start : start + chunk] = lab
        dmin[start : start + chunk] = np.maximum(
            np.take_along_axis(d, lab[:, np.newaxis], axis=1)[:, 0], 0.0
        )
    return labels, dmin


def _kmeans_pp_init(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: sample each next center proportionally to min squared distance."""
    n = x.shape[0]
    centers = np.empty((n_clusters, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    diff = x - centers[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, n_clusters):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        diff = x - centers[j]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    return centers


def train_kmeans(x: np.ndarray, n_clusters: int, iters: int, seed: int) -> Centroids:
    """Train centroids with Lloyd's k-means (k-means++ seeding).

    Empty clusters are reseeded during each iteration so that every cluster in
    the training assignment stays populated.
    """
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    n = x.shape[0]
    if n_clusters < 1 or n_clusters > n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, n_clusters, rng)
    for _ in range(iters):
        sq = np.einsum("ij,ij->i", centers, centers)
        labels, dmin = _label_chunks(x, centers, sq)
        counts = np.bincount(labels, minlength=n_clusters)
        if (counts == 0).any():
            # Move each empty centroid onto the point farthest from its own
            # centroid; mark the point used so two empties never collide.
            for j in np.flatnonzero(counts == 0):
                p = int(np.argmax(dmin))
                labels[p] = j
                dmin[p] = -1.0
            counts = np.bincount(labels, minlength=n_clusters)
        order = np.argsort(labels, kind="stable")
        starts = np.zeros(n_clusters, dtype=np.int64)
        starts[1:] = np.cumsum(counts)[:-1]
        sums = np.add.reduceat(x[order], starts, axis=0)
        centers = sums / counts[:, np.newaxis]
    return Centroids.from_values(centers)


def assign(x: np.ndarray, centroids: Centroids) -> np.ndarray:
    """Label each row of ``x`` with its nearest centroid (ties to the smaller id)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != centroids.dims:
        raise ValueError(
            f"dimension mismatch: x is {x.shape[1]}-d, centroids are {centroids.dims}-d"
        )
    values = np.asarray(centroids.values, dtype=np.float64)
    labels, _ = _label_chunks(x, values, centroids.squared_norms)
    return labels
