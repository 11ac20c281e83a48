"""Immutable flattened index assembly and bit-exact binary serialization.

The built index stores one contiguous array per kind of data (packed 1-bit
codes, ex-code bytes, estimator factors, original ids), flattened across
clusters CSR-style: ``offsets`` gives each cluster's row range, and cluster
``c``'s packed words live at ``[groups * offsets[c], groups * offsets[c+1])``.
The index is immutable after build; concurrent readers need no
synchronization.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ivfrabitq.clustering import Centroids, assign, train_kmeans
from ivfrabitq.codec import (
    QuantizationParams,
    compute_factors_batch,
    excode_bytes_per_vector,
    normalize_residuals,
    pack_excodes,
    pack_interleaved,
    quantize_batch,
    split_planes,
)
from ivfrabitq.linalg import gen_rotation

__all__ = [
    "BuildParams",
    "IvfRabitqIndex",
    "IndexFormatError",
    "build_index",
    "save_index",
    "load_index",
    "default_workers",
]

_MAGIC = b"IVRQ1\x00"
_VERSION = 1


class IndexFormatError(ValueError):
    """Raised when an index file is malformed, naming the offending section."""


def default_workers() -> int:
    """Worker-count cap from the IVRQ_THREADS environment variable.

    Defaults to 1: results never depend on the worker count, and for the
    op sizes involved CPython threads rarely pay for their contention, so
    parallelism is strictly opt-in.
    """
    env = os.environ.get("IVRQ_THREADS")
    if env:
        workers = int(env)
        if workers < 1:
            raise ValueError(f"IVRQ_THREADS must be >= 1, got {workers}")
        return workers
    return 1


@dataclass(frozen=True)
class BuildParams:
    """Index construction parameters."""

    n_clusters: int
    quant: QuantizationParams
    kmeans_iters: int = 25
    train_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.kmeans_iters < 1:
            raise ValueError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


@dataclass
class IvfRabitqIndex:
    """Built index. Treat as immutable: search caches derived views on it."""

    dims: int
    bits: int
    n_clusters: int
    size: int
    eps_bound: float
    seed: int
    rotation: np.ndarray  # (dims, dims) float32, orthogonal
    centroids: Centroids  # rotated centroids, float32 values
    offsets: np.ndarray  # (n_clusters + 1,) uint64, CSR row pointers
    packed_msb: np.ndarray  # (size * ceil(dims/32),) uint32, per-cluster interleaved
    excodes: np.ndarray  # (size, excode_bytes_per_vector) uint8
    short_factors: np.ndarray  # (size, 3) float32: add, scale, err
    long_factors: np.ndarray  # (size, 2) float32: add, scale
    pids: np.ndarray  # (size,) uint64, original row ids

    @property
    def words_per_vector(self) -> int:
        return (self.dims + 31) // 32

    def cluster_range(self, cluster: int) -> tuple[int, int]:
        return int(self.offsets[cluster]), int(self.offsets[cluster + 1])

    def cluster_words(self, cluster: int) -> np.ndarray:
        """Packed 1-bit codes of one cluster as a (groups, n_c) word view."""
        lo, hi = self.cluster_range(cluster)
        g = self.words_per_vector
        return self.packed_msb[lo * g : hi * g].reshape(g, hi - lo)

    @cached_property
    def msb_nibbles(self) -> np.ndarray:
        """1-bit codes as 4-dim nibble indices, (size, 8 * groups) uint8.

        Derived lazily from the packed words; nibble ``j`` covers dimensions
        ``4j .. 4j + 3`` (padding nibbles are zero), matching the lookup-table
        block order.
        """
        g = self.words_per_vector
        if self.size == 0:
            return np.zeros((0, 8 * g), dtype=np.uint8)
        out = np.empty((self.size, 8 * g), dtype=np.uint8)
        for c in range(self.n_clusters):
            lo, hi = self.cluster_range(c)
            if hi == lo:
                continue
            words = self.cluster_words(c)  # (g, n_c)
            for s in range(8):
                nib = (words >> np.uint32(4 * s)) & np.uint32(0xF)
                out[lo:hi, s::8] = nib.T.astype(np.uint8)
        return out

    @cached_property
    def code_values(self) -> np.ndarray:
        """Full unsigned codes decoded to float32, (size, dims).

        Reassembled from the packed MSB plane and the ex-code bytes via
        ``u = 2**(bits-1) * msb + ex``. Values are integers below 256, exactly
        representable, so float32 dot products against the rotated query are
        refinement-grade.
        """
        from ivfrabitq.codec import PackedPlane, unpack_excodes, unpack_interleaved

        out = np.empty((self.size, self.dims), dtype=np.float32)
        g = self.words_per_vector
        for c in range(self.n_clusters):
            lo, hi = self.cluster_range(c)
            if hi == lo:
                continue
            plane = PackedPlane(
                n=hi - lo, dims=self.dims, words=self.packed_msb[lo * g : hi * g]
            )
            out[lo:hi] = unpack_interleaved(plane)
        out *= float(2 ** (self.bits - 1))
        if self.bits > 1:
            out += unpack_excodes(self.excodes, self.dims, self.bits)
        return out


def _quantize_cluster(
    o_rot: np.ndarray,
    d: np.ndarray,
    c_rot: np.ndarray,
    quant: QuantizationParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Quantize one cluster's rotated unit residuals; returns packed arrays."""
    u, _ = quantize_batch(o_rot, quant)
    msb, ex = split_planes(u, quant.bits)
    short, long, _ = compute_factors_batch(
        u, o_rot, d, np.broadcast_to(c_rot, o_rot.shape), quant
    )
    words = pack_interleaved(msb).words
    ex_bytes = (
        pack_excodes(ex, quant.bits)
        if ex is not None
        else np.zeros((o_rot.shape[0], 0), dtype=np.uint8)
    )
    return words, ex_bytes, short, long


def build_index(
    x: np.ndarray, params: BuildParams, workers: int | None = None
) -> IvfRabitqIndex:
    """Build an index over the rows of ``x``.

    Pipeline: k-means training (optionally on a seeded subsample), nearest-
    centroid assignment, then per cluster: residual normalization, rotation,
    quantization, plane splitting, factor computation, and bit packing.
    Clusters are processed as independent task units writing disjoint output
    slices, so the result does not depend on the worker count.
    """
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float32)
    n, dims = x.shape
    if n == 0:
        raise ValueError("cannot build an index over an empty dataset")
    if not np.isfinite(x).all():
        raise ValueError("dataset contains non-finite values")
    if params.n_clusters > n:
        raise ValueError(f"n_clusters={params.n_clusters} exceeds dataset size {n}")
    quant = params.quant
    if workers is None:
        workers = default_workers()

    seeds = np.random.SeedSequence(params.seed).spawn(2)
    if params.train_fraction < 1.0:
        n_train = max(1, math.ceil(params.train_fraction * n))
        n_train = max(n_train, min(n, params.n_clusters))
        rng = np.random.default_rng(seeds[0])
        train_rows = np.sort(rng.choice(n, size=n_train, replace=False))
        x_train = x[train_rows]
    else:
        x_train = x
    km_seed = int(seeds[1].generate_state(1)[0])
    centroids64 = train_kmeans(x_train, params.n_clusters, params.kmeans_iters, km_seed)
    labels = assign(x, centroids64)

    counts = np.bincount(labels, minlength=params.n_clusters)
    offsets = np.zeros(params.n_clusters + 1, dtype=np.uint64)
    offsets[1:] = np.cumsum(counts)
    order = np.argsort(labels, kind="stable")

    # The float32 rotation is part of the index; using it for both build-time
    # and query-time rotation keeps the two sides bit-consistent.
    rot32 = gen_rotation(dims, params.seed).matrix.astype(np.float32)
    cent32 = centroids64.values.astype(np.float32)
    cent_rot = (cent32 @ rot32.T).astype(np.float32)

    residuals, d = normalize_residuals(x[order], cent32[labels[order]])
    o_rot = (residuals @ rot32.T.astype(np.float64)).astype(np.float32)

    g = (dims + 31) // 32
    bpv = excode_bytes_per_vector(dims, quant.bits)
    packed = np.zeros(n * g, dtype=np.uint32)
    ex_bytes = np.zeros((n, bpv), dtype=np.uint8)
    short = np.zeros((n, 3), dtype=np.float32)
    long = np.zeros((n, 2), dtype=np.float32)

    def do_cluster(c: int) -> None:
        lo, hi = int(offsets[c]), int(offsets[c + 1])
        if hi == lo:
            return
        words, exb, sh, lg = _quantize_cluster(
            o_rot[lo:hi], d[lo:hi], cent_rot[c].astype(np.float64), quant
        )
        packed[lo * g : hi * g] = words
        ex_bytes[lo:hi] = exb
        short[lo:hi] = sh.astype(np.float32)
        long[lo:hi] = lg.astype(np.float32)

    if workers > 1 and params.n_clusters > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(do_cluster, range(params.n_clusters)))
    else:
        for c in range(params.n_clusters):
            do_cluster(c)

    return IvfRabitqIndex(
        dims=dims,
        bits=quant.bits,
        n_clusters=params.n_clusters,
        size=n,
        eps_bound=quant.eps_bound,
        seed=params.seed,
        rotation=rot32,
        centroids=Centroids.from_values(cent_rot),
        offsets=offsets,
        packed_msb=packed,
        excodes=ex_bytes,
        short_factors=short,
        long_factors=long,
        pids=order.astype(np.uint64),
    )


_SECTIONS = (
    "rotation",
    "centroids",
    "offsets",
    "packed_msb",
    "excodes",
    "short_factors",
    "long_factors",
    "pids",
)


def save_index(index: IvfRabitqIndex, path: str) -> None:
    """Serialize the index (little-endian throughout)."""
    arrays = {
        "rotation": index.rotation.astype("<f4", copy=False),
        "centroids": np.asarray(index.centroids.values, dtype="<f4"),
        "offsets": index.offsets.astype("<u8", copy=False),
        "packed_msb": index.packed_msb.astype("<u4", copy=False),
        "excodes": index.excodes.astype("<u1", copy=False),
        "short_factors": index.short_factors.astype("<f4", copy=False),
        "long_factors": index.long_factors.astype("<f4", copy=False),
        "pids": index.pids.astype("<u8", copy=False),
    }
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<H", _VERSION))
        f.write(
            struct.pack(
                "<IIIQfQ",
                index.dims,
                index.bits,
                index.n_clusters,
                index.size,
                index.eps_bound,
                index.seed,
            )
        )
        for name in _SECTIONS:
            data = np.ascontiguousarray(arrays[name]).tobytes()
            f.write(struct.pack("<Q", len(data)))
            f.write(data)


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IndexFormatError(f"file truncated in section '{what}'")
    return data


def load_index(path: str) -> IvfRabitqIndex:
    """Load a serialized index; the result is bit-identical to what was saved."""
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise IndexFormatError(f"bad magic {magic!r}, not an index file")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "header"))
        if version != _VERSION:
            raise IndexFormatError(f"unsupported version {version}")
        dims, bits, n_clusters, size, eps_bound, seed = struct.unpack(
            "<IIIQfQ", _read_exact(f, 32, "header")
        )
        g = (dims + 31) // 32
        bpv = excode_bytes_per_vector(dims, bits)
        expected = {
            "rotation": (dims * dims * 4, "<f4", (dims, dims)),
            "centroids": (n_clusters * dims * 4, "<f4", (n_clusters, dims)),
            "offsets": ((n_clusters + 1) * 8, "<u8", (n_clusters + 1,)),
            "packed_msb": (size * g * 4, "<u4", (size * g,)),
            "excodes": (size * bpv, "<u1", (size, bpv)),
            "short_factors": (size * 12, "<f4", (size, 3)),
            "long_factors": (size * 8, "<f4", (size, 2)),
            "pids": (size * 8, "<u8", (size,)),
        }
        arrays = {}
        for name in _SECTIONS:
            nbytes, dtype, shape = expected[name]
            (length,) = struct.unpack("<Q", _read_exact(f, 8, name))
            if length != nbytes:
                raise IndexFormatError(
                    f"section '{name}' has {length} bytes, expected {nbytes}"
                )
            payload = _read_exact(f, nbytes, name)
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()

    offsets = arrays["offsets"]
    if offsets[0] != 0 or offsets[-1] != size or np.any(np.diff(offsets.astype(np.int64)) < 0):
        raise IndexFormatError("section 'offsets' is not a valid row-pointer array")
    return IvfRabitqIndex(
        dims=dims,
        bits=bits,
        n_clusters=n_clusters,
        size=size,
        eps_bound=eps_bound,
        seed=seed,
        rotation=arrays["rotation"],
        centroids=Centroids.from_values(arrays["centroids"]),
        offsets=offsets,
        packed_msb=arrays["packed_msb"],
        excodes=arrays["excodes"],
        short_factors=arrays["short_factors"],
        long_factors=arrays["long_factors"],
        pids=arrays["pids"],
    )
