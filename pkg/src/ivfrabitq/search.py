"""Batched query pipeline: rotation, cluster selection, two-stage cluster scans.

A search is organized as (query, cluster) probe pairs. For each pair, one
logical pass over the cluster computes a 1-bit distance estimate and a lower
bound per vector, prunes vectors whose lower bound exceeds the query's
running threshold (the current K-th best distance), refines the survivors
with the ex-code, and keeps the local top-K. Local results are merged into
the query's global top-K, which tightens the threshold for later probes.

Two backends compute the filter stage's binary inner products:

* ``lut``    -- per-query lookup tables over 4-dimension blocks; an inner
  product is table lookups plus a summation.
* ``bitwise`` -- the query is quantized to signed integers and decomposed
  into bit planes; inner products become AND + popcount over 32-dim words.

Concurrency contract: the index and per-query state are read-shared; each
query's probes run in ascending cluster id (the schedule order restricted to
that query), so its threshold trajectory, and therefore the final result, is
identical for every worker count. Pruning against a stale (larger) threshold
can only admit extra candidates, never drop the eventual top-K.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ivfrabitq.clustering import Centroids
from ivfrabitq.codec import LongFactors, ShortFactors
from ivfrabitq.index import IvfRabitqIndex, default_workers

__all__ = [
    "SearchParams",
    "QueryState",
    "prepare_query",
    "select_clusters",
    "schedule_probes",
    "ip_bitwise",
    "build_luts",
    "ip_lut",
    "nibbles_from_bits",
    "estimate_stage1",
    "refine_stage2",
    "cluster_local_search",
    "merge_topk",
    "search_batch",
]

_LUT_BLOCK = 4  # dimensions per lookup table


@dataclass(frozen=True)
class SearchParams:
    """Per-search knobs.

    ``query_bits`` only matters in bitwise mode. ``refine`` is forced off for
    1-bit indexes (there is no ex-code to read). ``prune=False`` pins every
    threshold at +inf, scanning all probed vectors; used to measure the
    recall cost of pruning.
    """

    k: int
    n_probe: int
    ip_mode: str = "lut"
    query_bits: int = 4
    refine: bool = True
    prune: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.n_probe < 1:
            raise ValueError(f"n_probe must be >= 1, got {self.n_probe}")
        if self.ip_mode not in ("lut", "bitwise"):
            raise ValueError(f"ip_mode must be 'lut' or 'bitwise', got {self.ip_mode!r}")
        if not 2 <= self.query_bits <= 8:
            raise ValueError(f"query_bits must be in [2, 8], got {self.query_bits}")


@dataclass
class QueryState:
    """Per-query derived data, reused across all of the query's probes.

    ``threshold`` is the running K-th best squared distance; it starts at
    +inf and never increases during a search.
    """

    q_rot: np.ndarray  # (dims,) float64, rotated query
    sum_q: float  # sum of q_rot components
    delta_q: float = 1.0  # query quantization scale (bitwise mode)
    q_hat: np.ndarray | None = None  # (dims,) int32 quantized query (bitwise)
    planes: np.ndarray | None = None  # (query_bits, groups) uint32 bit planes
    luts: np.ndarray | None = None  # (blocks, 16) float32 tables (lut mode)
    code_sum_q: float = 0.0  # query sum on the binary ip's own scale
    ip_margin: float = 0.0  # query-rounding error margin on the binary ip (bitwise)
    threshold: float = math.inf

    def __post_init__(self) -> None:
        if not self.code_sum_q:
            self.code_sum_q = self.sum_q


def _pack_bit_rows(rows: np.ndarray, dims: int) -> np.ndarray:
    """Pack (k, dims) 0/1 rows into (k, ceil(dims/32)) uint32 words, LSB-first."""
    groups = (dims + 31) // 32
    padded = np.zeros((rows.shape[0], groups * 32), dtype=np.uint8)
    padded[:, :dims] = rows
    return np.ascontiguousarray(np.packbits(padded, axis=1, bitorder="little")).view("<u4")


def build_luts(q_rot: np.ndarray, block: int = _LUT_BLOCK) -> np.ndarray:
    """Per-query lookup tables: ``L[j][k] = sum of q_rot over the bits set in k``.

    Bit 0 of the table key corresponds to the first dimension of block ``j``,
    matching the packed-word bit order. Dimensions are padded with zeros up
    to the packed 32-dim boundary, so table indices derived from padded words
    stay in range (padding entries are all zero). Values are single
    precision.
    """
    q_rot = np.asarray(q_rot, dtype=np.float64)
    dims = q_rot.size
    padded_dims = ((dims + 31) // 32) * 32 if dims % 32 else dims
    padded = np.zeros(padded_dims if padded_dims else block, dtype=np.float64)
    padded[:dims] = q_rot
    blocks = padded.reshape(-1, block)
    keys = np.arange(2**block, dtype=np.uint32)
    patterns = ((keys[:, np.newaxis] >> np.arange(block)) & 1).astype(np.float64)
    return (blocks @ patterns.T).astype(np.float32)


def nibbles_from_bits(bits_matrix: np.ndarray) -> np.ndarray:
    """Group (n, dims) 0/1 rows into 4-dim nibble indices, padded with zeros."""
    bits_matrix = np.atleast_2d(np.asarray(bits_matrix, dtype=np.uint8))
    n, dims = bits_matrix.shape
    padded_dims = ((dims + 31) // 32) * 32 if dims % 32 else dims
    padded = np.zeros((n, max(padded_dims, _LUT_BLOCK)), dtype=np.uint8)
    padded[:, :dims] = bits_matrix
    weights = (1 << np.arange(_LUT_BLOCK)).astype(np.uint8)
    return padded.reshape(n, -1, _LUT_BLOCK) @ weights


def ip_lut(nibbles: np.ndarray, luts: np.ndarray) -> np.ndarray | float:
    """Binary-code x real-query inner product via table lookups plus a sum.

    ``nibbles`` is (blocks,) for one vector or (n, blocks); returns float64.
    """
    nibbles = np.asarray(nibbles)
    single = nibbles.ndim == 1
    nib = np.atleast_2d(nibbles)
    blocks = luts.shape[0]
    if nib.shape[1] != blocks:
        raise ValueError(f"nibble count {nib.shape[1]} != table count {blocks}")
    flat = luts.reshape(-1)
    idx = nib.astype(np.int32) + (np.arange(blocks, dtype=np.int32) * luts.shape[1])
    out = np.take(flat, idx).sum(axis=1, dtype=np.float64)
    return float(out[0]) if single else out


def ip_bitwise(words: np.ndarray, planes: np.ndarray, query_bits: int) -> np.ndarray | int:
    """Binary-code x quantized-query inner product via AND + popcount.

    ``words`` holds the packed 1-bit code, (groups,) for one vector or
    (groups, n) for a cluster slice; ``planes`` is (query_bits, groups) with
    the two's-complement bit planes of the quantized query (the last plane is
    the sign plane). Returns the exact integer inner product.
    """
    words = np.asarray(words, dtype=np.uint32)
    single = words.ndim == 1
    w = words[:, np.newaxis] if single else words
    if planes.shape != (query_bits, w.shape[0]):
        raise ValueError(
            f"planes shape {planes.shape} != ({query_bits}, {w.shape[0]})"
        )
    counts = np.bitwise_count(w[np.newaxis, :, :] & planes[:, :, np.newaxis])
    counts = counts.sum(axis=1, dtype=np.int64)  # (query_bits, n)
    weights = (1 << np.arange(query_bits, dtype=np.int64))
    weights[-1] = -weights[-1]
    out = weights @ counts
    return int(out[0]) if single else out


def _prepare_from_rotated(
    q_rot: np.ndarray, dims: int, params: SearchParams, eps_bound: float = 0.0
) -> QueryState:
    state = QueryState(q_rot=q_rot, sum_q=float(q_rot.sum()))
    if params.ip_mode == "lut":
        state.luts = build_luts(q_rot)
        return state
    half = 1 << (params.query_bits - 1)
    max_abs = float(np.abs(q_rot).max()) if dims else 0.0
    delta = max_abs / (half - 1) if max_abs > 0.0 else 1.0
    q_hat = np.clip(np.round(q_rot / delta), -half, half - 1).astype(np.int32)
    twos = (q_hat & ((1 << params.query_bits) - 1)).astype(np.uint32)
    rows = np.empty((params.query_bits, dims), dtype=np.uint8)
    for j in range(params.query_bits):
        rows[j] = (twos >> j) & 1
    state.delta_q = delta
    state.q_hat = q_hat
    state.planes = _pack_bit_rows(rows, dims)
    # Recentering the 0/1 code against the quantized query's own component
    # sum keeps the rounding error zero-mean (each dimension contributes
    # +-eps/2 with a random sign), instead of inheriting the query's total
    # rounding bias.
    state.code_sum_q = delta * float(q_hat.sum())
    # That zero-mean error has std about delta * sqrt(dims)/4; the pruning
    # bound widens by eps_bound of a conservative estimate, combined in
    # quadrature with the code-randomness margin, so bitwise filtering stays
    # as safe as the lookup-table path.
    state.ip_margin = eps_bound * delta * math.sqrt(dims / 24.0)
    return state


def prepare_query(q: np.ndarray, index: IvfRabitqIndex, params: SearchParams) -> QueryState:
    """Rotate one query and derive the representation its probes will reuse."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dims,):
        raise ValueError(f"query shape {q.shape} != ({index.dims},)")
    q_rot = index.rotation.astype(np.float64) @ q
    return _prepare_from_rotated(q_rot, index.dims, params, index.eps_bound)


def select_clusters(
    q_rot: np.ndarray, centroids: Centroids, n_probe: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``n_probe`` nearest centroids per query, ascending distance.

    Computed from the squared-distance identity ``|q|^2 + |c|^2 - 2 <q, c>``
    with float64 accumulation; ties go to the smaller cluster id. Returns
    ``(ids, sq_dists)`` of shape (n_queries, n_probe); the distances are
    reused by the stage-1 estimates.
    """
    q_rot = np.atleast_2d(np.asarray(q_rot, dtype=np.float64))
    if n_probe > centroids.n_clusters:
        raise ValueError(f"n_probe={n_probe} exceeds {centroids.n_clusters} clusters")
    values = np.asarray(centroids.values, dtype=np.float64)
    q_sq = np.einsum("ij,ij->i", q_rot, q_rot)
    d = q_sq[:, np.newaxis] + centroids.squared_norms[np.newaxis, :] - 2.0 * (q_rot @ values.T)
    np.maximum(d, 0.0, out=d)
    order = np.argsort(d, axis=1, kind="stable")[:, :n_probe]
    return order.astype(np.int64), np.take_along_axis(d, order, axis=1)


def schedule_probes(pairs):
    """Stable-sort (query id, cluster id, ...) pairs by cluster id, then query id.

    Grouping probes of the same cluster together improves data locality; for
    any single query the resulting relative order is ascending cluster id.
    """
    return sorted(pairs, key=lambda p: (p[1], p[0]))


def _short_cols(sf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(sf, ShortFactors):
        return np.float64(sf.add), np.float64(sf.scale), np.float64(sf.err)
    arr = np.asarray(sf, dtype=np.float64)
    return arr[..., 0], arr[..., 1], arr[..., 2]


def _long_cols(lf) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(lf, LongFactors):
        return np.float64(lf.add), np.float64(lf.scale)
    arr = np.asarray(lf, dtype=np.float64)
    return arr[..., 0], arr[..., 1]


def estimate_stage1(ip_binary, sf, state: QueryState, d_qc2):
    """1-bit distance estimate and pruning lower bound; both clamped at zero.

    ``ip_binary`` is ``<msb, q_rot>`` (lut mode) or ``delta_q *`` the integer
    inner product (bitwise mode). Subtracting half the query component sum
    recenters the 0/1 code onto the signed binary code; the sum is taken on
    the same scale as the inner product (the quantized query's own sum in
    bitwise mode), and the centroid term is already folded into the additive
    factor.
    """
    add, scale, err = _short_cols(sf)
    ip_signed = np.asarray(ip_binary, dtype=np.float64) - 0.5 * state.code_sum_q
    est2 = np.maximum(add + d_qc2 - scale * ip_signed, 0.0)
    margin = err * np.sqrt(d_qc2)
    if state.ip_margin:
        margin = np.sqrt(margin * margin + (scale * state.ip_margin) ** 2)
    lb2 = np.maximum(est2 - margin, 0.0)
    return est2, lb2


def refine_stage2(excode, ip_binary, lf, state: QueryState, d_qc2, bits: int):
    """Refined distance estimate from the full code, clamped at zero.

    ``excode`` holds per-dimension ex-code values ((dims,) or (n, dims));
    ``ip_binary`` is the stage-1 binary inner product on the query's original
    scale: ``<msb, q_rot>`` in lut mode, ``delta_q *`` the integer inner
    product in bitwise mode. The full-code inner product is reassembled from
    the identity ``<u, .> = 2**(bits-1) <msb, .> + <ex, .>``; the ex-code
    part always uses the rotated float query, so the query-quantization error
    of bitwise mode never touches the low bits of the refined estimate.
    """
    if bits < 2:
        raise ValueError("refinement requires bits >= 2 (no ex-code exists for 1-bit indexes)")
    add, scale = _long_cols(lf)
    ex = np.atleast_2d(np.asarray(excode, dtype=np.float64))
    k_b = (2**bits - 1) / 2.0
    ip_u = (2 ** (bits - 1)) * np.asarray(ip_binary, dtype=np.float64) + ex @ state.q_rot
    est2 = np.maximum(add + d_qc2 - scale * (ip_u - k_b * state.sum_q), 0.0)
    if np.asarray(excode).ndim == 1:
        return float(est2[0]) if est2.ndim else float(est2)
    return est2


def _refine_from_codes(codes, lf, state: QueryState, d_qc2, bits: int):
    """Pipeline refinement: full-code float inner product against the query.

    ``codes`` are decoded unsigned code values, (n, dims) float32. Same
    estimator as :func:`refine_stage2` with an exact binary inner product
    (``<u, q_rot>`` computed directly instead of via the msb/ex split).
    """
    add, scale = _long_cols(lf)
    k_b = (2**bits - 1) / 2.0
    ip_u = codes @ state.q_rot
    return np.maximum(add + d_qc2 - scale * (ip_u - k_b * state.sum_q), 0.0)


def cluster_local_search(
    state: QueryState,
    index: IvfRabitqIndex,
    cluster: int,
    params: SearchParams,
    threshold: float = math.inf,
    d_qc2: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Scan one cluster for one query; returns the local top-K ``(ids, dists)``.

    One logical pass: stage-1 estimates for every vector, pruning of vectors
    whose lower bound exceeds ``threshold``, ex-code refinement of the
    survivors (unless refinement is off or the index is 1-bit), then the
    local top-K ascending by (distance, id).
    """
    lo, hi = index.cluster_range(cluster)
    n_c = hi - lo
    if n_c == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if d_qc2 is None:
        diff = state.q_rot - np.asarray(index.centroids.values[cluster], dtype=np.float64)
        d_qc2 = float(diff @ diff)

    if params.ip_mode == "lut":
        raw = ip_lut(index.msb_nibbles[lo:hi], state.luts)
        ip_binary = raw
    else:
        raw = ip_bitwise(index.cluster_words(cluster), state.planes, params.query_bits)
        ip_binary = state.delta_q * raw
    est2, lb2 = estimate_stage1(ip_binary, index.short_factors[lo:hi], state, d_qc2)

    keep = lb2 <= threshold
    if not keep.any():
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    rows = np.flatnonzero(keep)

    do_refine = params.refine and index.bits >= 2
    if do_refine:
        dists = _refine_from_codes(
            index.code_values[lo + rows],
            index.long_factors[lo + rows],
            state,
            d_qc2,
            index.bits,
        )
    else:
        dists = est2[rows]
    pids = index.pids[lo + rows].astype(np.int64)
    order = np.lexsort((pids, dists))[: params.k]
    return pids[order], np.asarray(dists)[order]


def merge_topk(
    lists: list[tuple[np.ndarray, np.ndarray]], k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Merge per-cluster candidate lists into the K smallest, ties by id."""
    if not lists:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    ids = np.concatenate([np.asarray(i, dtype=np.int64) for i, _ in lists])
    dists = np.concatenate([np.asarray(d, dtype=np.float64) for _, d in lists])
    order = np.lexsort((ids, dists))[:k]
    return ids[order], dists[order]


def search_batch(
    queries: np.ndarray,
    index: IvfRabitqIndex,
    params: SearchParams,
    workers: int | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Approximate K nearest neighbors for each query row.

    Returns one ``(ids, dists)`` pair per query (fewer than K entries if the
    probed clusters hold fewer vectors). Queries run in parallel across
    workers; each query's probes run sequentially in ascending cluster id --
    the probe-schedule order restricted to that query -- so results are
    independent of the worker count. The worker default comes from the
    IVRQ_THREADS environment variable.
    """
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    if q.shape[1] != index.dims:
        raise ValueError(f"query dims {q.shape[1]} != index dims {index.dims}")
    if params.n_probe > index.n_clusters:
        raise ValueError(
            f"n_probe={params.n_probe} exceeds {index.n_clusters} clusters"
        )
    if workers is None:
        workers = default_workers()

    # Materialize the lazy per-index views up front so worker threads never
    # race to build them.
    if params.ip_mode == "lut":
        _ = index.msb_nibbles
    if params.refine and index.bits >= 2:
        _ = index.code_values

    q_rot = q @ index.rotation.T.astype(np.float64)
    cluster_ids, cluster_d2 = select_clusters(q_rot, index.centroids, params.n_probe)

    def run_query(i: int) -> tuple[np.ndarray, np.ndarray]:
        state = _prepare_from_rotated(q_rot[i], index.dims, params, index.eps_bound)
        # Ascending cluster id: the global (cluster, query) schedule restricted
        # to this query.
        order = np.argsort(cluster_ids[i], kind="stable")
        pool: tuple[np.ndarray, np.ndarray] = (
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
        for j in order:
            threshold = state.threshold if params.prune else math.inf
            local = cluster_local_search(
                state,
                index,
                int(cluster_ids[i, j]),
                params,
                threshold,
                float(cluster_d2[i, j]),
            )
            if local[0].size:
                pool = merge_topk([pool, local], params.k)
                if pool[0].size >= params.k:
                    state.threshold = float(pool[1][params.k - 1])
        return pool

    n_q = q.shape[0]
    if workers > 1 and n_q > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run_query, range(n_q)))
    return [run_query(i) for i in range(n_q)]
