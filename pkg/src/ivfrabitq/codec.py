"""Low-bit quantization of normalized, rotated residual vectors.

A residual is normalized to a unit vector, rotated, and encoded as a
``bits``-per-dimension unsigned code ``u``; the signed code is
``u - (2**bits - 1) / 2`` componentwise. The encoder searches a rescaling
factor ``t``: it rounds ``t * o`` onto the signed integer grid and keeps the
``t`` maximizing the cosine between the rounded code and ``o``. The search
runs in two phases (a coarse uniform grid, then a fine grid around the coarse
winner), which approximates the exhaustive sweep of all critical rescaling
factors at a fixed, data-independent cost.

The code splits into the per-dimension most significant bit (the 1-bit code,
used by the cheap filtering estimate) and the remaining low bits (the ex-code,
read only during refinement). Per-vector scalar factors turn binary / full-code
inner products into squared-distance estimates and lower bounds.

All operations are pure; quantizing different vectors is embarrassingly
parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantizationParams",
    "ShortFactors",
    "LongFactors",
    "PackedPlane",
    "normalize_residual",
    "normalize_residuals",
    "quantize_vector",
    "quantize_batch",
    "quantize_oracle",
    "split_planes",
    "compute_factors",
    "compute_factors_batch",
    "pack_interleaved",
    "unpack_interleaved",
    "pack_excodes",
    "unpack_excodes",
    "excode_bytes_per_vector",
]

# Exhaustive-enumeration guard for the test-only oracle.
_ORACLE_MAX_FACTORS = 1 << 15


@dataclass(frozen=True)
class QuantizationParams:
    """Code width and rescaling-search parameters.

    ``eps_bound`` scales the error bound attached to the 1-bit distance
    estimate; 0 disables the margin entirely (every lower bound equals the
    estimate).
    """

    bits: int
    n_coarse: int = 64
    n_fine: int = 32
    eps_bound: float = 1.9

    def __post_init__(self) -> None:
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")
        if self.n_coarse < 2 or self.n_fine < 2:
            raise ValueError("n_coarse and n_fine must both be >= 2")
        if not math.isfinite(self.eps_bound) or self.eps_bound < 0:
            raise ValueError(f"eps_bound must be finite and >= 0, got {self.eps_bound}")


@dataclass(frozen=True)
class ShortFactors:
    """Per-vector scalars for the 1-bit (filter) distance estimate.

    ``add`` is an additive constant in squared-distance units, ``scale``
    multiplies the binary inner product, and ``err`` scales the distance
    margin used for the pruning lower bound. A degenerate residual (zero
    distance to its centroid) has all three set to zero.
    """

    add: float
    scale: float
    err: float


@dataclass(frozen=True)
class LongFactors:
    """Per-vector scalars for the full-code (refinement) distance estimate."""

    add: float
    scale: float


@dataclass(frozen=True)
class PackedPlane:
    """Interleaved 32-dim bit packing of one bit per (vector, dimension).

    Dimensions are grouped 32 at a time; for group ``g`` the words of all
    ``n`` vectors are contiguous before group ``g + 1`` starts, i.e. the word
    for (group g, vector v) sits at ``words[g * n + v]``. Within a word,
    bit ``k`` (LSB first) carries dimension ``32 * g + k``; padding bits
    beyond ``dims`` are zero.
    """

    n: int
    dims: int
    words: np.ndarray  # (n * ceil(dims / 32),) uint32

    @property
    def words_per_vector(self) -> int:
        return (self.dims + 31) // 32


def normalize_residual(o_r: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize ``o_r`` against the center ``c``: returns ``(o, d)``.

    ``d`` is the Euclidean distance from ``o_r`` to ``c`` and ``o`` the unit
    direction; when ``d == 0`` the record is degenerate and ``o`` is the zero
    vector.
    """
    o_r = np.asarray(o_r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if o_r.shape != c.shape:
        raise ValueError(f"shape mismatch: {o_r.shape} vs {c.shape}")
    if not (np.isfinite(o_r).all() and np.isfinite(c).all()):
        raise ValueError("non-finite input")
    diff = o_r - c
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return np.zeros_like(diff), 0.0
    return diff / d, d


def normalize_residuals(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`normalize_residual`; returns ``(O, d)`` arrays."""
    x = np.asarray(x, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if x.shape != centers.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {centers.shape}")
    if not (np.isfinite(x).all() and np.isfinite(centers).all()):
        raise ValueError("non-finite input")
    diff = x - centers
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    safe = np.where(d == 0.0, 1.0, d)
    o = diff / safe[:, np.newaxis]
    o[d == 0.0] = 0.0
    return o, d


def _check_unit_rows(o: np.ndarray) -> None:
    norms = np.sqrt(np.einsum("ij,ij->i", o, o, dtype=np.float64))
    bad = (norms != 0.0) & (np.abs(norms - 1.0) > 1e-4)
    if bad.any():
        raise ValueError(
            f"input rows must be unit vectors (or zero): worst norm {norms[bad].max():.6f}"
        )


def _round_codes(o: np.ndarray, t: np.ndarray, bits: int) -> np.ndarray:
    """Nearest signed-grid code to ``t * o`` per row, on the unsigned domain.

    Round-half-up: ``u = clamp(floor(t*o + (2**bits - 1)/2 + 0.5), 0, 2**bits - 1)``.
    Returned as a float array (integer-valued) ready for dot products.
    """
    k_b = (2**bits - 1) / 2.0
    x = t[:, np.newaxis] * o
    x += k_b + 0.5
    np.floor(x, out=x)
    np.clip(x, 0.0, float(2**bits - 1), out=x)
    return x


def _grid_scan(
    o: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    samples: int,
    bits: int,
    best_v: np.ndarray,
    best_t: np.ndarray,
) -> None:
    """Evaluate a uniform grid of rescaling factors, updating the running best.

    Updates are strictly-greater, so the earliest (smallest t) optimum wins.
    """
    k_b = (2**bits - 1) / 2.0
    step = (hi - lo) / (samples - 1)
    for s in range(samples):
        t = lo + s * step
        codes = _round_codes(o, t, bits)
        codes -= k_b
        num = np.einsum("ij,ij->i", codes, o, dtype=np.float64)
        den = np.sqrt(np.einsum("ij,ij->i", codes, codes, dtype=np.float64))
        obj = num / den
        upd = obj > best_v
        best_v[upd] = obj[upd]
        best_t[upd] = t[upd]


def quantize_batch(o: np.ndarray, params: QuantizationParams) -> tuple[np.ndarray, np.ndarray]:
    """Quantize unit rows of ``o``; returns ``(codes, t)``.

    ``codes`` is (n, dims) uint8 on the unsigned domain; ``t`` the winning
    rescaling factor per row. Zero rows (degenerate records) get the
    all-midpoint code ``2**(bits-1)`` with ``t = 0``.
    """
    o = np.atleast_2d(np.asarray(o))
    _check_unit_rows(o)
    n, dims = o.shape
    bits = params.bits
    max_abs = np.abs(o).max(axis=1) if dims else np.zeros(n)
    zero = max_abs == 0.0
    if bits == 1:
        # The cosine objective is constant in t for 1-bit codes: the optimum
        # is always the sign pattern.
        u = (o > 0).astype(np.uint8)
        u[zero] = 1
        t = np.where(zero, 0.0, 0.5 / np.where(zero, 1.0, max_abs))
        return u, t

    safe = np.where(zero, 1.0, max_abs)
    # Smallest t at which any coordinate rounds away from the midpoint. The
    # upper end extends past the point where the largest coordinate saturates:
    # for narrow codes the objective keeps improving while smaller coordinates
    # climb levels, so the range is widened by a factor that decays with the
    # code width (calibrated against the exhaustive oracle).
    t_start = 0.5 / safe
    t_end = (2 ** (bits - 1) - 0.5) * (1.0 + 6.0 / 2 ** (bits - 1)) / safe
    best_v = np.full(n, -np.inf)
    best_t = t_start.copy()
    _grid_scan(o, t_start, t_end, params.n_coarse, bits, best_v, best_t)
    delta = (t_end - t_start) / (params.n_coarse - 1)
    lo = np.maximum(t_start, best_t - delta)
    hi = np.minimum(t_end, best_t + delta)
    # The running best carries over, so the result maximizes over both grids.
    _grid_scan(o, lo, hi, params.n_fine, bits, best_v, best_t)
    u = _round_codes(o, best_t, bits).astype(np.uint8)
    u[zero] = np.uint8(2 ** (bits - 1))
    t = np.where(zero, 0.0, best_t)
    return u, t


def quantize_vector(o_prime: np.ndarray, params: QuantizationParams) -> tuple[np.ndarray, float]:
    """Quantize a single unit vector; returns ``(code, t)``."""
    o_prime = np.asarray(o_prime)
    if o_prime.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {o_prime.shape}")
    u, t = quantize_batch(o_prime[np.newaxis, :], params)
    return u[0], float(t[0])


def quantize_oracle(o_prime: np.ndarray, bits: int) -> np.ndarray:
    """Exhaustive quantizer: enumerate every critical rescaling factor.

    Test-only reference. Evaluates the rounded code between consecutive
    critical factors (where the rounded code changes) and returns the code
    with the globally maximal cosine; exact ties resolve to the
    lexicographically smallest unsigned code. Refuses inputs whose critical
    set is too large to enumerate.
    """
    o = np.asarray(o_prime, dtype=np.float64)
    if o.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {o.shape}")
    dims = o.size
    if dims * 2 ** (bits - 1) > _ORACLE_MAX_FACTORS:
        raise ValueError(
            f"critical-factor count {dims * 2 ** (bits - 1)} exceeds the "
            f"enumeration guard ({_ORACLE_MAX_FACTORS})"
        )
    if not np.any(o != 0.0):
        return np.full(dims, 2 ** (bits - 1), dtype=np.uint8)
    if bits == 1:
        return (o > 0).astype(np.uint8)

    k_b = (2**bits - 1) / 2.0
    # u value encoding the signed level -0.5: the canonical choice for
    # zero coordinates, where both signs give an identical objective.
    u_zero = 2 ** (bits - 1) - 1
    nz = np.abs(o[o != 0.0])
    levels = np.arange(1, 2 ** (bits - 1), dtype=np.float64)
    crit = np.unique((levels[:, np.newaxis] / nz[np.newaxis, :]).ravel())
    if crit.size:
        mids = (crit[:-1] + crit[1:]) / 2.0
        eval_ts = np.concatenate(([crit[0] / 2.0], mids, [crit[-1] + 1.0]))
    else:
        eval_ts = np.array([1.0])

    codes = _round_codes(o, eval_ts, bits)
    codes[:, o == 0.0] = float(u_zero)
    signed = codes - k_b
    num = np.einsum("ij,j->i", signed, o)
    den = np.sqrt(np.einsum("ij,ij->i", signed, signed))
    cos = num / den
    best = int(np.argmax(cos))
    ties = np.flatnonzero(cos == cos[best])
    if ties.size > 1:
        rows = [tuple(codes[i].astype(np.int64)) for i in ties]
        best = int(ties[min(range(ties.size), key=rows.__getitem__)])
    return codes[best].astype(np.uint8)


def split_planes(u: np.ndarray, bits: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Split codes into the per-dimension MSB plane and the ex-code.

    Works on a single code vector or a batch (last axis = dimensions).
    The ex-code is ``None`` when ``bits == 1``.
    """
    u = np.asarray(u, dtype=np.uint8)
    if np.any(u >= 2**bits):
        raise ValueError(f"code value out of range for bits={bits}")
    msb = (u >> (bits - 1)).astype(np.uint8)
    if bits == 1:
        return msb, None
    ex = (u & np.uint8(2 ** (bits - 1) - 1)).astype(np.uint8)
    return msb, ex


def compute_factors_batch(
    u: np.ndarray,
    o: np.ndarray,
    d: np.ndarray,
    c_prime: np.ndarray,
    params: QuantizationParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-vector estimator factors; returns ``(short, long, low_quality)``.

    ``short`` is (n, 3) float64 columns ``(add, scale, err)`` and ``long``
    (n, 2) columns ``(add, scale)``. ``low_quality`` flags rows whose binary
    code had non-positive cosine against the input (the cosine is clamped to
    1e-6 so the pipeline stays total).

    With the signed binary code ``xb = msb - 0.5`` and full signed code
    ``x = u - (2**bits - 1)/2``::

        scale = 2 d / (||xb|| cos_b)         add = d^2 + scale * <xb, c'>
        err   = 2 d eps sqrt((1 - cos_b^2) / (cos_b^2 (dims - 1)))

    and analogously for the long factors with ``x`` in place of ``xb``.
    Degenerate rows (``d == 0``) get all-zero factors.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.uint8))
    o = np.atleast_2d(np.asarray(o, dtype=np.float64))
    c_prime = np.atleast_2d(np.asarray(c_prime, dtype=np.float64))
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    n, dims = o.shape
    if u.shape != (n, dims) or c_prime.shape != (n, dims) or d.shape != (n,):
        raise ValueError("inconsistent shapes across codes, vectors, and centers")
    bits = params.bits
    k_b = (2**bits - 1) / 2.0

    msb = (u >> (bits - 1)).astype(np.float64)
    xb = msb - 0.5
    x = u.astype(np.float64) - k_b
    norm_b = 0.5 * math.sqrt(dims)
    cos_b = np.einsum("ij,ij->i", xb, o) / norm_b
    norm_x = np.sqrt(np.einsum("ij,ij->i", x, x))
    cos_x = np.einsum("ij,ij->i", x, o) / norm_x

    live = d > 0.0
    low_quality = live & (cos_b <= 0.0)
    cos_b = np.maximum(cos_b, 1e-6)
    cos_x = np.maximum(cos_x, 1e-6)

    short = np.zeros((n, 3), dtype=np.float64)
    long = np.zeros((n, 2), dtype=np.float64)
    scale_b = 2.0 * d / (norm_b * cos_b)
    short[:, 1] = scale_b
    short[:, 0] = d * d + scale_b * np.einsum("ij,ij->i", xb, c_prime)
    var = np.maximum(1.0 - cos_b * cos_b, 0.0) / (cos_b * cos_b * max(dims - 1, 1))
    short[:, 2] = 2.0 * d * params.eps_bound * np.sqrt(var)
    scale_x = 2.0 * d / (norm_x * cos_x)
    long[:, 1] = scale_x
    long[:, 0] = d * d + scale_x * np.einsum("ij,ij->i", x, c_prime)
    short[~live] = 0.0
    long[~live] = 0.0
    return short, long, low_quality


def compute_factors(
    u: np.ndarray,
    o_prime: np.ndarray,
    d: float,
    c_prime: np.ndarray,
    params: QuantizationParams,
) -> tuple[ShortFactors, LongFactors]:
    """Single-vector :func:`compute_factors_batch`."""
    short, long, _ = compute_factors_batch(
        np.asarray(u)[np.newaxis, :],
        np.asarray(o_prime)[np.newaxis, :],
        np.array([d]),
        np.asarray(c_prime)[np.newaxis, :],
        params,
    )
    return (
        ShortFactors(add=float(short[0, 0]), scale=float(short[0, 1]), err=float(short[0, 2])),
        LongFactors(add=float(long[0, 0]), scale=float(long[0, 1])),
    )


def pack_interleaved(bits_matrix: np.ndarray) -> PackedPlane:
    """Pack an (n, dims) 0/1 matrix into the interleaved 32-dim word layout."""
    bits_matrix = np.atleast_2d(np.asarray(bits_matrix, dtype=np.uint8))
    n, dims = bits_matrix.shape
    groups = (dims + 31) // 32
    padded = np.zeros((n, groups * 32), dtype=np.uint8)
    padded[:, :dims] = bits_matrix
    packed = np.packbits(padded, axis=1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u4")  # (n, groups)
    return PackedPlane(n=n, dims=dims, words=np.ascontiguousarray(words.T).reshape(-1))


def unpack_interleaved(plane: PackedPlane) -> np.ndarray:
    """Inverse of :func:`pack_interleaved`; returns an (n, dims) 0/1 uint8 matrix."""
    groups = plane.words_per_vector
    if plane.n == 0:
        return np.zeros((0, plane.dims), dtype=np.uint8)
    words = plane.words.reshape(groups, plane.n).T  # (n, groups)
    raw = np.ascontiguousarray(words).view("<u1").reshape(plane.n, groups * 4)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, : plane.dims]


def excode_bytes_per_vector(dims: int, bits: int) -> int:
    """Byte-aligned storage per vector for the (bits - 1)-bit ex-code."""
    return (dims * (bits - 1) + 7) // 8


def pack_excodes(ex: np.ndarray, bits: int) -> np.ndarray:
    """Pack (n, dims) ex-code values into per-vector little-endian byte runs.

    Each dimension contributes its ``bits - 1`` low bits LSB-first; dimensions
    are laid out in order and the stream is padded to whole bytes.
    """
    ex = np.atleast_2d(np.asarray(ex, dtype=np.uint8))
    n, dims = ex.shape
    eb = bits - 1
    if eb == 0:
        return np.zeros((n, 0), dtype=np.uint8)
    stream = (ex[:, :, np.newaxis] >> np.arange(eb, dtype=np.uint8)) & 1
    return np.packbits(stream.reshape(n, dims * eb), axis=1, bitorder="little")


def unpack_excodes(packed: np.ndarray, dims: int, bits: int) -> np.ndarray:
    """Inverse of :func:`pack_excodes`; returns (n, dims) uint8 ex-code values."""
    packed = np.atleast_2d(np.asarray(packed, dtype=np.uint8))
    n = packed.shape[0]
    eb = bits - 1
    if eb == 0:
        return np.zeros((n, dims), dtype=np.uint8)
    bits_stream = np.unpackbits(packed, axis=1, bitorder="little")[:, : dims * eb]
    weights = (1 << np.arange(eb)).astype(np.uint8)
    return bits_stream.reshape(n, dims, eb) @ weights
