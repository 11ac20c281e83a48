"""IVF-RaBitQ: inverted-file partitioning with low-bit residual quantization.

A CPU library for approximate nearest neighbor search. Vectors are clustered
into inverted lists; within each list the normalized, rotated residuals are
quantized to ``bits`` per dimension. Search runs a two-stage scan per probed
cluster: a 1-bit filtering estimate with a pruning lower bound, then an
ex-code refinement for the survivors. Two interchangeable backends compute
the binary inner products of the filter stage: per-query lookup tables, or a
bitwise decomposition of the quantized query (AND + popcount over 32-dim
words).
"""

from ivfrabitq.clustering import Centroids, assign, train_kmeans
from ivfrabitq.codec import (
    LongFactors,
    PackedPlane,
    QuantizationParams,
    ShortFactors,
    compute_factors,
    normalize_residual,
    pack_excodes,
    pack_interleaved,
    quantize_oracle,
    quantize_vector,
    split_planes,
    unpack_excodes,
    unpack_interleaved,
)
from ivfrabitq.index import (
    BuildParams,
    IndexFormatError,
    IvfRabitqIndex,
    build_index,
    load_index,
    save_index,
)
from ivfrabitq.io import read_fvecs, read_ivecs, write_fvecs, write_ivecs
from ivfrabitq.linalg import Rotation, exact_knn, gen_rotation, rotate
from ivfrabitq.search import (
    QueryState,
    SearchParams,
    build_luts,
    cluster_local_search,
    estimate_stage1,
    ip_bitwise,
    ip_lut,
    merge_topk,
    prepare_query,
    refine_stage2,
    schedule_probes,
    search_batch,
    select_clusters,
)

__version__ = "0.1.0"

__all__ = [
    "Centroids",
    "assign",
    "train_kmeans",
    "LongFactors",
    "PackedPlane",
    "QuantizationParams",
    "ShortFactors",
    "compute_factors",
    "normalize_residual",
    "pack_excodes",
    "pack_interleaved",
    "quantize_oracle",
    "quantize_vector",
    "split_planes",
    "unpack_excodes",
    "unpack_interleaved",
    "BuildParams",
    "IndexFormatError",
    "IvfRabitqIndex",
    "build_index",
    "load_index",
    "save_index",
    "read_fvecs",
    "read_ivecs",
    "write_fvecs",
    "write_ivecs",
    "Rotation",
    "exact_knn",
    "gen_rotation",
    "rotate",
    "QueryState",
    "SearchParams",
    "build_luts",
    "cluster_local_search",
    "estimate_stage1",
    "ip_bitwise",
    "ip_lut",
    "merge_topk",
    "prepare_query",
    "refine_stage2",
    "schedule_probes",
    "search_batch",
    "select_clusters",
]
