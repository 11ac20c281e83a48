"""The two filter-stage backends side by side.

The lookup-table backend sums per-4-dimension tables built from the float
query. The bitwise backend quantizes the query to a few signed bits and
computes inner products with AND + popcount over 32-dimension words. Both
feed the same refinement, so their results track each other closely.
"""

import time

import numpy as np

from ivfrabitq import (
    BuildParams,
    QuantizationParams,
    SearchParams,
    build_index,
    exact_knn,
    search_batch,
)

rng = np.random.default_rng(11)
dims = 96
centers = rng.normal(0, 1.0, (12, dims))
base = np.vstack([rng.normal(c, 0.35, (2500, dims)) for c in centers]).astype(np.float32)
queries = np.vstack([rng.normal(c, 0.35, (15, dims)) for c in centers]).astype(np.float32)

index = build_index(
    base,
    BuildParams(n_clusters=60, quant=QuantizationParams(bits=7), kmeans_iters=10, seed=2),
)
k = 10
gt_ids, _ = exact_knn(base, queries, k)


def run(mode, n_probe, query_bits=4):
    sp = SearchParams(k=k, n_probe=n_probe, ip_mode=mode, query_bits=query_bits)
    t0 = time.perf_counter()
    results = search_batch(queries, index, sp)
    dt = (time.perf_counter() - t0) * 1000 / len(queries)
    hits = sum(
        len(set(ids.tolist()) & set(truth.tolist()))
        for (ids, _), truth in zip(results, gt_ids)
    )
    return hits / (len(results) * k), dt


print("n_probe     lut recall (ms)     bitwise recall (ms)    gap")
for n_probe in (2, 4, 8, 16, 60):
    r_lut, t_lut = run("lut", n_probe)
    r_bw, t_bw = run("bitwise", n_probe)
    print(
        f"{n_probe:7d}     {r_lut:.4f} ({t_lut:5.2f})      "
        f"{r_bw:.4f} ({t_bw:5.2f})      {abs(r_lut - r_bw):.4f}"
    )

print("\nquery bits in bitwise mode (n_probe=16):")
for query_bits in (2, 3, 4, 6, 8):
    r, t = run("bitwise", 16, query_bits)
    print(f"  query_bits={query_bits}: recall={r:.4f}")
