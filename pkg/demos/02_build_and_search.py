"""End to end: build an index over a clustered dataset and run batched queries.

Recall is measured against exact brute force. The probe count trades accuracy
for work: each query scans only its n_probe nearest inverted lists.
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

rng = np.random.default_rng(1)
dims, n_blobs = 32, 10
centers = rng.normal(0, 1.0, (n_blobs, dims))
base = np.vstack([rng.normal(c, 0.3, (3000, dims)) for c in centers]).astype(np.float32)
queries = np.vstack([rng.normal(c, 0.3, (20, dims)) for c in centers]).astype(np.float32)
print(f"dataset: {base.shape[0]} vectors, {dims} dims, {n_blobs} blobs")

t0 = time.perf_counter()
index = build_index(
    base,
    BuildParams(n_clusters=64, quant=QuantizationParams(bits=8), kmeans_iters=10, seed=3),
)
print(f"index built in {time.perf_counter() - t0:.1f}s "
      f"({index.n_clusters} lists, {index.bits} bits/dim)")

k = 10
gt_ids, _ = exact_knn(base, queries, k)


def recall(results):
    hits = sum(
        len(set(ids.tolist()) & set(truth.tolist()))
        for (ids, _), truth in zip(results, gt_ids)
    )
    return hits / (len(results) * k)


print("\nprobe count vs recall@10:")
for n_probe in (1, 2, 4, 8, 16, 64):
    t0 = time.perf_counter()
    results = search_batch(queries, index, SearchParams(k=k, n_probe=n_probe))
    dt = (time.perf_counter() - t0) * 1000 / len(queries)
    print(f"  n_probe={n_probe:3d}: recall={recall(results):.3f}  ({dt:.2f} ms/query)")
