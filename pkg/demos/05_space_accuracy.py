"""Space vs accuracy: sweeping the code width.

Each added bit per dimension doubles nothing but the ex-code: storage grows
linearly while the refined estimate's error shrinks roughly geometrically.
1-bit indexes skip refinement entirely (there is no ex-code to read).
"""

import os
import tempfile

import numpy as np

from ivfrabitq import (
    BuildParams,
    QuantizationParams,
    SearchParams,
    build_index,
    exact_knn,
    save_index,
    search_batch,
)

rng = np.random.default_rng(4)
dims = 64
centers = rng.normal(0, 1.0, (8, dims))
base = np.vstack([rng.normal(c, 0.3, (2500, dims)) for c in centers]).astype(np.float32)
queries = np.vstack([rng.normal(c, 0.3, (25, dims)) for c in centers]).astype(np.float32)
k = 10
gt_ids, _ = exact_knn(base, queries, k)

raw_bytes = base.size * 4
print(f"raw dataset: {raw_bytes / 1e6:.1f} MB")
print("\nbits   index size   ratio    recall@10 (full probe)")
for bits in (1, 2, 3, 4, 5, 6, 7, 8):
    index = build_index(
        base,
        BuildParams(n_clusters=45, quant=QuantizationParams(bits=bits), kmeans_iters=8, seed=1),
    )
    with tempfile.NamedTemporaryFile(suffix=".idx", delete=False) as f:
        path = f.name
    save_index(index, path)
    size = os.path.getsize(path)
    os.unlink(path)
    results = search_batch(queries, index, SearchParams(k=k, n_probe=45))
    hits = sum(
        len(set(ids.tolist()) & set(truth.tolist()))
        for (ids, _), truth in zip(results, gt_ids)
    )
    recall = hits / (len(results) * k)
    print(f"  {bits}    {size / 1e6:7.2f} MB   {size / raw_bytes:5.2f}    {recall:.4f}")
