"""Inside one cluster scan: filter estimates, lower bounds, and refinement.

Stage 1 estimates every member's distance from its 1-bit code; a lower bound
below the running threshold keeps the vector alive. Stage 2 reads the ex-code
and produces the estimate that actually ranks candidates. This script shows
how tight each stage is against the true distances.
"""

import numpy as np

from ivfrabitq import BuildParams, QuantizationParams, SearchParams, build_index
from ivfrabitq.search import _prepare_from_rotated, estimate_stage1, ip_lut

rng = np.random.default_rng(5)
dims = 64
base = rng.normal(0, 1.0, (2000, dims)).astype(np.float32)
index = build_index(
    base,
    BuildParams(n_clusters=1, quant=QuantizationParams(bits=6), kmeans_iters=2, seed=0),
)

query = rng.normal(0, 1.0, dims)
params = SearchParams(k=10, n_probe=1)
q_rot = index.rotation.astype(np.float64) @ query
state = _prepare_from_rotated(q_rot, dims, params, index.eps_bound)

centroid = np.asarray(index.centroids.values[0], dtype=np.float64)
d_qc2 = float((q_rot - centroid) @ (q_rot - centroid))

ip = ip_lut(index.msb_nibbles, state.luts)
est1, lb1 = estimate_stage1(ip, index.short_factors, state, d_qc2)

from ivfrabitq.search import _refine_from_codes

est2 = _refine_from_codes(index.code_values, index.long_factors, state, d_qc2, index.bits)

true2 = np.sum((base[index.pids.astype(np.int64)] - query.astype(np.float32)) ** 2, axis=1)

err1 = np.abs(est1 - true2) / true2
err2 = np.abs(est2 - true2) / true2
print(f"stage-1 mean relative error: {err1.mean():.4f}")
print(f"refined mean relative error: {err2.mean():.4f}")
print(f"lower bound holds (lb <= true) for {(lb1 <= true2 + 1e-9).mean() * 100:.2f}% of members")

top = np.argsort(true2)[:10]
print("\n        true     stage-1    bound    refined")
for i in top:
    print(f"  {true2[i]:9.3f} {est1[i]:9.3f} {lb1[i]:9.3f} {est2[i]:9.3f}")
