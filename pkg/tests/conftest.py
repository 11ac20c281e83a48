"""Shared acceptance workload: seeded synthetic dataset, cached builds and runs.

The dataset is a mixture of 50 anisotropic Gaussian clusters of varying scale
(per-cluster sigma log-uniform in [0.5, 1.5], per-cluster random orientation,
exponentially decaying axis scales) in 128 dimensions, with 1000 held-out
queries drawn from the same mixture. Everything is fixed by one seed.
"""

import numpy as np
import pytest

from ivfrabitq.codec import QuantizationParams
from ivfrabitq.index import BuildParams, build_index
from ivfrabitq.linalg import exact_knn
from ivfrabitq.search import SearchParams, search_batch

WORKLOAD_SEED = 20260810
N_BASE = 100_000
N_QUERIES = 1_000
DIMS = 128
N_BLOBS = 50
N_CLUSTERS = 316
K = 10


def make_dataset(
    n_base=N_BASE,
    n_queries=N_QUERIES,
    dims=DIMS,
    n_blobs=N_BLOBS,
    seed=WORKLOAD_SEED,
    tau=12.0,
):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, (n_blobs, dims))
    sigmas = np.exp(rng.uniform(np.log(0.5), np.log(1.5), n_blobs))
    decay = np.exp(-np.arange(dims) / tau)
    weights = rng.dirichlet(np.full(n_blobs, 5.0))
    counts = rng.multinomial(n_base, weights)
    q_counts = rng.multinomial(n_queries, weights)
    parts, q_parts = [], []
    for j in range(n_blobs):
        basis, _ = np.linalg.qr(rng.standard_normal((dims, dims)))
        cov_sqrt = basis * (sigmas[j] * decay)[np.newaxis, :]
        parts.append(centers[j] + rng.standard_normal((counts[j], dims)) @ cov_sqrt.T)
        q_parts.append(centers[j] + rng.standard_normal((q_counts[j], dims)) @ cov_sqrt.T)
    base = np.vstack(parts).astype(np.float32)
    rng.shuffle(base)
    queries = np.vstack(q_parts).astype(np.float32)
    rng.shuffle(queries)
    return base, queries


class Workload:
    """Lazy, memoized dataset + ground truth + indexes + search runs."""

    def __init__(self):
        self._data = None
        self._gt = None
        self._indexes = {}
        self._results = {}

    @property
    def base(self):
        if self._data is None:
            self._data = make_dataset()
        return self._data[0]

    @property
    def queries(self):
        if self._data is None:
            self._data = make_dataset()
        return self._data[1]

    @property
    def gt_ids(self):
        if self._gt is None:
            self._gt = exact_knn(self.base, self.queries, K)[0]
        return self._gt

    def index(self, bits):
        if bits not in self._indexes:
            params = BuildParams(
                n_clusters=N_CLUSTERS,
                quant=QuantizationParams(bits=bits),
                kmeans_iters=25,
                train_fraction=0.25,
                seed=1,
            )
            self._indexes[bits] = build_index(self.base, params)
        return self._indexes[bits]

    def results(self, bits, mode="lut", n_probe=N_CLUSTERS, prune=True, workers=None):
        key = (bits, mode, n_probe, prune, workers)
        if key not in self._results:
            params = SearchParams(k=K, n_probe=n_probe, ip_mode=mode, prune=prune)
            self._results[key] = search_batch(
                self.queries, self.index(bits), params, workers=workers
            )
        return self._results[key]

    def recall(self, results):
        hits = 0
        for (ids, _), truth in zip(results, self.gt_ids):
            hits += len(set(ids.tolist()) & set(truth.tolist()))
        return hits / (len(results) * K)


@pytest.fixture(scope="session")
def workload():
    return Workload()
