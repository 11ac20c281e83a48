"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines. The shared workload (dataset, ground truth, indexes, search runs) is
built once per session and reused across criteria; see conftest.py.
"""

import os
import time

import numpy as np

from ivfrabitq.codec import (
    QuantizationParams,
    compute_factors_batch,
    normalize_residuals,
    pack_interleaved,
    quantize_batch,
    quantize_oracle,
)
from ivfrabitq.index import load_index, save_index
from ivfrabitq.search import (
    SearchParams,
    build_luts,
    estimate_stage1,
    ip_bitwise,
    ip_lut,
    nibbles_from_bits,
    refine_stage2,
    search_batch,
    _prepare_from_rotated,
)

from conftest import K, N_CLUSTERS


class _timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _report(ok: bool, line: str) -> None:
    print(("[PASS] " if ok else "[FAIL] ") + line, flush=True)
    assert ok, line


def test_criterion_01_bitwise_ip_exact():
    rng = np.random.default_rng(101)
    dims_list = (32, 64, 128, 1000)
    bq_list = (2, 4, 8)
    per_cell = 100_000 // (len(dims_list) * len(bq_list)) + 1
    checked = 0
    with _timer() as t:
        for dims in dims_list:
            for bq in bq_list:
                params = SearchParams(k=1, n_probe=1, ip_mode="bitwise", query_bits=bq)
                n_queries = 10
                per_query = per_cell // n_queries + 1
                for _ in range(n_queries):
                    state = _prepare_from_rotated(
                        rng.standard_normal(dims), dims, params
                    )
                    msb = rng.integers(0, 2, (per_query, dims)).astype(np.uint8)
                    plane = pack_interleaved(msb)
                    words = plane.words.reshape(plane.words_per_vector, per_query)
                    got = ip_bitwise(words, state.planes, bq)
                    want = msb.astype(np.int64) @ state.q_hat.astype(np.int64)
                    assert np.array_equal(got, want), f"mismatch at dims={dims} bq={bq}"
                    checked += per_query
    _report(
        t.seconds < 10 and checked >= 100_000,
        f"criterion 1: bitwise inner product exact on {checked} pairs "
        f"(dims {dims_list}, query bits {bq_list}) in {t.seconds:.1f}s",
    )


def test_criterion_02_lut_ip_accuracy():
    rng = np.random.default_rng(102)
    worst = 0.0
    with _timer() as t:
        for dims in (32, 128, 460):
            for _ in range(20):
                q_rot = rng.standard_normal(dims)
                luts = build_luts(q_rot)
                n = 10_000 // 60 + 1
                msb = rng.integers(0, 2, (n, dims)).astype(np.uint8)
                got = ip_lut(nibbles_from_bits(msb), luts)
                want = msb.astype(np.float64) @ q_rot
                err = np.abs(got - want) / np.maximum(np.abs(want), 0.1)
                worst = max(worst, float(err.max()))
    _report(
        worst <= 1e-3 and t.seconds < 5,
        f"criterion 2: lut inner product within 1e-3 relative "
        f"(worst {worst:.2e}) in {t.seconds:.1f}s",
    )


def test_criterion_03_quantizer_vs_oracle():
    rng = np.random.default_rng(20260810)
    n = 1000
    frac_fail = 0.0
    worst = 1.0
    sign_ok = True
    with _timer() as t:
        for dims in (8, 16, 64):
            for bits in range(1, 9):
                o = rng.standard_normal((n, dims))
                o /= np.linalg.norm(o, axis=1)[:, np.newaxis]
                codes, _ = quantize_batch(o, QuantizationParams(bits=bits))
                if bits == 1:
                    sign_ok = sign_ok and np.array_equal(codes, (o > 0).astype(np.uint8))
                k_b = (2**bits - 1) / 2.0
                x = codes.astype(np.float64) - k_b
                cos_grid = np.einsum("ij,ij->i", x, o) / np.sqrt(
                    np.einsum("ij,ij->i", x, x)
                )
                ratios = np.empty(n)
                for i in range(n):
                    u_o = quantize_oracle(o[i], bits)
                    x_o = u_o.astype(np.float64) - k_b
                    cos_o = float(x_o @ o[i]) / float(np.linalg.norm(x_o))
                    ratios[i] = cos_grid[i] / cos_o
                cell_frac = float((ratios < 0.999).mean())
                frac_fail = max(frac_fail, cell_frac)
                worst = min(worst, float(ratios.min()))
    ok = frac_fail <= 0.01 and worst >= 0.99 and sign_ok and t.seconds < 120
    _report(
        ok,
        f"criterion 3: grid search vs oracle, worst cell has {frac_fail * 100:.1f}% "
        f"below 0.999x (min ratio {worst:.5f}, 1-bit sign-exact: {sign_ok}) "
        f"in {t.seconds:.0f}s",
    )


def test_criterion_04_estimator_oracle_equivalence():
    rng = np.random.default_rng(104)
    n, dims, bits = 10_000, 64, 8
    params = QuantizationParams(bits=bits)
    k_b = (2**bits - 1) / 2.0
    with _timer() as t:
        centers = rng.normal(0.0, 1.0, (n, dims))
        vectors = centers + rng.normal(0.0, 0.6, (n, dims))
        queries = centers + rng.normal(0.0, 0.6, (n, dims))
        o, d = normalize_residuals(vectors, centers)
        codes, _ = quantize_batch(o, params)
        short, long, _ = compute_factors_batch(codes, o, d, centers, params)
        sp = SearchParams(k=1, n_probe=1, ip_mode="lut")

        worst_rel = 0.0
        err1 = np.empty(n)
        err2 = np.empty(n)
        msb = (codes >> (bits - 1)).astype(np.float64)
        ex = (codes & (2 ** (bits - 1) - 1)).astype(np.float64)
        x = codes.astype(np.float64) - k_b
        for i in range(n):
            state = _prepare_from_rotated(queries[i], dims, sp)
            d_qc2 = float(np.sum((queries[i] - centers[i]) ** 2))
            nib = nibbles_from_bits(msb[i].astype(np.uint8)[np.newaxis, :])[0]
            ip_b = ip_lut(nib, state.luts)
            est1, _ = estimate_stage1(ip_b, short[i], state, d_qc2)
            est2 = refine_stage2(ex[i], ip_b, long[i], state, d_qc2, bits)
            # direct dimension-wise estimator from the same code
            xbar = x[i] / np.linalg.norm(x[i])
            cos_f = float(xbar @ o[i])
            direct = d[i] ** 2 + d_qc2 - 2 * d[i] * float(
                xbar @ (queries[i] - centers[i])
            ) / cos_f
            direct = max(direct, 0.0)
            worst_rel = max(worst_rel, abs(est2 - direct) / max(abs(direct), 1.0))
            true2 = float(np.sum((queries[i] - vectors[i]) ** 2))
            err1[i] = abs(est1 - true2) / true2
            err2[i] = abs(est2 - true2) / true2
    ok = worst_rel <= 1e-3 and err2.mean() < err1.mean() and t.seconds < 30
    _report(
        ok,
        f"criterion 4: refined estimate vs direct formula worst rel {worst_rel:.2e}; "
        f"mean rel error refined {err2.mean():.4f} < stage-1 {err1.mean():.4f} "
        f"in {t.seconds:.0f}s",
    )


def test_criterion_05_space_accuracy(workload):
    with _timer() as t:
        recall5 = workload.recall(workload.results(bits=5))
        recall7 = workload.recall(workload.results(bits=7))
    ok = recall5 >= 0.95 and recall7 >= 0.99
    _report(
        ok,
        f"criterion 5: full-probe recall@10 = {recall5:.4f} at 5 bits (>= 0.95), "
        f"{recall7:.4f} at 7 bits (>= 0.99) in {t.seconds:.0f}s",
    )


def test_criterion_06_probe_tradeoff(workload):
    limit = N_CLUSTERS // 4
    with _timer() as t:
        sweep = {}
        for n_probe in (8, 32, 64):
            sweep[n_probe] = workload.recall(workload.results(bits=8, n_probe=n_probe))
    hits = [p for p, r in sweep.items() if p < limit and r >= 0.95]
    pretty = ", ".join(f"recall@{p}={r:.4f}" for p, r in sweep.items())
    _report(
        bool(hits),
        f"criterion 6: 8-bit index reaches 0.95 with n_probe {hits} "
        f"(< {limit}): {pretty} in {t.seconds:.0f}s",
    )


def test_criterion_07_pruning_safety(workload):
    with _timer() as t:
        pruned = workload.results(bits=7)
        unpruned = workload.results(bits=7, prune=False)
        diff = 0
        total = 0
        for (ids_p, _), (ids_u, _) in zip(pruned, unpruned):
            total += ids_u.size
            for rank in range(ids_u.size):
                if rank >= ids_p.size or ids_p[rank] != ids_u[rank]:
                    diff += 1
    frac = diff / total
    _report(
        frac <= 0.002,
        f"criterion 7: pruning changes {diff}/{total} = {frac * 100:.3f}% of "
        f"(query, rank) slots (<= 0.2%) in {t.seconds:.0f}s",
    )


def test_criterion_08_backend_parity(workload):
    with _timer() as t:
        gaps = {}
        for n_probe in (4, 16, 64, N_CLUSTERS):
            r_lut = workload.recall(workload.results(bits=7, mode="lut", n_probe=n_probe))
            r_bw = workload.recall(
                workload.results(bits=7, mode="bitwise", n_probe=n_probe)
            )
            gaps[n_probe] = abs(r_lut - r_bw)
    worst = max(gaps.values())
    pretty = ", ".join(f"{p}: {g:.4f}" for p, g in gaps.items())
    _report(
        worst <= 0.005,
        f"criterion 8: lut/bitwise recall gap per n_probe {{{pretty}}} "
        f"(all <= 0.005) in {t.seconds:.0f}s",
    )


def test_criterion_09_schedule_independence(workload):
    with _timer() as t:
        reference = workload.results(bits=7, workers=1)
        identical = True
        for workers in (4, os.cpu_count() or 1):
            other = workload.results(bits=7, workers=workers)
            for (ia, da), (ib, db) in zip(reference, other):
                if not (np.array_equal(ia, ib) and np.array_equal(da, db)):
                    identical = False
    _report(
        identical,
        f"criterion 9: identical (ids, dists) across worker counts "
        f"{{1, 4, {os.cpu_count() or 1}}} in {t.seconds:.0f}s",
    )


def test_criterion_10_storage_formula(workload, tmp_path):
    with _timer() as t:
        lines = []
        ok = True
        for bits in (5, 7):
            index = workload.index(bits)
            path = tmp_path / f"b{bits}.idx"
            save_index(index, str(path))
            actual = path.stat().st_size
            formula = (
                index.size * index.dims * bits / 8
                + 20 * index.size
                + 8 * index.size
                + 4 * (index.dims**2 + index.n_clusters * index.dims)
            )
            rel = abs(actual - formula) / formula
            ok = ok and rel <= 0.15
            lines.append(f"{bits}-bit: {actual} vs formula {formula:.0f} ({rel * 100:.2f}%)")
    _report(ok, f"criterion 10: serialized size within 15% ({'; '.join(lines)}) in {t.seconds:.0f}s")


def test_invariant_recall_monotone_in_probes(workload):
    # Not a numbered criterion: the probe-sweep invariant on the same workload.
    with _timer() as t:
        recalls = [
            workload.recall(workload.results(bits=8, n_probe=p))
            for p in (1, 2, 4, 8, 16, 32, 64, 128, 256, N_CLUSTERS)
        ]
    ok = all(b >= a for a, b in zip(recalls, recalls[1:]))
    _report(
        ok,
        f"invariant: recall@10 non-decreasing over the probe sweep "
        f"{[round(r, 4) for r in recalls]} in {t.seconds:.0f}s",
    )


def test_criterion_11_serialization_round_trip(workload, tmp_path):
    with _timer() as t:
        index = workload.index(7)
        path = tmp_path / "rt.idx"
        save_index(index, str(path))
        loaded = load_index(str(path))
        queries = workload.queries[:100]
        params = SearchParams(k=K, n_probe=32)
        identical = True
        for (ia, da), (ib, db) in zip(
            search_batch(queries, index, params), search_batch(queries, loaded, params)
        ):
            if not (np.array_equal(ia, ib) and np.array_equal(da, db)):
                identical = False
    _report(
        identical,
        f"criterion 11: loaded index reproduces search results bit-identically "
        f"on 100 queries in {t.seconds:.0f}s",
    )
