"""Benchmark command line: ground truth, index build, sweep search, recall eval.

Subcommands::

    ivfrabitq build  --base base.fvecs --out idx.bin [--nk N] [--bits B]
                     [--seed S] [--iters I] [--train-frac F]
    ivfrabitq gt     --base base.fvecs --query q.fvecs --k K --out-prefix gt
    ivfrabitq search --index idx.bin --query q.fvecs --k K --nprobe 4,16,64
                     --mode {lut,bitwise} [--bq N] [--no-refine] --out results
    ivfrabitq eval   --results results --gt gt.ivecs --k K --csv out.csv

``search`` writes one ivecs file per sweep point plus ``<out>.meta.json``
describing the sweep (probe counts, mode, measured queries/second). ``eval``
reads that metadata to emit one CSV row per sweep point; it also accepts a
single bare ivecs file. The IVRQ_THREADS environment variable caps worker
parallelism.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from ivfrabitq.codec import QuantizationParams
from ivfrabitq.index import BuildParams, build_index, load_index, save_index
from ivfrabitq.io import read_fvecs, read_ivecs, write_fvecs, write_ivecs
from ivfrabitq.linalg import exact_knn
from ivfrabitq.search import SearchParams, search_batch

__all__ = ["main", "recall_at_k"]

DEFAULT_BATCH = 10_000


def recall_at_k(result_ids: np.ndarray, gt_ids: np.ndarray, k: int) -> float:
    """Mean over queries of |top-k results intersected with top-k truth| / k.

    Negative ids mark padded (absent) result slots and never match.
    """
    if result_ids.shape[0] != gt_ids.shape[0]:
        raise ValueError(
            f"query count mismatch: {result_ids.shape[0]} results vs "
            f"{gt_ids.shape[0]} ground-truth rows"
        )
    if gt_ids.shape[1] < k or result_ids.shape[1] < k:
        raise ValueError(f"need at least k={k} columns in results and ground truth")
    hits = 0
    for res, gt in zip(result_ids[:, :k], gt_ids[:, :k]):
        hits += len(set(res[res >= 0].tolist()) & set(gt.tolist()))
    return hits / (result_ids.shape[0] * k)


def _default_train_rows(n: int, n_clusters: int) -> int:
    return min(n, max(math.ceil(n / 10), 10 * n_clusters))


def cmd_build(args: argparse.Namespace) -> int:
    base = read_fvecs(args.base)
    n = base.shape[0]
    n_clusters = args.nk if args.nk is not None else math.ceil(math.sqrt(n))
    if args.train_frac is not None:
        train_fraction = args.train_frac
    else:
        train_fraction = _default_train_rows(n, n_clusters) / n
    params = BuildParams(
        n_clusters=n_clusters,
        quant=QuantizationParams(bits=args.bits),
        kmeans_iters=args.iters,
        train_fraction=train_fraction,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    index = build_index(base, params)
    build_s = time.perf_counter() - t0
    save_index(index, args.out)
    print(
        f"built index: n={n} d={base.shape[1]} clusters={n_clusters} "
        f"bits={args.bits} in {build_s:.1f}s -> {args.out} "
        f"({os.path.getsize(args.out)} bytes)"
    )
    return 0


def cmd_gt(args: argparse.Namespace) -> int:
    base = read_fvecs(args.base)
    queries = read_fvecs(args.query)
    ids, dists = exact_knn(base, queries, args.k)
    write_ivecs(args.out_prefix + ".ivecs", ids.astype(np.int32))
    write_fvecs(args.out_prefix + ".fvecs", dists.astype(np.float32))
    print(f"ground truth for {queries.shape[0]} queries -> {args.out_prefix}.{{ivecs,fvecs}}")
    return 0


def _padded_ids(results, k: int) -> np.ndarray:
    out = np.full((len(results), k), -1, dtype=np.int32)
    for i, (ids, _) in enumerate(results):
        out[i, : min(k, ids.size)] = ids[:k]
    return out


def cmd_search(args: argparse.Namespace) -> int:
    index = load_index(args.index)
    queries = read_fvecs(args.query)
    if queries.shape[1] != index.dims:
        raise ValueError(
            f"query dims {queries.shape[1]} do not match index dims {index.dims}"
        )
    probes = [int(p) for p in args.nprobe.split(",") if p]
    if not probes:
        raise ValueError("--nprobe needs at least one value")
    index_bytes = os.path.getsize(args.index)
    n_q = queries.shape[0]
    sweeps = []
    for sweep, n_probe in enumerate(probes):
        params = SearchParams(
            k=args.k,
            n_probe=n_probe,
            ip_mode=args.mode,
            query_bits=args.bq,
            refine=not args.no_refine,
        )
        ids = np.empty((n_q, args.k), dtype=np.int32)
        elapsed = 0.0
        for start in range(0, n_q, args.batch):
            chunk = queries[start : start + args.batch]
            t0 = time.perf_counter()
            results = search_batch(chunk, index, params)
            elapsed += time.perf_counter() - t0
            ids[start : start + args.batch] = _padded_ids(results, args.k)
        path = f"{args.out}.np{n_probe}.ivecs"
        write_ivecs(path, ids)
        qps = n_q / elapsed if elapsed > 0 else float("inf")
        sweeps.append(
            {
                "sweep": sweep,
                "n_probe": n_probe,
                "ip_mode": args.mode,
                "results": path,
                "qps": qps,
            }
        )
        print(f"n_probe={n_probe} mode={args.mode}: {qps:.0f} queries/s -> {path}")
    meta = {
        "k": args.k,
        "bits": index.bits,
        "index_bytes": index_bytes,
        "batch": args.batch,
        "sweeps": sweeps,
    }
    with open(args.out + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2)
    print(f"sweep metadata -> {args.out}.meta.json")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gt = read_ivecs(args.gt)
    if args.results.endswith(".ivecs"):
        meta = {"k": args.k, "bits": 0, "index_bytes": 0, "sweeps": [
            {"sweep": 0, "n_probe": 0, "ip_mode": "", "results": args.results, "qps": 0.0}
        ]}
    else:
        with open(args.results + ".meta.json") as f:
            meta = json.load(f)
    rows = ["sweep,n_probe,bits,ip_mode,recall,queries_per_second,index_bytes"]
    for sweep in meta["sweeps"]:
        ids = read_ivecs(sweep["results"])
        recall = recall_at_k(ids, gt, args.k)
        rows.append(
            f"{sweep['sweep']},{sweep['n_probe']},{meta['bits']},{sweep['ip_mode']},"
            f"{recall:.6f},{sweep['qps']:.2f},{meta['index_bytes']}"
        )
        print(rows[-1])
    with open(args.csv, "w") as f:
        f.write("\n".join(rows) + "\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivfrabitq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and save an index")
    p.add_argument("--base", required=True, help="base vectors (fvecs)")
    p.add_argument("--out", required=True, help="output index path")
    p.add_argument("--nk", type=int, default=None, help="cluster count (default ceil(sqrt(N)))")
    p.add_argument("--bits", type=int, default=8, help="code bits per dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=25, help="k-means iterations")
    p.add_argument(
        "--train-frac",
        type=float,
        default=None,
        help="k-means training fraction (default: one tenth, at least 10 per cluster)",
    )
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("gt", help="exact ground truth")
    p.add_argument("--base", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("search", help="run probe sweeps over a query batch")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--nprobe", required=True, help="comma-separated probe counts")
    p.add_argument("--mode", choices=("lut", "bitwise"), default="lut")
    p.add_argument("--bq", type=int, default=4, help="query bits (bitwise mode)")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall/throughput CSV from search results")
    p.add_argument("--results", required=True, help="search output prefix or a bare ivecs file")
    p.add_argument("--gt", required=True, help="ground-truth ivecs")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
