import csv
import json

import numpy as np
import pytest

from ivfrabitq.cli import main, recall_at_k
from ivfrabitq.io import read_fvecs, read_ivecs, write_fvecs, write_ivecs


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    centers = rng.normal(0, 2.0, (4, 16))
    base = np.vstack([rng.normal(c, 0.4, (500, 16)) for c in centers]).astype(np.float32)
    queries = np.vstack([rng.normal(c, 0.4, (10, 16)) for c in centers]).astype(np.float32)
    write_fvecs(str(root / "base.fvecs"), base)
    write_fvecs(str(root / "query.fvecs"), queries)
    return root


def test_recall_at_k_values():
    gt = np.arange(20).reshape(2, 10).astype(np.int32)
    assert recall_at_k(gt.copy(), gt, 10) == 1.0
    assert recall_at_k(gt + 100, gt, 10) == 0.0
    half = gt.copy()
    half[:, 5:] += 100
    assert recall_at_k(half, gt, 10) == 0.5


def test_recall_rejects_mismatched_files():
    gt = np.zeros((3, 10), dtype=np.int32)
    res = np.zeros((2, 10), dtype=np.int32)
    with pytest.raises(ValueError):
        recall_at_k(res, gt, 10)
    with pytest.raises(ValueError):
        recall_at_k(np.zeros((3, 4), dtype=np.int32), gt, 10)


def test_gt_command_deterministic(workspace):
    args = [
        "gt",
        "--base", str(workspace / "base.fvecs"),
        "--query", str(workspace / "query.fvecs"),
        "--k", "10",
        "--out-prefix", str(workspace / "gt"),
    ]
    assert main(args) == 0
    first = (workspace / "gt.ivecs").read_bytes()
    assert main(args) == 0
    assert (workspace / "gt.ivecs").read_bytes() == first
    ids = read_ivecs(str(workspace / "gt.ivecs"))
    dists = read_fvecs(str(workspace / "gt.fvecs"))
    assert ids.shape == (40, 10) and dists.shape == (40, 10)
    assert np.all(np.diff(dists, axis=1) >= 0)


def test_gt_query_in_base(workspace, tmp_path):
    base = read_fvecs(str(workspace / "base.fvecs"))
    write_fvecs(str(tmp_path / "self.fvecs"), base[123][None, :])
    assert main([
        "gt",
        "--base", str(workspace / "base.fvecs"),
        "--query", str(tmp_path / "self.fvecs"),
        "--k", "1",
        "--out-prefix", str(tmp_path / "selfgt"),
    ]) == 0
    ids = read_ivecs(str(tmp_path / "selfgt.ivecs"))
    dists = read_fvecs(str(tmp_path / "selfgt.fvecs"))
    assert ids[0, 0] == 123
    assert dists[0, 0] == 0.0


def test_build_search_eval_pipeline(workspace):
    assert main([
        "build",
        "--base", str(workspace / "base.fvecs"),
        "--out", str(workspace / "toy.idx"),
        "--nk", "12",
        "--bits", "8",
        "--seed", "3",
        "--iters", "8",
    ]) == 0
    assert main([
        "gt",
        "--base", str(workspace / "base.fvecs"),
        "--query", str(workspace / "query.fvecs"),
        "--k", "10",
        "--out-prefix", str(workspace / "gt"),
    ]) == 0
    assert main([
        "search",
        "--index", str(workspace / "toy.idx"),
        "--query", str(workspace / "query.fvecs"),
        "--k", "10",
        "--nprobe", "2,12",
        "--mode", "lut",
        "--out", str(workspace / "res"),
    ]) == 0
    meta = json.loads((workspace / "res.meta.json").read_text())
    assert [s["n_probe"] for s in meta["sweeps"]] == [2, 12]
    assert meta["bits"] == 8 and meta["index_bytes"] > 0

    assert main([
        "eval",
        "--results", str(workspace / "res"),
        "--gt", str(workspace / "gt.ivecs"),
        "--k", "10",
        "--csv", str(workspace / "out.csv"),
    ]) == 0
    with open(workspace / "out.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    recalls = [float(r["recall"]) for r in rows]
    assert all(0.0 <= r <= 1.0 for r in recalls)
    assert recalls[1] >= recalls[0]  # more probes never hurt here
    assert recalls[1] >= 0.9
    assert rows[0]["ip_mode"] == "lut"
    assert int(rows[0]["index_bytes"]) == meta["index_bytes"]


def test_search_rerun_is_deterministic(workspace, tmp_path):
    for out in ("runA", "runB"):
        assert main([
            "search",
            "--index", str(workspace / "toy.idx"),
            "--query", str(workspace / "query.fvecs"),
            "--k", "10",
            "--nprobe", "3",
            "--out", str(tmp_path / out),
        ]) == 0
    a = (tmp_path / "runA.np3.ivecs").read_bytes()
    b = (tmp_path / "runB.np3.ivecs").read_bytes()
    assert a == b


def test_eval_single_ivecs_file(workspace, tmp_path):
    gt_ids = read_ivecs(str(workspace / "gt.ivecs"))
    write_ivecs(str(tmp_path / "copy.ivecs"), gt_ids)
    assert main([
        "eval",
        "--results", str(tmp_path / "copy.ivecs"),
        "--gt", str(workspace / "gt.ivecs"),
        "--k", "10",
        "--csv", str(tmp_path / "one.csv"),
    ]) == 0
    with open(tmp_path / "one.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert float(rows[0]["recall"]) == 1.0


def test_missing_file_is_an_error(workspace, tmp_path):
    rc = main([
        "build",
        "--base", str(tmp_path / "missing.fvecs"),
        "--out", str(tmp_path / "x.idx"),
    ])
    assert rc == 2


def test_search_dim_mismatch_is_an_error(workspace, tmp_path):
    write_fvecs(str(tmp_path / "wrong.fvecs"), np.zeros((2, 9), dtype=np.float32))
    rc = main([
        "search",
        "--index", str(workspace / "toy.idx"),
        "--query", str(tmp_path / "wrong.fvecs"),
        "--k", "5",
        "--nprobe", "2",
        "--out", str(tmp_path / "r"),
    ])
    assert rc == 2
