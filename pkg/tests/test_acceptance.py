"""Exit criteria, one marked test (or small group) per criterion.

The summary section printed at the end of the run lists each criterion once
with PASS or FAIL. Reference values come from the slow oracles in
``oracles.py``, never from the package under test.
"""

import csv
import io
import json
import time
import warnings

import numpy as np
import pytest

from nfmbench import cli, metrics, scoring
from nfmbench.manifest import partition_supervision
from nfmbench.memory_bank import MemoryBank, build_memory, k_center_greedy, nearest
from nfmbench.tensor_io import ScoreTable
from oracles import (auroc_pairs, dist, greedy_step_ok, knn_scan, make_manifest,
                     memory_score_literal)

acc = pytest.mark.acceptance


def _bank(mem):
    return MemoryBank(np.asarray(mem, np.float32), [(f"m{i}", i) for i in range(len(mem))])


def _instances(n, seed, max_mem=200, max_dim=16, max_rows=4):
    rng = np.random.default_rng(seed)
    for i in range(n):
        m = int(rng.integers(1, max_mem + 1))
        d = int(rng.integers(1, max_dim + 1))
        b = int(rng.choice([1, 2, 3, 5]))
        mem = (rng.standard_normal((m, d)) * rng.uniform(0.2, 3.0)).astype(np.float32)
        rows = (rng.standard_normal((int(rng.integers(1, max_rows + 1)), d)) * 2).astype(np.float32)
        yield i, mem, rows, b


@acc("C1", "memory score matches the 50-digit direct oracle (1000 instances, rel 1e-9, < 10 s)")
def test_c1_memory_score_oracle():
    spent, worst = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for i, mem, rows, b in _instances(1000, seed=101):
            bank = _bank(mem)
            t = time.perf_counter()
            g = scoring.memory_score(rows, bank, b)
            spent += time.perf_counter() - t
            ref, *_ = memory_score_literal(rows.tolist(), mem.tolist(), b)
            if ref == 0.0:
                assert g == 0.0, f"instance {i}"
            else:
                err = abs(g - ref) / abs(ref)
                worst = max(worst, err)
                assert err <= 1e-9, f"instance {i}: {g} vs {ref}"
    print(f"C1 worst relative error {worst:.2e}, scoring time {spent:.2f}s")
    assert spent < 10.0


@acc("C2", "0 <= g <= d*, g >= (1 - 1/b) d*, and g = 0 for rows present in memory")
def test_c2_bounds():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for i, mem, rows, b in _instances(1000, seed=202, max_mem=60):
            bank = _bank(mem)
            g = scoring.memory_score(rows, bank, b)
            d_star = scoring.select_representative(rows, bank).d_star
            assert 0.0 <= g <= d_star, f"instance {i}"
            if mem.shape[0] >= b:
                assert g >= (1.0 - 1.0 / b) * d_star * (1.0 - 1e-12), f"instance {i}"
            # a row copied bitwise from memory scores exactly zero
            j = i % mem.shape[0]
            assert scoring.memory_score(mem[j:j + 1], bank, b) == 0.0
            assert scoring.memory_score(mem[[j, 0]], bank, b) == 0.0


def test_c2_bounds_tight_when_equidistant():
    # query at the centre of a regular simplex: every neighbour at the same distance
    mem = np.eye(4, dtype=np.float32)
    g = scoring.memory_score(np.full((1, 4), 0.25, np.float32), _bank(mem), b=4)
    d = dist([0.25] * 4, [1, 0, 0, 0])
    assert g == pytest.approx(0.75 * d, rel=1e-12)


@acc("C3", "fused = (g + external) / 2 bitwise; constant external keeps the order of g")
def test_c3_fusion_literal():
    rng = np.random.default_rng(303)
    ids = [f"s{i:04d}" for i in range(2000)]
    g = rng.gamma(2.0, 1.5, len(ids))
    e = rng.standard_normal(len(ids)) * 10.0 ** rng.integers(-3, 3, len(ids))
    nfm = ScoreTable(dict(zip(ids, g.tolist())), "nfm")
    ext = ScoreTable(dict(zip(ids, e.tolist())), "ext")
    fused = scoring.fuse(nfm, ext, scoring.FusionConfig(calibration="none"))
    for sid, gi, ei in zip(ids, g.tolist(), e.tolist()):
        assert fused[sid] == (gi + ei) / 2.0
    const = scoring.fuse(nfm, ScoreTable({s: 0.37 for s in ids}, "c"))
    f = const.values(ids)
    assert np.array_equal(np.argsort(f, kind="stable"), np.argsort(g, kind="stable"))


def _tie_fixtures():
    """Banks and queries whose exact distances tie (integer coordinates)."""
    axes = np.vstack([np.eye(3), -np.eye(3)])
    yield axes, np.zeros(3)
    grid = np.array([[x, y] for x in range(-2, 3) for y in range(-2, 3)], float)
    for q in ([0, 0], [0.5, 0.5], [1, 0], [3, 3]):
        yield grid, np.array(q, float)
    dup = np.repeat(np.array([[1.0, 1.0], [2.0, 0.0], [0.0, 2.0]]), 3, axis=0)
    yield dup, np.zeros(2)
    yield np.zeros((7, 5)), np.ones(5)


@acc("C4", "nearest() equals the full-scan oracle on 10^4 cases incl. ties, zero mismatches")
def test_c4_knn_exact():
    rng = np.random.default_rng(404)
    cases, mismatches = 0, []

    def check(mem, q, b):
        nonlocal cases
        bank = _bank(mem)
        got = nearest(bank, q.astype(np.float32), b)
        ref_idx, ref_d = knn_scan(bank.features.tolist(), q.astype(np.float32).tolist(), b)
        ok = list(got.indices) == ref_idx and np.allclose(got.distances, ref_d, rtol=1e-12, atol=0)
        if not ok:
            mismatches.append((cases, list(got.indices), ref_idx))
        cases += 1

    fixtures = list(_tie_fixtures())
    while cases < 10_000:
        if cases % 10 == 0:
            mem, q = fixtures[(cases // 10) % len(fixtures)]
            check(mem, q, int(rng.integers(1, len(mem) + 3)))
            continue
        m, d = int(rng.integers(1, 40)), int(rng.integers(1, 9))
        if rng.random() < 0.3:
            mem = rng.integers(-2, 3, (m, d)).astype(float)
            q = rng.integers(-2, 3, d).astype(float)
        else:
            mem = rng.standard_normal((m, d)) * 10.0 ** rng.uniform(-2, 3)
            q = mem[rng.integers(m)] + rng.standard_normal(d) * rng.uniform(0, 1)
        check(mem, q, int(rng.integers(1, m + 3)))
    assert cases >= 10_000
    assert not mismatches, mismatches[:5]


@acc("C5", "each greedy step maximises min-distance (N <= 500); ratio 1 keeps the pool verbatim")
def test_c5_greedy_property():
    rng = np.random.default_rng(505)
    for trial in range(40):
        n = int(rng.integers(2, 501))
        d = int(rng.integers(1, 9))
        pool = rng.standard_normal((n, d)).astype(np.float32)
        if trial % 4 == 0:
            pool[n // 2:] = pool[: n - n // 2]  # duplicates
        k = int(min(n, rng.integers(1, 80)))
        sel = k_center_greedy(pool, k, seed=trial)
        assert len(set(sel.tolist())) == k
        ok, why = greedy_step_ok(pool, sel)
        assert ok, f"trial {trial}: {why}"


def test_c5_full_selection_small_pools():
    rng = np.random.default_rng(506)
    for trial in range(20):
        pool = rng.integers(-3, 4, (int(rng.integers(2, 40)), 2)).astype(np.float32)
        sel = k_center_greedy(pool, len(pool), seed=trial)
        assert sorted(sel.tolist()) == list(range(len(pool)))
        ok, why = greedy_step_ok(pool, sel)
        assert ok, why


@acc("C5", "each greedy step maximises min-distance (N <= 500); ratio 1 keeps the pool verbatim")
def test_c5_ratio_one_verbatim():
    rng = np.random.default_rng(507)
    pool = rng.standard_normal((321, 7)).astype(np.float32)
    ids = [(f"s{i}", i) for i in range(321)]
    bank = build_memory(pool, ids, coreset_ratio=1.0, seed=3)
    assert bank.features.tobytes() == pool.tobytes()
    assert bank.source_ids == ids


@acc("C6", "auroc equals the O(n^2) pair count and the ROC trapezoid area (1000 tied instances, 1e-12)")
def test_c6_auroc():
    rng = np.random.default_rng(606)
    for i in range(1000):
        n0, n1 = int(rng.integers(1, 150)), int(rng.integers(1, 150))
        digits = int(rng.integers(0, 3))
        n = np.round(rng.standard_normal(n0), digits)
        a = np.round(rng.standard_normal(n1) + rng.uniform(-1, 2), digits)
        ref = auroc_pairs(n, a)
        got = metrics.auroc(n, a)
        assert abs(got - ref) <= 1e-12, f"instance {i}"
        assert abs(metrics.roc_points(n, a).area() - got) <= 1e-12, f"instance {i}"


@acc("C7", "bootstrap CI deterministic; coverage in [0.92, 0.98] over 1000 null trials in < 60 s")
def test_c7_bootstrap():
    rng = np.random.default_rng(707)
    n, a = rng.standard_normal(200), rng.standard_normal(200) + 0.3
    assert metrics.bootstrap_ci(n, a, 500, seed=9) == metrics.bootstrap_ci(n, a, 500, seed=9)

    t = time.perf_counter()
    covered = 0
    for trial in range(1000):
        r = np.random.default_rng([707, trial])
        ci = metrics.bootstrap_ci(r.standard_normal(200), r.standard_normal(200), 500, seed=trial)
        covered += ci.lo <= 0.5 <= ci.hi
    elapsed = time.perf_counter() - t
    coverage = covered / 1000
    print(f"C7 coverage {coverage:.3f} in {elapsed:.1f}s")
    assert 0.92 <= coverage <= 0.98
    assert elapsed < 60.0


@acc("C8", "partition: floor(|train|/3) labeled, disjoint and exhaustive, stratified +-1, deterministic")
def test_c8_partition_contract():
    rng = np.random.default_rng(808)
    for i in range(1000):
        layout = [("normal", "normal", "na", "train", int(rng.integers(0, 60)))]
        for c in range(int(rng.integers(0, 4))):
            layout.append(("abnormal", f"E{c}", "seen", "train", int(rng.integers(0, 30))))
        layout.append(("normal", "normal", "na", "test", 2))
        train_n = sum(s[4] for s in layout if s[3] == "train")
        if train_n < 3:
            layout[0] = ("normal", "normal", "na", "train", 3)
            train_n = sum(s[4] for s in layout if s[3] == "train")
        m = make_manifest(layout)
        seed = int(rng.integers(2**31))
        p = partition_supervision(m, seed)
        train = {s.sample_id: s for s in m.split("train")}
        ln, la, un = set(p.labeled_normal_ids), set(p.labeled_abnormal_ids), set(p.unlabeled_ids)
        assert len(ln) + len(la) == train_n // 3
        assert not (ln & la) and not (ln & un) and not (la & un)
        assert ln | la | un == set(train)
        assert all(not train[s].is_abnormal for s in ln)
        assert all(train[s].is_abnormal for s in la)
        n_norm = sum(not s.is_abnormal for s in train.values())
        assert abs(len(ln) - (train_n // 3) * n_norm / train_n) <= 1.0
        assert partition_supervision(m, seed) == p


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    t = time.perf_counter()
    code = cli.main(["--quiet", "demo", "--out", str(out), "--seed", "0"])
    elapsed = time.perf_counter() - t
    rep = json.loads((out / "run1" / "eval" / "report.json").read_text())
    return out, rep, code, elapsed


@acc("C9", "synthetic demo: memory AUROC > 0.99 all / > 0.95 unseen; fusion keeps unseen; deterministic, < 2 min")
def test_c9_memory_auroc(demo_run):
    _, rep, _, _ = demo_run
    checks = cli.demo_checks(rep)
    print("C9", {k: v[1] for k, v in checks.items()})
    assert checks["memory_overall_auroc"][0], checks["memory_overall_auroc"][1]
    assert checks["memory_unseen_auroc"][0], checks["memory_unseen_auroc"][1]


@acc("C9", "synthetic demo: memory AUROC > 0.99 all / > 0.95 unseen; fusion keeps unseen; deterministic, < 2 min")
def test_c9_fusion_keeps_unseen(demo_run):
    _, rep, _, _ = demo_run
    ok, detail = cli.demo_checks(rep)["fusion_keeps_unseen"]
    assert ok, detail


@acc("C9", "synthetic demo: memory AUROC > 0.99 all / > 0.95 unseen; fusion keeps unseen; deterministic, < 2 min")
def test_c9_deterministic_and_fast(demo_run):
    out, _, _, elapsed = demo_run
    assert (out / "run1" / "eval" / "report.json").read_bytes() == \
        (out / "run2" / "eval" / "report.json").read_bytes()
    for name in ("nfm_test.csv", "fused_test.csv", "partition.json"):
        assert (out / "run1" / name).read_bytes() == (out / "run2" / name).read_bytes()
    assert elapsed < 120.0


@acc("C10", "tables: per-category F1/SPC/SEN with seen flags, unweighted Average row, shared SPC")
def test_c10_report_structure(demo_run):
    out, rep, _, _ = demo_run
    md = (out / "run1" / "eval" / "tables.md").read_text()
    rows = list(csv.DictReader(io.StringIO((out / "run1" / "eval" / "tables.csv").read_text())))
    manifest_cats = {"E1": "seen", "E2": "unseen"}
    for stream in ("nfm", "external", "fused"):
        assert f"{stream} F1" in md and f"{stream} SPC" in md and f"{stream} SEN" in md
        sr = [r for r in rows if r["stream"] == stream]
        cats = [r for r in sr if r["row"] in manifest_cats]
        assert {r["row"]: r["seen"] for r in cats} == manifest_cats
        avg = [r for r in sr if r["row"] == "Average"]
        assert len(avg) == 1
        for col in ("f1", "specificity", "sensitivity", "auroc"):
            mean = np.mean([float(r[col]) for r in cats])
            assert abs(100 * float(avg[0][col]) - 100 * mean) <= 0.1
        spc = {r["specificity"] for r in sr}
        assert len(spc) == 1
    # the markdown carries the same flags
    lines = [ln for ln in md.splitlines() if ln.startswith("| E")]
    assert any("| unseen |" in ln for ln in lines) and any("| seen |" in ln for ln in lines)
    assert any(ln.startswith("| Average |") for ln in md.splitlines())


@acc("C11", "10k single-row samples vs 10k x 512 memory, b=3: < 30 s, parallel == sequential")
def test_c11_performance():
    rng = np.random.default_rng(1111)
    mem = rng.standard_normal((10_000, 512)).astype(np.float32)
    bank = _bank(mem)
    queries = [q[None, :] for q in rng.standard_normal((10_000, 512)).astype(np.float32)]
    t = time.perf_counter()
    seq = scoring.score_samples(queries, bank, b=3, n_jobs=1)
    elapsed = time.perf_counter() - t
    par = scoring.score_samples(queries, bank, b=3, n_jobs=4)
    print(f"C11 sequential {elapsed:.1f}s")
    assert elapsed < 30.0
    assert seq.tobytes() == par.tobytes()
