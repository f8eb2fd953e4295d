"""End-to-end checks of the engine in two dimensions (k-d construction,
2D frontier, 2D max-variance trigger path)."""

import math
import random

import pytest

from aqptree.engine import Engine
from aqptree.model import AggKind, EngineConfig, Query, Rectangle, Tuple, Unanswerable


def build_2d_engine(n=3000, seed=3, kind=AggKind.SUM, k=16, m=150, catchup=0.8):
    cfg = EngineConfig(
        d=2, k=k, m=m, catchup_ratio=catchup, seed=seed, floor_c=0.1,
        partition_kind=kind,
    )
    eng = Engine(cfg)
    rng = random.Random(seed)
    for i in range(1, n + 1):
        coords = (rng.random(), rng.random())
        eng.process_event(("insert", Tuple(i, coords, rng.lognormvariate(0, 0.5))))
    eng.initialize()
    eng.run_catchup_to_done()
    return eng


def test_2d_engine_answers_within_ci():
    eng = build_2d_engine()
    rng = random.Random(17)
    covered_ok = 0
    total = 0
    for _ in range(60):
        a = sorted((rng.random(), rng.random()))
        b = sorted((rng.random(), rng.random()))
        if a[1] - a[0] < 0.25 or b[1] - b[0] < 0.25:
            continue
        q = Query(AggKind.SUM, Rectangle((a[0], b[0]), (a[1], b[1])))
        truth = eng.archive.ground_truth(q)
        ans = eng.query(q)
        total += 1
        if abs(truth - ans.estimate) <= ans.ci_half_width + 1e-9:
            covered_ok += 1
    assert total >= 20
    assert covered_ok / total >= 0.8


def test_2d_count_full_domain_exact():
    eng = build_2d_engine(n=1500, catchup=1.0)
    q = Query(AggKind.COUNT, Rectangle.unbounded(2))
    assert eng.query(q).estimate == pytest.approx(1500.0)


def test_2d_tree_uses_both_dimensions():
    eng = build_2d_engine()
    dims = set()
    for i in range(eng.tree.n_nodes):
        if not eng.tree.is_leaf(i):
            dims.add(eng.tree.topo_split(i)[0])
    assert dims == {0, 1}


def test_2d_tiling_probe():
    eng = build_2d_engine(n=1200, k=8)
    rng = random.Random(5)
    for _ in range(300):
        p = (rng.random(), rng.random())
        holders = [
            lid
            for lid in eng.tree.leaf_ids
            if all(
                eng.tree.rects[lid].lo[j] <= p[j] < eng.tree.rects[lid].hi[j]
                for j in range(2)
            )
        ]
        assert len(holders) == 1


def test_2d_avg_partition_kind_trigger_path():
    # AVG oracle drives construction and triggers without errors
    eng = build_2d_engine(n=2000, kind=AggKind.AVG, k=8)
    rng = random.Random(23)
    nid = 10_000
    for i in range(3000):
        coords = (1.0 + rng.random(), rng.random())  # shifted: new region
        eng.process_event(("insert", Tuple(nid + i, coords, rng.lognormvariate(0, 0.5))))
    q = Query(AggKind.AVG, Rectangle((0.0, 0.0), (2.0, 1.0)))
    truth = eng.archive.ground_truth(q)
    ans = eng.query(q)
    assert abs(ans.estimate - truth) / truth < 0.5


def test_2d_deletions_and_minmax():
    eng = build_2d_engine(n=2000, k=8)
    rng = random.Random(31)
    for tid in rng.sample(range(1, 2001), 400):
        eng.process_event(("delete", tid))
    q = Query(AggKind.COUNT, Rectangle.unbounded(2))
    assert eng.query(q).estimate == pytest.approx(1600, rel=0.1)
    ans = eng.query(Query(AggKind.MAX, Rectangle((0.2, 0.2), (0.8, 0.8))))
    truth = eng.archive.ground_truth(Query(AggKind.MAX, Rectangle((0.2, 0.2), (0.8, 0.8))))
    assert ans.estimate <= truth + 1e-9  # best-effort MAX never exceeds truth
