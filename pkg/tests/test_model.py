import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqptree.model import (
    AggKind,
    DimensionMismatch,
    EngineConfig,
    Query,
    Rectangle,
    Relation,
    Tuple,
    contains,
    relation,
    z_for_confidence,
)


def test_contains_lower_corner_included():
    r = Rectangle((0.0, 0.0), (1.0, 1.0))
    assert contains(r, Tuple(1, (0.0, 0.0), 0.0))


def test_contains_upper_face_excluded():
    r = Rectangle((0.0, 0.0), (1.0, 1.0))
    assert not contains(r, Tuple(1, (1.0, 0.0), 0.0))


def test_contains_interior():
    assert contains(Rectangle((0.0,), (2.0,)), Tuple(1, (1.5,), 0.0))


def test_contains_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        contains(Rectangle((0.0,), (1.0,)), Tuple(1, (0.5, 0.5), 0.0))


def test_relation_contained():
    assert relation(Rectangle((0.0,), (1.0,)), Rectangle((0.0,), (2.0,))) is Relation.CONTAINED_IN_Q


def test_relation_partial():
    assert relation(Rectangle((0.0,), (2.0,)), Rectangle((1.0,), (3.0,))) is Relation.PARTIAL_OVERLAP


def test_relation_disjoint():
    assert relation(Rectangle((0.0,), (1.0,)), Rectangle((2.0,), (3.0,))) is Relation.DISJOINT


def test_relation_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        relation(Rectangle((0.0,), (1.0,)), Rectangle((0.0, 0.0), (1.0, 1.0)))


def test_rectangle_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Rectangle((1.0,), (0.0,))


def test_unbounded_rectangle_contains_everything():
    r = Rectangle.unbounded(3)
    assert contains(r, Tuple(1, (1e300, -1e300, 0.0), 0.0))


coord = st.floats(min_value=-100, max_value=100, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 3), st.data())
def test_relation_outcomes_exclusive_and_consistent(d, data):
    lo1 = [data.draw(coord) for _ in range(d)]
    w1 = [data.draw(st.floats(min_value=0.1, max_value=50)) for _ in range(d)]
    lo2 = [data.draw(coord) for _ in range(d)]
    w2 = [data.draw(st.floats(min_value=0.1, max_value=50)) for _ in range(d)]
    r = Rectangle(tuple(lo1), tuple(a + b for a, b in zip(lo1, w1)))
    q = Rectangle(tuple(lo2), tuple(a + b for a, b in zip(lo2, w2)))
    rel = relation(r, q)
    # probe a grid of points inside r: containment must imply membership in q
    pts = []
    for j in range(d):
        pts.append([r.lo[j], (r.lo[j] + r.hi[j]) / 2, math.nextafter(r.hi[j], -math.inf)])
    import itertools

    inside_q = []
    for combo in itertools.product(*pts):
        t = Tuple(1, combo, 0.0)
        assert contains(r, t)
        inside_q.append(contains(q, t))
    if rel is Relation.CONTAINED_IN_Q:
        assert all(inside_q)
    if rel is Relation.DISJOINT:
        assert not any(inside_q)


def test_query_confidence_validated():
    with pytest.raises(ValueError):
        Query(AggKind.SUM, Rectangle((0.0,), (1.0,)), confidence=1.5)


@pytest.mark.parametrize(
    "kw",
    [
        dict(beta=1.0),
        dict(rho=0.5),
        dict(delta=0.6),
        dict(catchup_ratio=0.0),
        dict(m=2),
        dict(value_lo=2.0, value_hi=1.0),
    ],
)
def test_config_invariants(kw):
    base = dict(d=1, k=4, m=16)
    base.update(kw)
    with pytest.raises(ValueError):
        EngineConfig(**base)


def test_config_defaults():
    cfg = EngineConfig(d=2, k=8, m=64)
    assert cfg.beta == 10.0
    assert cfg.rho == 2.0
    assert cfg.catchup_ratio == 0.1
    assert cfg.z == 1.96
    assert cfg.heap_k == 32
    assert cfg.tau is None


def test_z_for_confidence():
    assert z_for_confidence(0.95) == 1.96
    assert abs(z_for_confidence(0.99) - 2.5758) < 1e-3
