import random

import pytest

from aqptree.model import Tuple
from aqptree.partitioner import PlanNode


def make_tuples(coords_values, start_id=1):
    out = []
    for i, (c, v) in enumerate(coords_values):
        if not isinstance(c, tuple):
            c = (c,)
        out.append(Tuple(start_id + i, c, float(v)))
    return out


def random_tuples(rng, n, d=1, value_dist="uniform", start_id=1):
    out = []
    for i in range(n):
        coords = tuple(rng.random() for _ in range(d))
        if value_dist == "uniform":
            v = rng.random()
        elif value_dist == "lognormal":
            v = rng.lognormvariate(0.0, 1.0)
        else:
            raise ValueError(value_dist)
        out.append(Tuple(start_id + i, coords, v))
    return out


def leaf(rect=None):
    return PlanNode(rect=rect)


def split(dim, val, left, right, rect=None):
    return PlanNode(rect=rect, split_dim=dim, split_val=val, left=left, right=right)


def balanced_1d_plan(cuts):
    """Balanced 1D plan over the given interior cut coordinates."""

    def build(lo_i, hi_i):
        if lo_i == hi_i:
            return leaf()
        mid = (lo_i + hi_i) // 2
        return split(0, cuts[mid], build(lo_i, mid), build(mid + 1, hi_i))

    return build(0, len(cuts))


@pytest.fixture
def rng():
    return random.Random(12345)
