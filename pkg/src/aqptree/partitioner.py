"""Construction of near-optimal k-leaf partition plans from the pooled sample.

Two construction paths:

  partition_1d  binary search over a geometric grid of candidate worst-case
                errors; for each candidate, a greedy left-to-right feasibility
                check packs maximal buckets whose oracle error stays below the
                candidate.  COUNT degenerates to equal-mass buckets.
  partition_kd  greedy splitting: repeatedly pop the leaf with the largest
                approximate max variance from a heap and split it at the
                sample median of the next dimension in a fixed round-robin
                order.

Both paths consume a max-variance oracle (normally a MaxVarIndex over the
pool; tests substitute an exhaustive brute-force oracle) and honor a
minimum-samples floor per bucket.
"""

from __future__ import annotations

import bisect
import heapq
import json
import math
from dataclasses import dataclass
from typing import Optional

from .maxvar import MaxVarIndex
from .model import AggKind, EngineError, Rectangle


@dataclass
class PlanNode:
    rect: Optional[Rectangle] = None
    split_dim: int = -1
    split_val: float = math.nan
    left: Optional["PlanNode"] = None
    right: Optional["PlanNode"] = None
    maxvar: float = 0.0
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class PartitionPlan:
    root: PlanNode
    kind: AggKind
    k: int
    floor: int
    fallback_equal_mass: bool = False

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack.append(n.right)
                stack.append(n.left)
        return out

    @property
    def leaf_maxvars(self):
        return [n.maxvar for n in self.leaves()]

    @property
    def achieved_max_error(self) -> float:
        return math.sqrt(max(self.leaf_maxvars, default=0.0))

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return None if math.isinf(v) else v

        leaves = []
        for n in self.leaves():
            leaves.append(
                {
                    "lo": [enc(v) for v in n.rect.lo] if n.rect else None,
                    "hi": [enc(v) for v in n.rect.hi] if n.rect else None,
                    "maxvar": n.maxvar,
                }
            )
        return {
            "kind": self.kind.value,
            "k": self.k,
            "floor": self.floor,
            "fallback_equal_mass": self.fallback_equal_mass,
            "achieved_max_error": self.achieved_max_error,
            "leaves": leaves,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class ErrorGrid:
    """Geometric discretization {rho^t} of the feasible worst-error range,
    plus 0; the top is rounded up so the max achievable error is bracketed."""

    def __init__(self, values):
        self.values = list(values)

    @classmethod
    def build(cls, kind: AggKind, n_total: int, value_lo, value_hi, rho: float) -> "ErrorGrid":
        if value_lo is None or value_hi is None or value_hi <= 0:
            return cls([0.0])
        n_total = max(1, n_total)
        if kind is AggKind.AVG:
            lb = value_lo / (math.sqrt(2.0) * n_total)
            ub = math.sqrt(n_total) * value_hi
        else:
            lb = value_lo / math.sqrt(2.0)
            ub = n_total * value_hi
        t0 = math.floor(math.log(lb, rho))
        t1 = math.ceil(math.log(ub, rho))
        return cls([0.0] + [rho**t for t in range(t0, t1 + 1)])


def derive_value_bounds(values):
    """(min nonzero |a|, max |a|) over the sample values; (None, None) if all zero."""
    lo = None
    hi = 0.0
    for v in values:
        a = abs(v)
        if a > 0.0 and (lo is None or a < lo):
            lo = a
        if a > hi:
            hi = a
    return (lo, hi if lo is not None else None)


def _valid_cuts(xs):
    """Rank positions where a half-open boundary can fall without splitting
    duplicate coordinates; excludes 0, includes len(xs)."""
    m = len(xs)
    return [r for r in range(1, m) if xs[r] > xs[r - 1]] + [m]


class _BucketErrors:
    """sqrt of the oracle max variance for a rank-range bucket, memoized."""

    def __init__(self, xs, oracle, kind: AggKind, dm: Optional[int]):
        self.xs = xs
        self.m = len(xs)
        self.oracle = oracle
        self.kind = kind
        self.dm = dm
        self._memo = {}

    def rect(self, start: int, end: int) -> Rectangle:
        lo = -math.inf if start == 0 else self.xs[start]
        hi = math.inf if end == self.m else self.xs[end]
        return Rectangle((lo,), (hi,))

    def min_size(self, eta: int) -> int:
        if self.kind is AggKind.AVG and self.dm is not None:
            return max(eta, 2 * self.dm + 1)
        return max(eta, 1)

    def err(self, start: int, end: int) -> float:
        key = (start, end)
        v = self._memo.get(key)
        if v is None:
            n = end - start
            if n < 2 or (self.kind is AggKind.AVG and self.dm is not None and n <= 2 * self.dm):
                v = 0.0
            else:
                v = math.sqrt(
                    max(0.0, self.oracle.maxvar(self.rect(start, end), self.kind, self.dm).variance)
                )
            self._memo[key] = v
        return v


def feasible_1d(e: float, k: int, errors: _BucketErrors, eta: int):
    """Greedy maximal buckets left-to-right with error <= e each.

    Returns the list of bucket end ranks covering all samples, or None when
    more than k buckets would be needed.  The oracle underestimates the true
    max variance, so each binary search lands at or beyond the endpoint the
    optimal partition would use.
    """
    m = errors.m
    cuts = _valid_cuts(errors.xs)
    min_sz = errors.min_size(eta)
    bounds = []
    start = 0
    for _ in range(k):
        if start >= m:
            break
        # taking everything that remains is legal when it is big enough
        if m - start >= min_sz and errors.err(start, m) <= e:
            bounds.append(m)
            start = m
            break
        lo_i = bisect.bisect_left(cuts, start + min_sz)
        hi_i = bisect.bisect_right(cuts, m - min_sz) - 1
        best = None
        lo, hi = lo_i, hi_i
        while lo <= hi:
            mid = (lo + hi) // 2
            if errors.err(start, cuts[mid]) <= e:
                best = cuts[mid]
                lo = mid + 1
            else:
                hi = mid - 1
        if best is None:
            return None
        bounds.append(best)
        start = best
    if start < m:
        return None
    return bounds


def _plan_from_bounds(xs, bounds, errors: _BucketErrors, kind: AggKind, floor: int, fallback=False):
    """Balanced binary tree over consecutive rank buckets."""
    starts = [0] + bounds[:-1]
    buckets = list(zip(starts, bounds))

    def build(blo, bhi, depth):
        if bhi - blo == 1:
            s, t = buckets[blo]
            node = PlanNode(rect=errors.rect(s, t), depth=depth)
            node.maxvar = errors.err(s, t) ** 2
            return node
        mid = (blo + bhi) // 2
        cut = buckets[mid][0]
        node = PlanNode(split_dim=0, split_val=xs[cut], depth=depth)
        node.rect = errors.rect(buckets[blo][0], buckets[bhi - 1][1])
        node.left = build(blo, mid, depth + 1)
        node.right = build(mid, bhi, depth + 1)
        return node

    root = build(0, len(buckets), 0)
    return PartitionPlan(root, kind, len(buckets), floor, fallback)


def equal_mass_bounds(xs, k: int, min_sz: int):
    m = len(xs)
    cuts = _valid_cuts(xs)
    k = max(1, min(k, m // max(1, min_sz)))
    bounds = []
    prev = 0
    for i in range(1, k):
        target = round(i * m / k)
        j = bisect.bisect_left(cuts, max(target, prev + min_sz))
        if j >= len(cuts):
            break
        cut = cuts[j]
        if cut >= m or m - cut < min_sz:
            break
        bounds.append(cut)
        prev = cut
    bounds.append(m)
    return bounds


def partition_1d(
    k: int,
    samples,
    kind: AggKind,
    oracle=None,
    *,
    n_total: Optional[int] = None,
    rho: float = 2.0,
    value_lo: Optional[float] = None,
    value_hi: Optional[float] = None,
    eta: int = 1,
    delta: float = 0.05,
    dm: Optional[int] = None,
) -> PartitionPlan:
    """Near-optimal 1D bucketing: within 2*rho*sqrt(2) of the optimal worst
    in-bucket CI length for SUM and 2*rho for AVG; COUNT uses equal-mass
    buckets, which are optimal in 1D."""
    ordered = sorted(samples, key=lambda t: (t.coords[0], t.id))
    m = len(ordered)
    if m < k:
        raise EngineError(f"need at least k={k} samples, have {m}")
    xs = [t.coords[0] for t in ordered]
    if oracle is None:
        oracle = MaxVarIndex(1, delta)
        oracle.rebuild_from(ordered)
    if dm is None and kind is AggKind.AVG:
        dm = max(1, int(delta * m))
    errors = _BucketErrors(xs, oracle, kind, dm)
    min_sz = errors.min_size(eta)

    if kind is AggKind.COUNT:
        bounds = equal_mass_bounds(xs, k, min_sz)
        return _plan_from_bounds(xs, bounds, errors, kind, min_sz)

    if value_lo is None or value_hi is None:
        d_lo, d_hi = derive_value_bounds(t.value for t in ordered)
        value_lo = d_lo if value_lo is None else value_lo
        value_hi = d_hi if value_hi is None else value_hi
    grid = ErrorGrid.build(kind, n_total or m, value_lo, value_hi, rho).values

    best_bounds = None
    lo, hi = 0, len(grid) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        bounds = feasible_1d(grid[mid], k, errors, eta)
        if bounds is not None:
            best_bounds = bounds
            hi = mid - 1
        else:
            lo = mid + 1
    if best_bounds is None:
        bounds = equal_mass_bounds(xs, k, min_sz)
        return _plan_from_bounds(xs, bounds, errors, kind, min_sz, fallback=True)
    return _plan_from_bounds(xs, best_bounds, errors, kind, min_sz)


def partition_kd(
    k: int,
    samples,
    kind: AggKind,
    oracle=None,
    *,
    d: Optional[int] = None,
    eta: int = 1,
    delta: float = 0.05,
    dm: Optional[int] = None,
    longest_side: bool = False,
) -> PartitionPlan:
    """Heap-driven k-d construction: k-1 median splits of the currently
    worst leaf, cycling split dimensions by depth."""
    samples = list(samples)
    m = len(samples)
    if m == 0:
        raise EngineError("cannot partition zero samples")
    if m < k:
        raise EngineError(f"need at least k={k} samples, have {m}")
    if d is None:
        d = len(samples[0].coords)
    if oracle is None:
        oracle = MaxVarIndex(d, delta)
        oracle.rebuild_from(samples)
    if dm is None and kind is AggKind.AVG:
        dm = max(1, int(delta * m))
    eta = max(1, eta)

    def leaf_priority(rect):
        n = oracle.count_in(rect)
        if n < 2 or (kind is AggKind.AVG and dm is not None and n <= 2 * dm):
            return 0.0
        return max(0.0, oracle.maxvar(rect, kind, dm).variance)

    root = PlanNode(rect=Rectangle.unbounded(d), depth=0)
    root.maxvar = leaf_priority(root.rect)
    heap = [(-root.maxvar, 0, root)]
    seq = 1
    n_leaves = 1
    parked = []

    while n_leaves < k and heap:
        _negv, _, node = heapq.heappop(heap)
        split = None
        for off in range(d):
            dim = (node.depth + off) % d if not longest_side else None
            if longest_side:
                dim = oracle.spread_dim(node.rect)
            n = oracle.count_in(node.rect)
            if n < 2 * eta:
                break
            cut = oracle.kth_coord(node.rect, dim, n // 2)
            left_hi = list(node.rect.hi)
            left_hi[dim] = cut
            right_lo = list(node.rect.lo)
            right_lo[dim] = cut
            lrect = Rectangle(node.rect.lo, tuple(left_hi))
            rrect = Rectangle(tuple(right_lo), node.rect.hi)
            if oracle.count_in(lrect) >= eta and oracle.count_in(rrect) >= eta:
                split = (dim, cut, lrect, rrect)
                break
            if longest_side:
                break
        if split is None:
            parked.append(node)
            continue
        dim, cut, lrect, rrect = split
        node.split_dim = dim
        node.split_val = cut
        node.left = PlanNode(rect=lrect, depth=node.depth + 1)
        node.right = PlanNode(rect=rrect, depth=node.depth + 1)
        node.left.maxvar = leaf_priority(lrect)
        node.right.maxvar = leaf_priority(rrect)
        heapq.heappush(heap, (-node.left.maxvar, seq, node.left))
        heapq.heappush(heap, (-node.right.maxvar, seq + 1, node.right))
        seq += 2
        n_leaves += 1

    return PartitionPlan(root, kind, n_leaves, eta)
