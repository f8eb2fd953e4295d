"""Dynamic max-variance indexes for COUNT/SUM/AVG sub-queries.

Given a query rectangle R over the pooled sample, these indexes return a
sub-rectangle whose in-bucket variance approximates the maximum over all
rectangular sub-queries of R, within a guaranteed factor gamma:

  COUNT  exact (up to the floor in |R|/2): the worst query holds half the
         samples, so the variance m_u*c - c^2 is pinned by c = floor(n/2).
  SUM    split R into two equal-count halves on one dimension and keep the
         half with the larger sum of squared values; factor 4.
  AVG    find the small canonical rectangle (<= delta*m samples) with the
         largest sum of squared values inside R, expand it to exactly
         delta*m samples; factor 4 in 1D via exact delta*m windows, and
         4*log^(d+1) m in higher dimensions via the canonical-node store.

In-bucket variance, with m_u = |R cap S| and c = |q cap S|:

  COUNT/SUM   m_u * sum_q a^2 - (sum_q a)^2
  AVG         (1 / (m_u * c^2)) * (m_u * sum_q a^2 - (sum_q a)^2)

The structure is a d-level range tree realized over sorted arrays: level j
orders points by coordinate j (id-tiebroken at the primary level), canonical
nodes are the recursive-halving intervals of each level, and every canonical
node's (count, sum a, sum a^2) comes from prefix moments.  Contents are a
pure function of the sample multiset, so answers after any update sequence
match a freshly built index exactly.  Associated levels are cached and
rebuilt lazily after updates; that is the amortized rebuild-on-threshold
maintenance policy, with the threshold at one update.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AggKind, EngineError, Rectangle, Tuple


class DuplicateSample(EngineError):
    pass


class MissingSample(EngineError):
    pass


def canonical_ranges(n: int, qlo: int, qhi: int):
    """Maximal recursive-halving intervals of [0, n) covering [qlo, qhi)."""
    out = []

    def rec(nlo, nhi):
        if qlo <= nlo and nhi <= qhi:
            out.append((nlo, nhi))
            return
        mid = (nlo + nhi) // 2
        if qlo < mid:
            rec(nlo, mid)
        if qhi > mid:
            rec(mid, nhi)

    if qlo < qhi:
        rec(0, n)
    return out


class _Level:
    """One axis of the range tree over a fixed point subset."""

    __slots__ = ("axis", "d", "coords", "pts", "vals", "cum_a", "cum_a2", "children")

    def __init__(self, pts, vals, axis, d, presorted=False):
        if not presorted:
            order = np.argsort(pts[:, axis], kind="stable")
            pts = pts[order]
            vals = vals[order]
        self.axis = axis
        self.d = d
        self.pts = pts
        self.vals = vals
        self.coords = np.ascontiguousarray(pts[:, axis])
        self.cum_a = np.concatenate(([0.0], np.cumsum(vals)))
        self.cum_a2 = np.concatenate(([0.0], np.cumsum(vals * vals)))
        self.children = {} if axis < d - 1 else None

    def __len__(self):
        return len(self.vals)

    def rank_range(self, lo, hi):
        i1 = int(np.searchsorted(self.coords, lo, side="left"))
        i2 = int(np.searchsorted(self.coords, hi, side="left"))
        return i1, i2

    def child(self, lo: int, hi: int) -> "_Level":
        key = (lo, hi)
        c = self.children.get(key)
        if c is None:
            c = _Level(self.pts[lo:hi], self.vals[lo:hi], self.axis + 1, self.d)
            self.children[key] = c
        return c

    def moments(self, rect_lo, rect_hi):
        i1, i2 = self.rank_range(rect_lo[self.axis], rect_hi[self.axis])
        if i1 >= i2:
            return 0, 0.0, 0.0
        if self.axis == self.d - 1:
            return (
                i2 - i1,
                float(self.cum_a[i2] - self.cum_a[i1]),
                float(self.cum_a2[i2] - self.cum_a2[i1]),
            )
        c, s, s2 = 0, 0.0, 0.0
        for lo, hi in canonical_ranges(len(self.vals), i1, i2):
            cc, cs, cs2 = self.child(lo, hi).moments(rect_lo, rect_hi)
            c += cc
            s += cs
            s2 += cs2
        return c, s, s2

    def best_small(self, rect_lo, rect_hi, dm: int):
        """Max-weight last-axis canonical node with <= dm samples inside the
        rectangle; weight is the node's sum of squared values.  Returns
        (weight, level, lo, hi) or None."""
        i1, i2 = self.rank_range(rect_lo[self.axis], rect_hi[self.axis])
        if i1 >= i2:
            return None
        best = None
        if self.axis == self.d - 1:
            stack = canonical_ranges(len(self.vals), i1, i2)
            while stack:
                lo, hi = stack.pop()
                if hi - lo <= dm:
                    w = float(self.cum_a2[hi] - self.cum_a2[lo])
                    if best is None or w > best[0]:
                        best = (w, self, lo, hi)
                    continue
                mid = (lo + hi) // 2
                if mid > lo:
                    stack.append((lo, mid))
                if hi > mid:
                    stack.append((mid, hi))
            return best
        for lo, hi in canonical_ranges(len(self.vals), i1, i2):
            cand = self.child(lo, hi).best_small(rect_lo, rect_hi, dm)
            if cand is not None and (best is None or cand[0] > best[0]):
                best = cand
        return best

    def small_nodes(self, dm: int):
        """All maximal <= dm-sample last-axis canonical nodes (whole tree)."""
        if self.axis == self.d - 1:
            out = []
            stack = [(0, len(self.vals))]
            while stack:
                lo, hi = stack.pop()
                if hi <= lo:
                    continue
                if hi - lo <= dm:
                    out.append((self, lo, hi))
                    continue
                mid = (lo + hi) // 2
                stack.append((lo, mid))
                stack.append((mid, hi))
            return out
        out = []
        stack = [(0, len(self.vals))]
        while stack:
            lo, hi = stack.pop()
            if hi - lo <= 1 and hi - lo > 0:
                out.extend(self.child(lo, hi).small_nodes(dm))
                continue
            if hi <= lo:
                continue
            out.extend(self.child(lo, hi).small_nodes(dm))
            mid = (lo + hi) // 2
            stack.append((lo, mid))
            stack.append((mid, hi))
        return out


@dataclass
class MaxVarResult:
    witness: Rectangle
    variance: float
    gamma: float
    sample_count: int = 0


def sum_variance(m_u: int, c: int, s: float, s2: float) -> float:
    return m_u * s2 - s * s


def count_variance(m_u: int, c: int) -> float:
    return float(m_u * c - c * c)


def avg_variance(m_u: int, c: int, s: float, s2: float) -> float:
    if c == 0:
        return 0.0
    return (m_u * s2 - s * s) / (m_u * c * c)


class MaxVarIndex:
    """Point-updatable index over the pooled sample answering approximate
    maximum-variance sub-query requests inside a rectangle."""

    def __init__(self, d: int, delta: float = 0.05):
        if not (0.0 < delta < 0.5):
            raise ValueError("0 < delta < 1/2 required")
        self.d = d
        self.delta = delta
        self.by_id = {}
        self.entries = []  # sorted (coord0, id)
        self.row_coords = []  # aligned with entries
        self.row_vals = []
        self.dim_sorted = [[] for _ in range(d)]
        self._version = 0
        self._cache_version = -1
        self._root: Optional[_Level] = None

    def __len__(self):
        return len(self.entries)

    @property
    def dm(self) -> int:
        return max(1, int(self.delta * len(self.entries)))

    # -- updates -----------------------------------------------------------

    def insert_sample(self, t: Tuple) -> None:
        if t.id in self.by_id:
            raise DuplicateSample(f"sample id {t.id} already indexed")
        if len(t.coords) != self.d:
            raise EngineError(f"sample has {len(t.coords)} dims, index {self.d}")
        key = (t.coords[0], t.id)
        p = bisect_left(self.entries, key)
        self.entries.insert(p, key)
        self.row_coords.insert(p, t.coords)
        self.row_vals.insert(p, t.value)
        for j in range(self.d):
            insort(self.dim_sorted[j], t.coords[j])
        self.by_id[t.id] = t
        self._version += 1

    def delete_sample(self, t: Tuple) -> None:
        old = self.by_id.pop(t.id, None)
        if old is None:
            raise MissingSample(f"sample id {t.id} not indexed")
        key = (old.coords[0], old.id)
        p = bisect_left(self.entries, key)
        del self.entries[p]
        del self.row_coords[p]
        del self.row_vals[p]
        for j in range(self.d):
            q = bisect_left(self.dim_sorted[j], old.coords[j])
            del self.dim_sorted[j][q]
        self._version += 1

    def rebuild_from(self, samples) -> None:
        self.by_id = {}
        self.entries = []
        self.row_coords = []
        self.row_vals = []
        self.dim_sorted = [[] for _ in range(self.d)]
        rows = sorted((t.coords[0], t.id, t) for t in samples)
        for x0, tid, t in rows:
            if tid in self.by_id:
                raise DuplicateSample(f"sample id {tid} duplicated")
            self.by_id[tid] = t
            self.entries.append((x0, tid))
            self.row_coords.append(t.coords)
            self.row_vals.append(t.value)
        for j in range(self.d):
            self.dim_sorted[j] = sorted(c[j] for c in self.row_coords)
        self._version += 1

    # -- cached levels ------------------------------------------------------

    def _ensure(self) -> _Level:
        if self._cache_version != self._version or self._root is None:
            n = len(self.entries)
            pts = np.asarray(self.row_coords, dtype=np.float64).reshape(n, self.d)
            vals = np.asarray(self.row_vals, dtype=np.float64)
            self._root = _Level(pts, vals, 0, self.d, presorted=True)
            self._cache_version = self._version
        return self._root

    # -- aggregate queries ---------------------------------------------------

    def moments_in(self, r: Rectangle):
        if len(self.entries) == 0:
            return 0, 0.0, 0.0
        return self._ensure().moments(r.lo, r.hi)

    def count_in(self, r: Rectangle) -> int:
        return self.moments_in(r)[0]

    def kth_coord(self, r: Rectangle, dim: int, k: int) -> float:
        """k-th smallest (0-indexed) dim-coordinate among samples in r."""
        n = self.count_in(r)
        if not (0 <= k < n):
            raise EngineError(f"rank {k} out of range for {n} samples")
        if self.d == 1:
            root = self._ensure()
            i1, _ = root.rank_range(r.lo[0], r.hi[0])
            return float(root.coords[i1 + k])
        cands = self.dim_sorted[dim]
        lo, hi = 0, len(cands)  # find minimal g with count(coord < cands[g]) >= k+1
        while lo < hi:
            mid = (lo + hi) // 2
            clipped_hi = list(r.hi)
            clipped_hi[dim] = cands[mid]
            c = self._ensure().moments(r.lo, clipped_hi)[0]
            if c >= k + 1:
                hi = mid
            else:
                lo = mid + 1
        return float(cands[lo - 1])

    def points_in(self, r: Rectangle):
        """Sample matrix and values inside r (brute mask; cold-path helper)."""
        root = self._ensure()
        pts, vals = root.pts, root.vals
        if len(pts) == 0:
            return pts, vals
        mask = np.ones(len(pts), dtype=bool)
        for j in range(self.d):
            mask &= (pts[:, j] >= r.lo[j]) & (pts[:, j] < r.hi[j])
        return pts[mask], vals[mask]

    def spread_dim(self, r: Rectangle) -> int:
        """Dimension with the longest sample spread inside r (split heuristic)."""
        if self.d == 1:
            return 0
        pts, _ = self.points_in(r)
        if len(pts) == 0:
            return 0
        spread = pts.max(axis=0) - pts.min(axis=0)
        return int(np.argmax(spread))

    # -- max-variance oracles ---------------------------------------------------

    def gamma(self, kind: AggKind) -> float:
        if kind is AggKind.COUNT:
            return 1.0
        if kind is AggKind.SUM:
            return 4.0
        m = max(2, len(self.entries))
        if self.d == 1:
            return 4.0
        return 4.0 * max(1.0, math.log2(m)) ** (self.d + 1)

    def _split_at(self, r: Rectangle, dim: int, cut: float):
        left_hi = list(r.hi)
        left_hi[dim] = cut
        right_lo = list(r.lo)
        right_lo[dim] = cut
        return (
            Rectangle(r.lo, tuple(left_hi)),
            Rectangle(tuple(right_lo), r.hi),
        )

    def maxvar_count(self, r: Rectangle) -> MaxVarResult:
        n = self.count_in(r)
        if n < 2:
            raise EngineError(f"need >= 2 samples in rectangle, have {n}")
        half = n // 2
        dim = self.spread_dim(r)
        cut = self.kth_coord(r, dim, half)
        left, right = self._split_at(r, dim, cut)
        # variance depends only on the count; the witness is the left half
        return MaxVarResult(left, count_variance(n, half), 1.0, half)

    def maxvar_sum(self, r: Rectangle) -> MaxVarResult:
        n = self.count_in(r)
        if n < 2:
            raise EngineError(f"need >= 2 samples in rectangle, have {n}")
        dim = self.spread_dim(r)
        cut = self.kth_coord(r, dim, n // 2)
        left, right = self._split_at(r, dim, cut)
        cl, sl, s2l = self.moments_in(left)
        cr, sr, s2r = self.moments_in(right)
        if s2l >= s2r:
            return MaxVarResult(left, sum_variance(n, cl, sl, s2l), 4.0, cl)
        return MaxVarResult(right, sum_variance(n, cr, sr, s2r), 4.0, cr)

    def maxvar_avg(self, r: Rectangle, dm: Optional[int] = None) -> MaxVarResult:
        n = self.count_in(r)
        dm = self.dm if dm is None else dm
        if n <= 2 * dm:
            raise EngineError(f"need > {2 * dm} samples in rectangle, have {n}")
        if self.d == 1:
            root = self._ensure()
            i1, i2 = root.rank_range(r.lo[0], r.hi[0])
            # exact: the delta*m-sample window with the largest sum of squares
            win = root.cum_a2[i1 + dm : i2 + 1] - root.cum_a2[i1 : i2 - dm + 1]
            l = i1 + int(np.argmax(win))
            s = float(root.cum_a[l + dm] - root.cum_a[l])
            s2 = float(root.cum_a2[l + dm] - root.cum_a2[l])
            witness = self._tight_rect(root.pts[l : l + dm], r)
            return MaxVarResult(witness, avg_variance(n, dm, s, s2), self.gamma(AggKind.AVG), dm)
        best = self._ensure().best_small(r.lo, r.hi, dm)
        if best is None:
            raise EngineError("no canonical node inside rectangle")
        _, level, lo, hi = best
        box_pts = level.pts[lo:hi]
        box_vals = level.vals[lo:hi]
        if len(box_pts) < dm:
            box_pts, box_vals = self._expand(r, box_pts, dm)
        s = float(box_vals.sum())
        s2 = float((box_vals * box_vals).sum())
        witness = self._tight_rect(box_pts, r)
        return MaxVarResult(
            witness, avg_variance(n, len(box_vals), s, s2), self.gamma(AggKind.AVG), len(box_vals)
        )

    def maxvar(self, r: Rectangle, kind: AggKind, dm: Optional[int] = None) -> MaxVarResult:
        if kind is AggKind.COUNT:
            return self.maxvar_count(r)
        if kind is AggKind.SUM:
            return self.maxvar_sum(r)
        if kind is AggKind.AVG:
            return self.maxvar_avg(r, dm)
        raise EngineError(f"no max-variance oracle for {kind}")

    def _tight_rect(self, pts, r: Rectangle) -> Rectangle:
        lo = [max(float(pts[:, j].min()), r.lo[j]) for j in range(self.d)]
        hi = [
            min(math.nextafter(float(pts[:, j].max()), math.inf), r.hi[j])
            for j in range(self.d)
        ]
        return Rectangle(tuple(lo), tuple(hi))

    def _expand(self, r: Rectangle, box_pts, dm: int):
        """Grow a too-small witness box inside r, binary-search style over the
        dimensions in round-robin order, until it holds exactly dm samples.

        A boundary that cannot catch any point with the other dimensions held
        fixed is still loosened to the nearest sample coordinate, so mutually
        thin spans cannot deadlock the expansion.  When only overshooting
        extensions remain (coordinate ties), the smallest one is taken; the
        result then holds slightly more than dm samples, which keeps the
        witness a feasible query."""
        all_pts, all_vals = self.points_in(r)
        n = len(all_pts)
        lo = box_pts.min(axis=0).astype(float).copy()
        hi = box_pts.max(axis=0).astype(float).copy()
        inside = np.ones(n, dtype=bool)
        for j in range(self.d):
            inside &= (all_pts[:, j] >= lo[j]) & (all_pts[:, j] <= hi[j])
        need = dm - int(inside.sum())
        while need > 0:
            progressed = False
            overshoot = None  # (take, dim, side, v, sel)
            for dim in range(self.d):
                for side in (1, -1):
                    beyond = (
                        (all_pts[:, dim] > hi[dim]) if side > 0 else (all_pts[:, dim] < lo[dim])
                    )
                    if not beyond.any():
                        continue
                    others = np.ones(n, dtype=bool)
                    for j in range(self.d):
                        if j != dim:
                            others &= (all_pts[:, j] >= lo[j]) & (all_pts[:, j] <= hi[j])
                    slab = beyond & others
                    if not slab.any():
                        # empty growth: loosen toward the nearest point so the
                        # other dimensions can catch it on a later pass
                        cs = all_pts[beyond, dim]
                        if side > 0:
                            hi[dim] = float(cs.min())
                        else:
                            lo[dim] = float(cs.max())
                        progressed = True
                        continue
                    coords = np.unique(all_pts[slab, dim])
                    if side < 0:
                        coords = coords[::-1]
                    for v in coords:
                        sel = (
                            slab
                            & ~inside
                            & ((all_pts[:, dim] <= v) if side > 0 else (all_pts[:, dim] >= v))
                        )
                        take = int(sel.sum())
                        if take == 0:
                            continue
                        if take > need:
                            if overshoot is None or take < overshoot[0]:
                                overshoot = (take, dim, side, float(v), sel)
                            break
                        if side > 0:
                            hi[dim] = max(hi[dim], float(v))
                        else:
                            lo[dim] = min(lo[dim], float(v))
                        inside |= sel
                        need -= take
                        progressed = True
                        if need == 0:
                            break
                    if need == 0:
                        break
                if need == 0:
                    break
            if need == 0:
                break
            if not progressed:
                if overshoot is None:
                    break  # rectangle exhausted
                take, dim, side, v, sel = overshoot
                if side > 0:
                    hi[dim] = max(hi[dim], v)
                else:
                    lo[dim] = min(lo[dim], v)
                inside |= sel
                need -= take
        return all_pts[inside], all_vals[inside]


class RectStore:
    """The weighted-rectangle side of the AVG oracle: the primary tree's
    canonical rectangles holding <= delta*m samples (after the equal-halves
    split of delta*m..2*delta*m nodes), weighted by their sum of squared
    values.  In 1D the store holds the maximal delta*m-sample intervals
    directly, which is what gives the factor-4 bound without log terms.

    Contents are derived from the index's canonical structure on demand, so
    membership tracks the primary tree under updates by construction."""

    def __init__(self, index: MaxVarIndex, dm: Optional[int] = None):
        self.index = index
        self.dm = index.dm if dm is None else dm

    def rectangles(self):
        idx = self.index
        root = idx._ensure()
        dm = self.dm
        out = []
        if len(root) == 0:
            return out
        if idx.d == 1:
            n = len(root)
            w = min(dm, n)
            for l in range(0, n - w + 1):
                pts = root.pts[l : l + w]
                weight = float(root.cum_a2[l + w] - root.cum_a2[l])
                out.append((idx._tight_rect(pts, Rectangle.unbounded(1)), w, weight))
            return out
        for level, lo, hi in root.small_nodes(dm):
            pts = level.pts[lo:hi]
            weight = float(level.cum_a2[hi] - level.cum_a2[lo])
            out.append((idx._tight_rect(pts, Rectangle.unbounded(idx.d)), hi - lo, weight))
        return out

    def max_weight_in(self, r: Rectangle):
        idx = self.index
        if idx.d == 1:
            root = idx._ensure()
            i1, i2 = root.rank_range(r.lo[0], r.hi[0])
            if i2 - i1 < self.dm:
                return None
            win = root.cum_a2[i1 + self.dm : i2 + 1] - root.cum_a2[i1 : i2 - self.dm + 1]
            l = i1 + int(np.argmax(win))
            return float(win.max()), root.pts[l : l + self.dm]
        best = idx._ensure().best_small(r.lo, r.hi, self.dm)
        if best is None:
            return None
        w, level, lo, hi = best
        return w, level.pts[lo:hi]
