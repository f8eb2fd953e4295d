"""Pooled uniform sample of the archive, maintained under insertions and
deletions, exposing virtual per-leaf strata.

One physical pool serves every leaf: the stratum of a leaf is just the
subset of the pool inside its rectangle, kept in a per-leaf index that is
rebuilt when the partitioning changes and adjusted in place between
rebuilds.  Pool size stays within [m, 2m] once the archive holds at least
2m tuples: below-capacity inserts are always kept, a full pool accepts an
insert with probability |S|/N (replacing a uniform victim), and a deletion
that would drop the pool below m discards it and redraws 2m fresh samples.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .archive import SINGLETON, Archive
from .model import Rectangle, Tuple

UNTOUCHED = "untouched"
REMOVED = "removed"
REFILLED = "refilled"
KEPT = "kept"
SKIPPED = "skipped"


@dataclass
class PoolChange:
    outcome: str
    added: list = field(default_factory=list)
    removed: list = field(default_factory=list)


class StratumIndex:
    """Leaf-keyed view of the pool with cached per-leaf arrays."""

    def __init__(self, d: int, n_leaves: int, leaf_of):
        self.d = d
        self.leaf_of = leaf_of
        self.members = [dict() for _ in range(n_leaves)]
        self._cache = [None] * n_leaves

    def add(self, t: Tuple) -> int:
        leaf = self.leaf_of(t.coords)
        self.members[leaf][t.id] = t
        self._cache[leaf] = None
        return leaf

    def remove(self, t: Tuple) -> int:
        leaf = self.leaf_of(t.coords)
        self.members[leaf].pop(t.id, None)
        self._cache[leaf] = None
        return leaf

    def size(self, leaf: int) -> int:
        return len(self.members[leaf])

    def arrays(self, leaf: int):
        c = self._cache[leaf]
        if c is None:
            mem = self.members[leaf]
            n = len(mem)
            pts = np.empty((n, self.d))
            vals = np.empty(n)
            for i, t in enumerate(mem.values()):
                pts[i] = t.coords
                vals[i] = t.value
            c = (pts, vals)
            self._cache[leaf] = c
        return c

    def mask_in(self, leaf: int, r: Rectangle):
        pts, vals = self.arrays(leaf)
        if len(vals) == 0:
            return vals, None
        mask = np.ones(len(vals), dtype=bool)
        for j in range(self.d):
            mask &= (pts[:, j] >= r.lo[j]) & (pts[:, j] < r.hi[j])
        return vals, mask

    def moments_in(self, leaf: int, r: Rectangle):
        """(qualifying count, sum, sum of squares) of the stratum inside r."""
        vals, mask = self.mask_in(leaf, r)
        if mask is None:
            return 0, 0.0, 0.0
        sel = vals[mask]
        return len(sel), float(sel.sum()), float((sel * sel).sum())

    def extrema_in(self, leaf: int, r: Rectangle):
        vals, mask = self.mask_in(leaf, r)
        if mask is None:
            return None
        sel = vals[mask]
        if len(sel) == 0:
            return None
        return float(sel.min()), float(sel.max())


class Reservoir:
    def __init__(self, m: int, rng: Optional[random.Random] = None, refill_mode: str = SINGLETON):
        self.m = m
        self.cap = 2 * m
        self.rng = rng or random.Random()
        self.refill_mode = refill_mode
        self.pool = {}
        self._ids = []
        self._pos = {}
        self.strata: Optional[StratumIndex] = None
        self._global_cache = None

    def __len__(self):
        return len(self.pool)

    def __contains__(self, tid):
        return tid in self.pool

    def samples(self):
        return list(self.pool.values())

    # -- pool bookkeeping ---------------------------------------------------

    def _add(self, t: Tuple):
        self.pool[t.id] = t
        self._pos[t.id] = len(self._ids)
        self._ids.append(t.id)
        if self.strata is not None:
            self.strata.add(t)
        self._global_cache = None

    def _remove(self, tid) -> Tuple:
        t = self.pool.pop(tid)
        p = self._pos.pop(tid)
        last = self._ids.pop()
        if last != tid:
            self._ids[p] = last
            self._pos[last] = p
        if self.strata is not None:
            self.strata.remove(t)
        self._global_cache = None
        return t

    def attach_tree(self, tree) -> None:
        """Re-key the stratum index to a (new) tree's leaf layout."""
        idx = StratumIndex(tree.d, len(tree.leaf_ids), lambda c: tree.leaf_ordinal[tree.find_leaf(c)])
        for t in self.pool.values():
            idx.add(t)
        self.strata = idx

    def fill_from(self, archive: Archive) -> PoolChange:
        removed = list(self.pool.values())
        for tid in list(self.pool):
            self._remove(tid)
        n = min(self.cap, archive.N)
        added = archive.sample_uniform(n, self.refill_mode, self.rng)
        for t in added:
            self._add(t)
        return PoolChange(REFILLED, added=list(added), removed=removed)

    # -- stream maintenance ---------------------------------------------------

    def on_insert(self, t: Tuple, archive_size: int) -> PoolChange:
        """archive_size is N counted after the triggering insert.

        Below capacity the tuple is added outright only while the pool still
        holds the entire live set (the startup / post-refill regime the
        always-add rule is meant for); once deletions have opened a gap,
        unconditional adds would over-represent new arrivals, so the
        standard replacement coin at the current size keeps the pool a
        uniform subset."""
        size = len(self.pool)
        if size < self.cap and size == archive_size - 1:
            self._add(t)
            return PoolChange(KEPT, added=[t])
        if size == 0:
            return PoolChange(SKIPPED)
        if self.rng.random() < size / archive_size:
            victim_id = self._ids[self.rng.randrange(len(self._ids))]
            victim = self._remove(victim_id)
            self._add(t)
            return PoolChange(KEPT, added=[t], removed=[victim])
        return PoolChange(SKIPPED)

    def on_delete(self, tid, archive: Archive) -> PoolChange:
        if tid not in self.pool:
            return PoolChange(UNTOUCHED)
        if len(self.pool) > self.m:
            t = self._remove(tid)
            return PoolChange(REMOVED, removed=[t])
        return self.fill_from(archive)

    # -- strata ------------------------------------------------------------------

    def stratum(self, r: Rectangle):
        """(tuples inside r, their count); indexed per leaf, filtered otherwise."""
        out = [t for t in self.pool.values() if _inside(t.coords, r)]
        return out, len(out)

    def stratum_size(self, leaf: int) -> int:
        return self.strata.size(leaf) if self.strata is not None else 0

    def _globals(self):
        c = self._global_cache
        if c is None:
            n = len(self.pool)
            d = 1 if n == 0 else len(next(iter(self.pool.values())).coords)
            pts = np.empty((n, d))
            vals = np.empty(n)
            for i, t in enumerate(self.pool.values()):
                pts[i] = t.coords
                vals[i] = t.value
            c = (pts, vals)
            self._global_cache = c
        return c

    def count_in(self, r: Rectangle) -> int:
        pts, vals = self._globals()
        if len(vals) == 0:
            return 0
        return int(_mask(pts, r).sum())

    def sum_in(self, r: Rectangle) -> float:
        pts, vals = self._globals()
        if len(vals) == 0:
            return 0.0
        return float(vals[_mask(pts, r)].sum())


def _inside(coords, r: Rectangle) -> bool:
    for c, lo, hi in zip(coords, r.lo, r.hi):
        if c < lo or c >= hi:
            return False
    return True


def _mask(pts, r: Rectangle):
    mask = np.ones(len(pts), dtype=bool)
    for j in range(pts.shape[1]):
        mask &= (pts[:, j] >= r.lo[j]) & (pts[:, j] < r.hi[j])
    return mask
