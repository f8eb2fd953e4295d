"""The dynamic partition tree: rectangles, incremental node statistics,
catch-up accumulators, and frontier lookup.

The tree is flattened into arrays consumed by the routing kernel (compiled
or pure-Python, selected in aqptree.kernels).  Nodes are numbered in DFS
preorder with the root at 0; leaves carry a dense ordinal used as the
stratum key by the reservoir.

Catch-up bookkeeping: each node belongs to an absorption epoch.  h_i counts
the node's hits among the epoch's draws, and the node's denominator (the
number of draws made while it was absorbing) is tracked via a global draw
counter g so that N-hat_i = (h_i / h_den_i) * n_ref_i stays consistent even
when a partial re-partition resets only a subtree.  n_ref_i is the archive
size of the snapshot the node's epoch samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from . import kernels
from .model import Rectangle, Relation, Tuple, relation


@dataclass
class NodeStats:
    """Read-only snapshot of one node's statistics."""

    ins_count: int
    ins_sum: float
    del_count: int
    del_sum: float
    h_count: int
    h_sum: float
    h_sumsq: float
    top: list
    bot: list
    top_overflowed: bool
    bot_overflowed: bool
    minmax_stale: bool


class PartitionTree:
    def __init__(self, plan_root, heap_k: int, d: int, built_on_empty: bool = False):
        """plan_root: nested node objects with attributes rect, split_dim,
        split_val, left, right (leaves have left is None)."""
        self.d = d
        self.heap_k = heap_k
        self.built_on_empty = built_on_empty

        rects = []
        split_dim = []
        split_val = []
        left = []
        right = []
        parent = []
        depth = []
        plan_nodes = []

        def flatten(node, rect, par, dep):
            idx = len(rects)
            rects.append(rect)
            split_dim.append(node.split_dim if node.left is not None else 0)
            split_val.append(node.split_val if node.left is not None else 0.0)
            left.append(-1)
            right.append(-1)
            parent.append(par)
            depth.append(dep)
            plan_nodes.append(node)
            if node.left is not None:
                j = node.split_dim
                v = node.split_val
                lo, hi = list(rect.lo), list(rect.hi)
                lhi = list(hi)
                lhi[j] = v
                rlo = list(lo)
                rlo[j] = v
                left[idx] = flatten(node.left, Rectangle(tuple(lo), tuple(lhi)), idx, dep + 1)
                right[idx] = flatten(node.right, Rectangle(tuple(rlo), tuple(hi)), idx, dep + 1)
            return idx

        root_rect = Rectangle.unbounded(d)
        flatten(plan_root, root_rect, -1, 0)

        self.rects = rects
        self.parent = parent
        self.depth = depth
        self.plan_nodes = plan_nodes
        self.n_nodes = len(rects)
        self.topo = kernels.TreeTopo(split_dim, split_val, left, right)
        self.stats = kernels.TreeStats(self.n_nodes, heap_k)
        self._left = left
        self._right = right
        self.leaf_ids = [i for i in range(self.n_nodes) if left[i] < 0]
        self.leaf_ordinal = {nid: k for k, nid in enumerate(self.leaf_ids)}

        # catch-up epoch bookkeeping (cold path, kept outside the kernel)
        self.g = 0
        self.n_ref = [0.0] * self.n_nodes
        self.g_start = [0] * self.n_nodes
        self.h_den_base = [0.0] * self.n_nodes

    # -- structure ----------------------------------------------------------

    def is_leaf(self, i: int) -> bool:
        return self._left[i] < 0

    def children(self, i: int):
        return (self._left[i], self._right[i])

    def ancestor(self, i: int, levels_up: int) -> int:
        node = i
        for _ in range(levels_up):
            if self.parent[node] < 0:
                break
            node = self.parent[node]
        return node

    def subtree_ids(self, root: int):
        out = []
        stack = [root]
        while stack:
            n = stack.pop()
            out.append(n)
            if self._left[n] >= 0:
                stack.append(self._right[n])
                stack.append(self._left[n])
        return out

    def leaves_under(self, root: int):
        return [n for n in self.subtree_ids(root) if self.is_leaf(n)]

    # -- stream updates ------------------------------------------------------

    def find_leaf(self, coords) -> int:
        return kernels.find_leaf(self.topo, coords)

    def route_insert(self, t: Tuple) -> int:
        return kernels.route_insert(self.topo, self.stats, t.coords, t.value)

    def route_delete(self, t: Tuple) -> int:
        return kernels.route_delete(self.topo, self.stats, t.coords, t.value)

    def absorb_catchup(self, t: Tuple, from_node: int = 0) -> int:
        """Fold one uniform snapshot sample into h-statistics along its path."""
        leaf = kernels.route_catchup(self.topo, self.stats, t.coords, t.value, from_node)
        if from_node == 0:
            self.g += 1
        return leaf

    # -- epochs ---------------------------------------------------------------

    def begin_epoch(self, node_ids, n_ref: float, fresh: bool) -> None:
        for i in node_ids:
            if fresh:
                kernels.reset_node(self.stats, i)
                self.h_den_base[i] = 0.0
            else:
                kernels.set_absorbing(self.stats, i, True)
            self.n_ref[i] = n_ref
            self.g_start[i] = self.g

    def freeze_node(self, i: int) -> None:
        if kernels.get_absorbing(self.stats, i):
            self.h_den_base[i] += self.g - self.g_start[i]
            self.g_start[i] = self.g
            kernels.set_absorbing(self.stats, i, False)

    def h_den(self, i: int) -> float:
        base = self.h_den_base[i]
        if kernels.get_absorbing(self.stats, i):
            base += self.g - self.g_start[i]
        return base

    # -- statistics ------------------------------------------------------------

    def node_stats(self, i: int) -> NodeStats:
        ic, isum, dc, dsum = kernels.node_counts(self.stats, i)
        hc, hs, hss = kernels.node_catchup(self.stats, i)
        tov, bov, stale = kernels.node_flags(self.stats, i)
        return NodeStats(
            ic, isum, dc, dsum, hc, hs, hss,
            kernels.node_top(self.stats, i), kernels.node_bot(self.stats, i),
            tov, bov, stale,
        )

    def estimated_population(self, i: int, reservoir=None) -> float:
        """N-hat_i: snapshot-population estimate plus exact post-epoch deltas."""
        hc, _, _ = kernels.node_catchup(self.stats, i)
        den = self.h_den(i)
        if den > 0:
            base = (hc / den) * self.n_ref[i]
        elif reservoir is not None and len(reservoir) > 0:
            base = (reservoir.count_in(self.rects[i]) / len(reservoir)) * self.n_ref[i]
        else:
            base = 0.0
        ic, _, dc, _ = kernels.node_counts(self.stats, i)
        return base + ic - dc

    def estimated_sum(self, i: int, reservoir=None) -> float:
        hc, hs, _ = kernels.node_catchup(self.stats, i)
        den = self.h_den(i)
        if den > 0:
            base = (self.n_ref[i] / den) * hs
        elif reservoir is not None and len(reservoir) > 0:
            base = (self.n_ref[i] / len(reservoir)) * reservoir.sum_in(self.rects[i])
        else:
            base = 0.0
        _, isum, _, dsum = kernels.node_counts(self.stats, i)
        return base + isum - dsum

    # -- frontier ---------------------------------------------------------------

    def frontier(self, q: Rectangle):
        """Maximal nodes fully inside q, plus the leaves q cuts.

        Search stops at covered nodes; disjoint branches are pruned; partial
        internal nodes recurse so the partial set contains leaves only.
        """
        covered = []
        partial = []
        stack = [0]
        while stack:
            i = stack.pop()
            rel = relation(self.rects[i], q)
            if rel is Relation.DISJOINT:
                continue
            if rel is Relation.CONTAINED_IN_Q:
                covered.append(i)
            elif self.is_leaf(i):
                partial.append(i)
            else:
                stack.append(self._right[i])
                stack.append(self._left[i])
        return covered, partial

    # -- serialization -------------------------------------------------------------

    def to_dict(self) -> dict:
        def enc(v):
            if v == math.inf:
                return None
            if v == -math.inf:
                return None
            return v

        nodes = []
        for i in range(self.n_nodes):
            s = self.node_stats(i)
            nodes.append(
                {
                    "lo": [enc(v) for v in self.rects[i].lo],
                    "hi": [enc(v) for v in self.rects[i].hi],
                    "left": self._left[i],
                    "right": self._right[i],
                    "split_dim": self.topo_split(i)[0],
                    "split_val": self.topo_split(i)[1],
                    "ins_count": s.ins_count,
                    "ins_sum": s.ins_sum,
                    "del_count": s.del_count,
                    "del_sum": s.del_sum,
                    "h_count": s.h_count,
                    "h_sum": s.h_sum,
                    "h_sumsq": s.h_sumsq,
                    "top": s.top,
                    "bot": s.bot,
                    "top_overflowed": s.top_overflowed,
                    "bot_overflowed": s.bot_overflowed,
                    "minmax_stale": s.minmax_stale,
                    "n_ref": self.n_ref[i],
                    "h_den": self.h_den(i),
                }
            )
        return {
            "d": self.d,
            "heap_k": self.heap_k,
            "built_on_empty": self.built_on_empty,
            "nodes": nodes,
        }

    def topo_split(self, i: int):
        if self.is_leaf(i):
            return (-1, None)
        return (self.plan_nodes[i].split_dim, self.plan_nodes[i].split_val)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def tree_from_dict(obj: dict) -> PartitionTree:
    """Rebuild a tree (structure and statistics) from to_dict output."""
    nodes = obj["nodes"]

    class _N:
        __slots__ = ("split_dim", "split_val", "left", "right", "rect")

    def build(i):
        n = _N()
        raw = nodes[i]
        if raw["left"] < 0:
            n.split_dim, n.split_val, n.left, n.right = -1, math.nan, None, None
        else:
            n.split_dim = raw["split_dim"]
            n.split_val = raw["split_val"]
            n.left = build(raw["left"])
            n.right = build(raw["right"])
        return n

    tree = PartitionTree(build(0), obj["heap_k"], obj["d"], obj["built_on_empty"])
    for i, raw in enumerate(nodes):
        kernels.load_node(
            tree.stats,
            i,
            raw["ins_count"],
            raw["ins_sum"],
            raw["del_count"],
            raw["del_sum"],
            raw["h_count"],
            raw["h_sum"],
            raw["h_sumsq"],
            raw["top"],
            raw["bot"],
            raw["top_overflowed"],
            raw["bot_overflowed"],
            raw["minmax_stale"],
        )
        tree.n_ref[i] = raw["n_ref"]
        tree.h_den_base[i] = raw["h_den"]
        tree.g_start[i] = tree.g
    return tree
