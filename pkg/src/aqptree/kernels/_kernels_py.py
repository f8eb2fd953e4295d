"""Pure-Python tree routing kernel.

Reference implementation of the hot per-event path: walking a tuple from
the root to its leaf while updating node statistics and the bounded
MIN/MAX heaps.  The compiled twin in _kernels.pyx implements exactly the
same semantics; parity is enforced by tests/test_kernels.py.

Heap convention: `top` keeps the heap_k largest values seen (for MAX),
`bot` the heap_k smallest (for MIN); both stored as ascending lists.
Running sums use Neumaier compensation so long streams do not erode the
variance estimates.
"""

from bisect import bisect_left, insort

IMPL_NAME = "python"


class TreeTopo:
    """Flattened tree: node 0 is the root, leaves have left == -1."""

    def __init__(self, split_dim, split_val, left, right):
        self.split_dim = list(split_dim)
        self.split_val = list(split_val)
        self.left = list(left)
        self.right = list(right)
        self.n_nodes = len(self.left)


class TreeStats:
    def __init__(self, n_nodes, heap_k):
        self.n_nodes = n_nodes
        self.heap_k = heap_k
        z = [0.0] * n_nodes
        self.ins_count = [0] * n_nodes
        self.del_count = [0] * n_nodes
        self.ins_sum = list(z)
        self.ins_sum_c = list(z)
        self.del_sum = list(z)
        self.del_sum_c = list(z)
        self.h_count = [0] * n_nodes
        self.h_sum = list(z)
        self.h_sum_c = list(z)
        self.h_sumsq = list(z)
        self.h_sumsq_c = list(z)
        self.top = [[] for _ in range(n_nodes)]
        self.bot = [[] for _ in range(n_nodes)]
        self.top_overflowed = [False] * n_nodes
        self.bot_overflowed = [False] * n_nodes
        self.minmax_stale = [False] * n_nodes
        self.absorbing = [True] * n_nodes


def _add(vals, comps, i, x):
    # Neumaier compensated accumulation into vals[i]
    s = vals[i]
    t = s + x
    if abs(s) >= abs(x):
        comps[i] += (s - t) + x
    else:
        comps[i] += (x - t) + s
    vals[i] = t


def find_leaf(topo, coords):
    left = topo.left
    node = 0
    while left[node] >= 0:
        if coords[topo.split_dim[node]] < topo.split_val[node]:
            node = left[node]
        else:
            node = topo.right[node]
    return node


def _heap_push_top(stats, node, v):
    row = stats.top[node]
    if len(row) < stats.heap_k:
        insort(row, v)
        return
    stats.top_overflowed[node] = True
    if v > row[0]:
        row.pop(0)
        insort(row, v)


def _heap_push_bot(stats, node, v):
    row = stats.bot[node]
    if len(row) < stats.heap_k:
        insort(row, v)
        return
    stats.bot_overflowed[node] = True
    if v < row[-1]:
        row.pop()
        insort(row, v)


def _heap_remove(stats, node, v):
    for row, overflowed in (
        (stats.top[node], stats.top_overflowed[node]),
        (stats.bot[node], stats.bot_overflowed[node]),
    ):
        i = bisect_left(row, v)
        if i < len(row) and row[i] == v:
            row.pop(i)
            if overflowed and not row:
                stats.minmax_stale[node] = True
        elif not overflowed:
            # deleting a value this heap never saw: pre-build tuple
            stats.minmax_stale[node] = True


def route_insert(topo, stats, coords, value):
    left, right, sdim, sval = topo.left, topo.right, topo.split_dim, topo.split_val
    ins_count, ins_sum, ins_sum_c = stats.ins_count, stats.ins_sum, stats.ins_sum_c
    node = 0
    while True:
        ins_count[node] += 1
        _add(ins_sum, ins_sum_c, node, value)
        _heap_push_top(stats, node, value)
        _heap_push_bot(stats, node, value)
        nxt = left[node]
        if nxt < 0:
            return node
        node = nxt if coords[sdim[node]] < sval[node] else right[node]


def route_delete(topo, stats, coords, value):
    left, right, sdim, sval = topo.left, topo.right, topo.split_dim, topo.split_val
    del_count, del_sum, del_sum_c = stats.del_count, stats.del_sum, stats.del_sum_c
    node = 0
    while True:
        del_count[node] += 1
        _add(del_sum, del_sum_c, node, value)
        _heap_remove(stats, node, value)
        nxt = left[node]
        if nxt < 0:
            return node
        node = nxt if coords[sdim[node]] < sval[node] else right[node]


def route_catchup(topo, stats, coords, value, from_node=0):
    """Absorb one catch-up sample along its path; the sample is not stored.

    Nodes with absorbing == False keep their statistics frozen (used during
    partial re-partitions when a node is already fully represented).
    """
    left, right, sdim, sval = topo.left, topo.right, topo.split_dim, topo.split_val
    h_count = stats.h_count
    h_sum, h_sum_c = stats.h_sum, stats.h_sum_c
    h_sumsq, h_sumsq_c = stats.h_sumsq, stats.h_sumsq_c
    absorbing = stats.absorbing
    node = from_node
    while True:
        if absorbing[node]:
            h_count[node] += 1
            _add(h_sum, h_sum_c, node, value)
            _add(h_sumsq, h_sumsq_c, node, value * value)
        nxt = left[node]
        if nxt < 0:
            return node
        node = nxt if coords[sdim[node]] < sval[node] else right[node]


# -- accessors (identical across implementations) --------------------------


def node_counts(stats, i):
    return (
        stats.ins_count[i],
        stats.ins_sum[i] + stats.ins_sum_c[i],
        stats.del_count[i],
        stats.del_sum[i] + stats.del_sum_c[i],
    )


def node_catchup(stats, i):
    return (
        stats.h_count[i],
        stats.h_sum[i] + stats.h_sum_c[i],
        stats.h_sumsq[i] + stats.h_sumsq_c[i],
    )


def node_top(stats, i):
    return list(stats.top[i])


def node_bot(stats, i):
    return list(stats.bot[i])


def node_flags(stats, i):
    return (stats.top_overflowed[i], stats.bot_overflowed[i], stats.minmax_stale[i])


def set_absorbing(stats, i, flag):
    stats.absorbing[i] = bool(flag)


def get_absorbing(stats, i):
    return bool(stats.absorbing[i])


def reset_node(stats, i):
    stats.ins_count[i] = 0
    stats.del_count[i] = 0
    stats.ins_sum[i] = stats.ins_sum_c[i] = 0.0
    stats.del_sum[i] = stats.del_sum_c[i] = 0.0
    stats.h_count[i] = 0
    stats.h_sum[i] = stats.h_sum_c[i] = 0.0
    stats.h_sumsq[i] = stats.h_sumsq_c[i] = 0.0
    stats.top[i] = []
    stats.bot[i] = []
    stats.top_overflowed[i] = False
    stats.bot_overflowed[i] = False
    stats.minmax_stale[i] = False
    stats.absorbing[i] = True


def load_node(stats, i, ins_count, ins_sum, del_count, del_sum,
              h_count, h_sum, h_sumsq, top, bot,
              top_overflowed, bot_overflowed, minmax_stale):
    stats.ins_count[i] = int(ins_count)
    stats.ins_sum[i] = float(ins_sum)
    stats.ins_sum_c[i] = 0.0
    stats.del_count[i] = int(del_count)
    stats.del_sum[i] = float(del_sum)
    stats.del_sum_c[i] = 0.0
    stats.h_count[i] = int(h_count)
    stats.h_sum[i] = float(h_sum)
    stats.h_sum_c[i] = 0.0
    stats.h_sumsq[i] = float(h_sumsq)
    stats.h_sumsq_c[i] = 0.0
    stats.top[i] = sorted(float(v) for v in top)
    stats.bot[i] = sorted(float(v) for v in bot)
    stats.top_overflowed[i] = bool(top_overflowed)
    stats.bot_overflowed[i] = bool(bot_overflowed)
    stats.minmax_stale[i] = bool(minmax_stale)


def copy_node(dst, di, src, si):
    dst.ins_count[di] = src.ins_count[si]
    dst.del_count[di] = src.del_count[si]
    dst.ins_sum[di] = src.ins_sum[si]
    dst.ins_sum_c[di] = src.ins_sum_c[si]
    dst.del_sum[di] = src.del_sum[si]
    dst.del_sum_c[di] = src.del_sum_c[si]
    dst.h_count[di] = src.h_count[si]
    dst.h_sum[di] = src.h_sum[si]
    dst.h_sum_c[di] = src.h_sum_c[si]
    dst.h_sumsq[di] = src.h_sumsq[si]
    dst.h_sumsq_c[di] = src.h_sumsq_c[si]
    dst.top[di] = list(src.top[si])
    dst.bot[di] = list(src.bot[si])
    dst.top_overflowed[di] = src.top_overflowed[si]
    dst.bot_overflowed[di] = src.bot_overflowed[si]
    dst.minmax_stale[di] = src.minmax_stale[si]
    dst.absorbing[di] = src.absorbing[si]
