# cython: language_level=3
"""Compiled tree routing kernel; semantics mirror _kernels_py exactly."""

import numpy as np

from libc.math cimport fabs

IMPL_NAME = "cython"


cdef class TreeTopo:
    cdef public int n_nodes
    cdef int[::1] split_dim
    cdef double[::1] split_val
    cdef int[::1] left
    cdef int[::1] right

    def __init__(self, split_dim, split_val, left, right):
        self.split_dim = np.ascontiguousarray(split_dim, dtype=np.int32)
        self.split_val = np.ascontiguousarray(split_val, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int32)
        self.right = np.ascontiguousarray(right, dtype=np.int32)
        self.n_nodes = self.left.shape[0]


cdef class TreeStats:
    cdef public int n_nodes
    cdef public int heap_k
    cdef long[::1] ins_count
    cdef long[::1] del_count
    cdef double[::1] ins_sum
    cdef double[::1] ins_sum_c
    cdef double[::1] del_sum
    cdef double[::1] del_sum_c
    cdef long[::1] h_count
    cdef double[::1] h_sum
    cdef double[::1] h_sum_c
    cdef double[::1] h_sumsq
    cdef double[::1] h_sumsq_c
    cdef double[:, ::1] top
    cdef double[:, ::1] bot
    cdef int[::1] top_len
    cdef int[::1] bot_len
    cdef char[::1] top_overflowed
    cdef char[::1] bot_overflowed
    cdef char[::1] minmax_stale
    cdef char[::1] absorbing

    def __init__(self, n_nodes, heap_k):
        self.n_nodes = n_nodes
        self.heap_k = heap_k
        self.ins_count = np.zeros(n_nodes, dtype=np.int64)
        self.del_count = np.zeros(n_nodes, dtype=np.int64)
        self.ins_sum = np.zeros(n_nodes)
        self.ins_sum_c = np.zeros(n_nodes)
        self.del_sum = np.zeros(n_nodes)
        self.del_sum_c = np.zeros(n_nodes)
        self.h_count = np.zeros(n_nodes, dtype=np.int64)
        self.h_sum = np.zeros(n_nodes)
        self.h_sum_c = np.zeros(n_nodes)
        self.h_sumsq = np.zeros(n_nodes)
        self.h_sumsq_c = np.zeros(n_nodes)
        self.top = np.zeros((n_nodes, heap_k))
        self.bot = np.zeros((n_nodes, heap_k))
        self.top_len = np.zeros(n_nodes, dtype=np.int32)
        self.bot_len = np.zeros(n_nodes, dtype=np.int32)
        self.top_overflowed = np.zeros(n_nodes, dtype=np.int8)
        self.bot_overflowed = np.zeros(n_nodes, dtype=np.int8)
        self.minmax_stale = np.zeros(n_nodes, dtype=np.int8)
        self.absorbing = np.ones(n_nodes, dtype=np.int8)


cdef inline void _add(double[::1] vals, double[::1] comps, int i, double x) nogil:
    cdef double s = vals[i]
    cdef double t = s + x
    if fabs(s) >= fabs(x):
        comps[i] += (s - t) + x
    else:
        comps[i] += (x - t) + s
    vals[i] = t


cdef inline int _row_bisect_left(double[:, ::1] rows, int node, int n, double v) nogil:
    cdef int lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if rows[node, mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline void _row_insert(double[:, ::1] rows, int node, int n, int pos, double v) nogil:
    cdef int j
    for j in range(n, pos, -1):
        rows[node, j] = rows[node, j - 1]
    rows[node, pos] = v


cdef inline void _row_remove(double[:, ::1] rows, int node, int n, int pos) nogil:
    cdef int j
    for j in range(pos, n - 1):
        rows[node, j] = rows[node, j + 1]


cdef inline void _push_top(TreeStats stats, int node, double v) nogil:
    cdef int n = stats.top_len[node]
    cdef int pos
    if n < stats.heap_k:
        pos = _row_bisect_left(stats.top, node, n, v)
        _row_insert(stats.top, node, n, pos, v)
        stats.top_len[node] = n + 1
        return
    stats.top_overflowed[node] = 1
    if v > stats.top[node, 0]:
        _row_remove(stats.top, node, n, 0)
        pos = _row_bisect_left(stats.top, node, n - 1, v)
        _row_insert(stats.top, node, n - 1, pos, v)


cdef inline void _push_bot(TreeStats stats, int node, double v) nogil:
    cdef int n = stats.bot_len[node]
    cdef int pos
    if n < stats.heap_k:
        pos = _row_bisect_left(stats.bot, node, n, v)
        _row_insert(stats.bot, node, n, pos, v)
        stats.bot_len[node] = n + 1
        return
    stats.bot_overflowed[node] = 1
    if v < stats.bot[node, n - 1]:
        _row_remove(stats.bot, node, n, n - 1)
        pos = _row_bisect_left(stats.bot, node, n - 1, v)
        _row_insert(stats.bot, node, n - 1, pos, v)


cdef inline void _heap_remove(TreeStats stats, int node, double v) nogil:
    cdef int n, pos
    # top
    n = stats.top_len[node]
    pos = _row_bisect_left(stats.top, node, n, v)
    if pos < n and stats.top[node, pos] == v:
        _row_remove(stats.top, node, n, pos)
        stats.top_len[node] = n - 1
        if stats.top_overflowed[node] and n == 1:
            stats.minmax_stale[node] = 1
    elif not stats.top_overflowed[node]:
        stats.minmax_stale[node] = 1
    # bot
    n = stats.bot_len[node]
    pos = _row_bisect_left(stats.bot, node, n, v)
    if pos < n and stats.bot[node, pos] == v:
        _row_remove(stats.bot, node, n, pos)
        stats.bot_len[node] = n - 1
        if stats.bot_overflowed[node] and n == 1:
            stats.minmax_stale[node] = 1
    elif not stats.bot_overflowed[node]:
        stats.minmax_stale[node] = 1


def find_leaf(TreeTopo topo, coords):
    cdef int node = 0
    while topo.left[node] >= 0:
        if <double> coords[topo.split_dim[node]] < topo.split_val[node]:
            node = topo.left[node]
        else:
            node = topo.right[node]
    return node


def route_insert(TreeTopo topo, TreeStats stats, coords, double value):
    cdef int node = 0
    cdef int nxt
    while True:
        stats.ins_count[node] += 1
        _add(stats.ins_sum, stats.ins_sum_c, node, value)
        _push_top(stats, node, value)
        _push_bot(stats, node, value)
        nxt = topo.left[node]
        if nxt < 0:
            return node
        if <double> coords[topo.split_dim[node]] < topo.split_val[node]:
            node = nxt
        else:
            node = topo.right[node]


def route_delete(TreeTopo topo, TreeStats stats, coords, double value):
    cdef int node = 0
    cdef int nxt
    while True:
        stats.del_count[node] += 1
        _add(stats.del_sum, stats.del_sum_c, node, value)
        _heap_remove(stats, node, value)
        nxt = topo.left[node]
        if nxt < 0:
            return node
        if <double> coords[topo.split_dim[node]] < topo.split_val[node]:
            node = nxt
        else:
            node = topo.right[node]


def route_catchup(TreeTopo topo, TreeStats stats, coords, double value, int from_node=0):
    cdef int node = from_node
    cdef int nxt
    while True:
        if stats.absorbing[node]:
            stats.h_count[node] += 1
            _add(stats.h_sum, stats.h_sum_c, node, value)
            _add(stats.h_sumsq, stats.h_sumsq_c, node, value * value)
        nxt = topo.left[node]
        if nxt < 0:
            return node
        if <double> coords[topo.split_dim[node]] < topo.split_val[node]:
            node = nxt
        else:
            node = topo.right[node]


def node_counts(TreeStats stats, int i):
    return (
        stats.ins_count[i],
        stats.ins_sum[i] + stats.ins_sum_c[i],
        stats.del_count[i],
        stats.del_sum[i] + stats.del_sum_c[i],
    )


def node_catchup(TreeStats stats, int i):
    return (
        stats.h_count[i],
        stats.h_sum[i] + stats.h_sum_c[i],
        stats.h_sumsq[i] + stats.h_sumsq_c[i],
    )


def node_top(TreeStats stats, int i):
    return [stats.top[i, j] for j in range(stats.top_len[i])]


def node_bot(TreeStats stats, int i):
    return [stats.bot[i, j] for j in range(stats.bot_len[i])]


def node_flags(TreeStats stats, int i):
    return (
        bool(stats.top_overflowed[i]),
        bool(stats.bot_overflowed[i]),
        bool(stats.minmax_stale[i]),
    )


def set_absorbing(TreeStats stats, int i, flag):
    stats.absorbing[i] = 1 if flag else 0


def get_absorbing(TreeStats stats, int i):
    return bool(stats.absorbing[i])


def reset_node(TreeStats stats, int i):
    stats.ins_count[i] = 0
    stats.del_count[i] = 0
    stats.ins_sum[i] = stats.ins_sum_c[i] = 0.0
    stats.del_sum[i] = stats.del_sum_c[i] = 0.0
    stats.h_count[i] = 0
    stats.h_sum[i] = stats.h_sum_c[i] = 0.0
    stats.h_sumsq[i] = stats.h_sumsq_c[i] = 0.0
    stats.top_len[i] = 0
    stats.bot_len[i] = 0
    stats.top_overflowed[i] = 0
    stats.bot_overflowed[i] = 0
    stats.minmax_stale[i] = 0
    stats.absorbing[i] = 1


def load_node(TreeStats stats, int i, ins_count, ins_sum, del_count, del_sum,
              h_count, h_sum, h_sumsq, top, bot,
              top_overflowed, bot_overflowed, minmax_stale):
    cdef int j
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
    top = sorted(float(v) for v in top)
    bot = sorted(float(v) for v in bot)
    if len(top) > stats.heap_k or len(bot) > stats.heap_k:
        raise ValueError("heap contents exceed heap_k")
    for j in range(len(top)):
        stats.top[i, j] = top[j]
    for j in range(len(bot)):
        stats.bot[i, j] = bot[j]
    stats.top_len[i] = len(top)
    stats.bot_len[i] = len(bot)
    stats.top_overflowed[i] = 1 if top_overflowed else 0
    stats.bot_overflowed[i] = 1 if bot_overflowed else 0
    stats.minmax_stale[i] = 1 if minmax_stale else 0


def copy_node(TreeStats dst, int di, TreeStats src, int si):
    cdef int j
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
    if dst.heap_k != src.heap_k:
        raise ValueError("heap_k mismatch")
    for j in range(src.top_len[si]):
        dst.top[di, j] = src.top[si, j]
    for j in range(src.bot_len[si]):
        dst.bot[di, j] = src.bot[si, j]
    dst.top_len[di] = src.top_len[si]
    dst.bot_len[di] = src.bot_len[si]
    dst.top_overflowed[di] = src.top_overflowed[si]
    dst.bot_overflowed[di] = src.bot_overflowed[si]
    dst.minmax_stale[di] = src.minmax_stale[si]
    dst.absorbing[di] = src.absorbing[si]
