#!/usr/bin/env python3
"""Benchmark the compiled routing kernel against the pure-Python fallback.

Two measurements:
  raw      route_insert/route_delete micro-benchmark on a fixed tree
  engine   end-to-end update throughput of the full engine

Run:  python benchmarks/bench_kernels.py [--events N] [--raw-ops N]
"""

import argparse
import random
import time

from aqptree.kernels import _kernels_py

try:
    from aqptree.kernels import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def build_topo(impl, n_leaves, rng):
    nodes = []

    def rec(lo, hi, leaves):
        idx = len(nodes)
        nodes.append([0, 0.0, -1, -1])
        if leaves == 1:
            return idx
        cut = (lo + hi) / 2
        nodes[idx][1] = cut
        nodes[idx][2] = rec(lo, cut, leaves // 2)
        nodes[idx][3] = rec(cut, hi, leaves - leaves // 2)
        return idx

    rec(0.0, 1.0, n_leaves)
    return (
        impl.TreeTopo(
            [n[0] for n in nodes],
            [n[1] for n in nodes],
            [n[2] for n in nodes],
            [n[3] for n in nodes],
        ),
        len(nodes),
    )


def bench_raw(impl, n_ops, heap_k=32, n_leaves=64):
    rng = random.Random(3)
    topo, n_nodes = build_topo(impl, n_leaves, rng)
    stats = impl.TreeStats(n_nodes, heap_k)
    ops = []
    live = []
    for _ in range(n_ops):
        if live and rng.random() < 0.1:
            ops.append(("d", *live.pop(rng.randrange(len(live)))))
        else:
            x, v = rng.random(), rng.random()
            live.append((x, v))
            ops.append(("i", x, v))
    t0 = time.perf_counter()
    for op, x, v in ops:
        if op == "i":
            impl.route_insert(topo, stats, (x,), v)
        else:
            impl.route_delete(topo, stats, (x,), v)
    dt = time.perf_counter() - t0
    return n_ops / dt


def bench_engine(impl_name, n_events):
    import importlib
    import os

    os.environ.pop("AQPTREE_PURE_PYTHON", None)
    if impl_name == "python":
        os.environ["AQPTREE_PURE_PYTHON"] = "1"
    import aqptree.kernels

    importlib.reload(aqptree.kernels)
    import aqptree.synopsis

    importlib.reload(aqptree.synopsis)
    import aqptree.engine

    importlib.reload(aqptree.engine)
    from aqptree.model import EngineConfig, Tuple

    rng = random.Random(7)
    events = []
    nid = 1
    live = []
    for _ in range(n_events):
        if live and rng.random() < 0.05:
            j = rng.randrange(len(live))
            tid = live[j]
            live[j] = live[-1]
            live.pop()
            events.append(("delete", tid))
        else:
            events.append(("insert", Tuple(nid, (rng.random(),), rng.lognormvariate(0, 1))))
            live.append(nid)
            nid += 1
    cfg = EngineConfig(d=1, k=64, m=500, catchup_ratio=0.1, seed=1, floor_c=0.05, catchup_batch=4)
    eng = aqptree.engine.Engine(cfg)
    init_at = min(50_000, n_events // 10)
    for ev in events[:init_at]:
        eng.process_event(ev)
    eng.initialize()
    t0 = time.perf_counter()
    for ev in events[init_at:]:
        eng.process_event(ev)
    dt = time.perf_counter() - t0
    return (n_events - init_at) / dt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--events", type=int, default=300_000)
    ap.add_argument("--raw-ops", type=int, default=500_000)
    args = ap.parse_args()

    impls = [("python", _kernels_py)]
    if _kernels_cy is not None:
        impls.append(("cython", _kernels_cy))
    else:
        print("compiled kernel not built (run: python setup.py build_ext --inplace)")

    print(f"raw routing kernel ({args.raw_ops:,} ops, 64-leaf tree):")
    base = None
    for name, impl in impls:
        rate = bench_raw(impl, args.raw_ops)
        base = base or rate
        print(f"  {name:>7}: {rate:12,.0f} ops/s   ({rate / base:.2f}x)")

    print(f"end-to-end engine updates ({args.events:,} events):")
    base = None
    for name, _ in impls:
        rate = bench_engine(name, args.events)
        base = base or rate
        print(f"  {name:>7}: {rate:12,.0f} events/s ({rate / base:.2f}x)")


if __name__ == "__main__":
    main()
