"""Stream replay harness: drives one or more engines over an identical
event sequence, scores answers against exact ground truth, and emits
deterministic JSON reports.

Baselines:
  rs   uniform reservoir sample of the whole dataset (insert/delete capable)
  srs  stratified reservoir: equal-depth strata on the first predicate
       dimension, one reservoir per stratum

Each engine gets its own archive replica so deletions and refills stay
isolated; every engine sees exactly the same events in the same order.
Reports omit wall-clock numbers unless timing is requested, so a fixed
seed yields bit-identical JSON.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .archive import Archive
from .engine import Engine
from .estimator import QueryAnswer
from .model import (
    AggKind,
    EngineConfig,
    EngineError,
    Query,
    Rectangle,
    Tuple,
    Unanswerable,
    z_for_confidence,
)

UNIFORM = "uniform"
SKEWED = "skewed"
SORTED_ARRIVAL = "sorted"


# -- baseline engines --------------------------------------------------------


class RsEngine:
    """Plain uniform reservoir over the whole dataset."""

    name = "rs"

    def __init__(self, d: int, pool_target: int, seed: int = 0):
        from .reservoir import Reservoir

        self.archive = Archive(d)
        self.d = d
        self.reservoir = Reservoir(max(1, pool_target // 2), random.Random(seed * 911 + 5))
        self.initialized = False

    def initialize(self) -> None:
        self.reservoir.fill_from(self.archive)
        self.initialized = True

    def process_event(self, event) -> None:
        op = event[0]
        if op == "insert":
            self.archive.insert(event[1])
            if self.initialized:
                self.reservoir.on_insert(event[1], self.archive.N)
        elif op == "delete":
            self.archive.delete(event[1])
            if self.initialized:
                self.reservoir.on_delete(event[1], self.archive)

    def query(self, q: Query) -> QueryAnswer:
        pool = self.reservoir.samples()
        n = self.archive.N
        m = len(pool)
        if m == 0:
            raise Unanswerable("empty sample")
        sel = [t.value for t in pool if _inside(t.coords, q.predicate)]
        c = len(sel)
        s = math.fsum(sel)
        s2 = math.fsum(v * v for v in sel)
        z = z_for_confidence(q.confidence)
        if q.kind is AggKind.COUNT:
            est = (n / m) * c
            var = (n * n) * (m * c - c * c) / m**3
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, var)), 0.0, var, "approximate")
        if q.kind is AggKind.SUM:
            est = (n / m) * s
            var = (n * n) * (m * s2 - s * s) / m**3
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, var)), 0.0, var, "approximate")
        if q.kind is AggKind.AVG:
            if c == 0:
                raise Unanswerable("no qualifying samples")
            est = s / c
            var = (m * s2 - s * s) / (m * c * c)
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, var)), 0.0, var, "approximate")
        if not sel:
            raise Unanswerable("no qualifying samples")
        est = min(sel) if q.kind is AggKind.MIN else max(sel)
        return QueryAnswer(q.kind, est, None, None, None, "approximate")


class SrsEngine:
    """Equal-depth stratified reservoir on the first predicate dimension."""

    name = "srs"

    def __init__(self, d: int, pool_target: int, n_strata: int, seed: int = 0):
        self.archive = Archive(d)
        self.d = d
        self.n_strata = max(1, n_strata)
        self.pool_target = pool_target
        self.seed = seed
        self.boundaries = None  # len n_strata - 1 interior cut points on dim 0
        self.pools = None
        self.counts = None  # exact live population per stratum
        self.rng = random.Random(seed * 911 + 6)
        self.initialized = False

    def initialize(self) -> None:
        xs = sorted(t.coords[0] for t in self.archive.live.values())
        k = self.n_strata
        self.boundaries = [
            xs[min(len(xs) - 1, math.ceil(i * len(xs) / k))] for i in range(1, k)
        ]
        per = max(1, self.pool_target // k)
        from .reservoir import Reservoir

        self.pools = [
            Reservoir(max(1, per // 2), random.Random(self.rng.randrange(2**62)))
            for _ in range(k)
        ]
        self.counts = [0] * k
        members = [[] for _ in range(k)]
        for t in self.archive.live.values():
            s = self._stratum(t.coords[0])
            self.counts[s] += 1
            members[s].append(t)
        for s in range(k):
            pool = self.pools[s]
            got = Archive._sample_scan(members[s], min(pool.cap, len(members[s])), pool.rng)
            for t in got:
                pool._add(t)
        self.initialized = True

    def _stratum(self, x: float) -> int:
        import bisect

        return bisect.bisect_right(self.boundaries, x)

    def process_event(self, event) -> None:
        op = event[0]
        if op == "insert":
            t = event[1]
            self.archive.insert(t)
            if self.initialized:
                s = self._stratum(t.coords[0])
                self.counts[s] += 1
                self.pools[s].on_insert(t, self.counts[s])
        elif op == "delete":
            t = self.archive.delete(event[1])
            if self.initialized:
                s = self._stratum(t.coords[0])
                self.counts[s] -= 1
                pool = self.pools[s]
                if t.id in pool.pool:
                    if len(pool.pool) > pool.m:
                        pool._remove(t.id)
                    else:
                        self._refill(s)

    def _refill(self, s: int) -> None:
        pool = self.pools[s]
        for tid in list(pool.pool):
            pool._remove(tid)
        members = [
            t
            for t in self.archive.live.values()
            if self._stratum(t.coords[0]) == s
        ]
        got = Archive._sample_scan(members, min(pool.cap, len(members)), pool.rng)
        for t in got:
            pool._add(t)

    def query(self, q: Query) -> QueryAnswer:
        z = z_for_confidence(q.confidence)
        num = 0.0
        den = 0.0
        var_sum = 0.0
        var_cnt = 0.0
        ext = []
        parts = []
        for s in range(self.n_strata):
            pool = self.pools[s].samples()
            m_i = len(pool)
            if m_i == 0:
                continue
            sel = [t.value for t in pool if _inside(t.coords, q.predicate)]
            c = len(sel)
            sv = math.fsum(sel)
            s2 = math.fsum(v * v for v in sel)
            n_i = self.counts[s]
            parts.append((n_i, m_i, c, sv, s2))
            if sel:
                ext.append((min(sel), max(sel)))
            var_sum += (n_i * n_i) * (m_i * s2 - sv * sv) / m_i**3
            var_cnt += (n_i * n_i) * (m_i * c - c * c) / m_i**3
        if q.kind is AggKind.COUNT:
            est = sum((n_i / m_i) * c for n_i, m_i, c, _, _ in parts)
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, var_cnt)), 0.0, var_cnt, "approximate")
        if q.kind is AggKind.SUM:
            est = sum((n_i / m_i) * sv for n_i, m_i, _, sv, _ in parts)
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, var_sum)), 0.0, var_sum, "approximate")
        if q.kind is AggKind.AVG:
            nu = 0.0
            for n_i, m_i, c, sv, s2 in parts:
                num += (n_i / m_i) * sv
                den += n_i * c / m_i
            if den <= 0:
                raise Unanswerable("no qualifying samples")
            est = num / den
            for n_i, m_i, c, sv, s2 in parts:
                if c == 0:
                    continue
                w = (n_i * c / m_i) / den
                nu += (w * w) * (m_i * s2 - sv * sv) / (m_i * c * c)
            return QueryAnswer(q.kind, est, z * math.sqrt(max(0.0, nu)), 0.0, nu, "approximate")
        if not ext:
            raise Unanswerable("no qualifying samples")
        est = min(e[0] for e in ext) if q.kind is AggKind.MIN else max(e[1] for e in ext)
        return QueryAnswer(q.kind, est, None, None, None, "approximate")


class DptEngine:
    """The full engine behind the harness interface."""

    name = "dpt"

    def __init__(self, config: EngineConfig, repartition: bool = True):
        self.engine = Engine(config)
        self.repartition = repartition

    def initialize(self) -> None:
        self.engine.initialize()
        self.engine.run_catchup_to_done()
        if not self.repartition:
            self.engine.trigger = None
            self.engine.config.tau = None

    def process_event(self, event) -> None:
        self.engine.process_event(event)

    def query(self, q: Query) -> QueryAnswer:
        return self.engine.query(q)

    @property
    def rebuild_count(self) -> int:
        return self.engine.rebuild_count


def _inside(coords, r: Rectangle) -> bool:
    for c, lo, hi in zip(coords, r.lo, r.hi):
        if c < lo or c >= hi:
            return False
    return True


# -- scoring ------------------------------------------------------------------


@dataclass
class EngineReport:
    name: str
    answered: int = 0
    unanswerable: int = 0
    relative_errors: list = field(default_factory=list)
    zero_truth_abs_errors: list = field(default_factory=list)
    ci_evaluated: int = 0
    ci_covered: int = 0
    rebuilds: int = 0
    latency_ms: Optional[dict] = None
    throughput_eps: Optional[float] = None

    @property
    def median_re(self) -> Optional[float]:
        return _percentile(self.relative_errors, 50)

    @property
    def p95_re(self) -> Optional[float]:
        return _percentile(self.relative_errors, 95)

    @property
    def coverage(self) -> Optional[float]:
        if self.ci_evaluated == 0:
            return None
        return self.ci_covered / self.ci_evaluated

    def to_dict(self, include_errors: bool = False) -> dict:
        out = {
            "name": self.name,
            "answered": self.answered,
            "unanswerable": self.unanswerable,
            "n_scored": len(self.relative_errors),
            "median_relative_error": self.median_re,
            "p95_relative_error": self.p95_re,
            "zero_truth_queries": len(self.zero_truth_abs_errors),
            "ci_coverage": self.coverage,
            "rebuilds": self.rebuilds,
        }
        if self.latency_ms is not None:
            out["latency_ms"] = self.latency_ms
        if self.throughput_eps is not None:
            out["throughput_events_per_sec"] = self.throughput_eps
        if include_errors:
            out["relative_errors"] = self.relative_errors
        return out


def _percentile(xs, p):
    if not xs:
        return None
    ordered = sorted(xs)
    idx = min(len(ordered) - 1, max(0, math.ceil(p / 100 * len(ordered)) - 1))
    return ordered[idx]


def run(
    events,
    engines: dict,
    init_after: int,
    timing: bool = False,
    per_kind: bool = False,
):
    """Replay one event sequence into every engine.

    events: iterable of ("insert", Tuple) / ("delete", id) / ("query", Query);
    init_after: number of leading data events replayed before engines
    initialize.  Returns {engine name: EngineReport}.
    """
    truth_archive = Archive(_infer_d(events))
    reports = {name: EngineReport(name) for name in engines}
    latencies = {name: [] for name in engines}
    update_time = {name: 0.0 for name in engines}
    update_count = 0
    initialized = False
    data_events = 0

    for event in events:
        op = event[0]
        if op == "query":
            if not initialized:
                for name, eng in engines.items():
                    eng.initialize()
                initialized = True
            q = event[1]
            try:
                truth = truth_archive.ground_truth(q)
            except Unanswerable:
                truth = None
            for name, eng in engines.items():
                rep = reports[name]
                t0 = time.perf_counter() if timing else 0.0
                try:
                    ans = eng.query(q)
                except (Unanswerable, EngineError):
                    rep.unanswerable += 1
                    continue
                if timing:
                    latencies[name].append((time.perf_counter() - t0) * 1e3)
                if truth is None:
                    continue
                rep.answered += 1
                err = abs(truth - ans.estimate)
                if truth != 0.0:
                    rep.relative_errors.append(err / abs(truth))
                else:
                    rep.zero_truth_abs_errors.append(err)
                if ans.ci_half_width is not None:
                    rep.ci_evaluated += 1
                    if err <= ans.ci_half_width + 1e-12:
                        rep.ci_covered += 1
            continue

        truth_archive.apply(event)
        data_events += 1
        update_count += 1
        for name, eng in engines.items():
            if timing:
                t0 = time.perf_counter()
                eng.process_event(event)
                update_time[name] += time.perf_counter() - t0
            else:
                eng.process_event(event)
        if not initialized and data_events >= init_after:
            for name, eng in engines.items():
                eng.initialize()
            initialized = True

    if not initialized:
        for name, eng in engines.items():
            eng.initialize()

    for name, eng in engines.items():
        rep = reports[name]
        rep.rebuilds = getattr(eng, "rebuild_count", 0)
        if timing:
            ls = latencies[name]
            if ls:
                rep.latency_ms = {
                    "mean": sum(ls) / len(ls),
                    "p50": _percentile(ls, 50),
                    "p95": _percentile(ls, 95),
                }
            if update_time[name] > 0:
                rep.throughput_eps = update_count / update_time[name]
    return reports


def _infer_d(events) -> int:
    for ev in events:
        if ev[0] == "insert":
            return len(ev[1].coords)
    return 1


def report_json(reports: dict, include_errors: bool = False) -> str:
    payload = {name: rep.to_dict(include_errors) for name, rep in sorted(reports.items())}
    return json.dumps(payload, indent=2, sort_keys=True)


# -- synthetic data -------------------------------------------------------------


def generate_dataset(
    seed: int,
    profile: str,
    n: int,
    d: int,
    delete_fraction: float = 0.0,
):
    """Synthetic insert/delete stream.

    uniform: iid uniform coords and values.  skewed: heavy-tailed
    (lognormal) values over uniform coords.  sorted: skewed values with
    insertions ordered by the first coordinate, so arrivals concentrate in
    few leaves.
    """
    rng = np.random.default_rng(seed)
    coords = rng.random((n, d))
    if profile == UNIFORM:
        values = rng.random(n)
    elif profile in (SKEWED, SORTED_ARRIVAL):
        values = rng.lognormal(mean=0.0, sigma=1.5, size=n)
    else:
        raise EngineError(f"unknown profile {profile!r}")
    if profile == SORTED_ARRIVAL:
        order = np.argsort(coords[:, 0], kind="stable")
        coords = coords[order]
        values = values[order]
    events = []
    for i in range(n):
        events.append(("insert", Tuple(i + 1, tuple(float(c) for c in coords[i]), float(values[i]))))
    if delete_fraction > 0.0:
        n_del = min(int(delete_fraction * n), n // 2)
        py_rng = random.Random(seed + 1)
        # doom ids from the first half so they exist when deletions start,
        # then spread the deletions evenly through the back half
        first_half_ids = [ev[1].id for ev in events[: n // 2]]
        doomed = py_rng.sample(first_half_ids, n_del)
        out = list(events[: n // 2])
        tail = events[n // 2 :]
        step = max(1, len(tail) // max(1, n_del))
        di = 0
        for i, ev in enumerate(tail):
            out.append(ev)
            if di < n_del and i % step == step - 1:
                out.append(("delete", doomed[di]))
                di += 1
        while di < n_del:
            out.append(("delete", doomed[di]))
            di += 1
        events = out
    return events


def generate_workload(seed: int, lo, hi, n_queries: int, d: int, kinds=None):
    """Random rectangular queries with corners uniform over [lo, hi]^d,
    kinds cycling through COUNT/SUM/AVG."""
    kinds = kinds or [AggKind.COUNT, AggKind.SUM, AggKind.AVG]
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    queries = []
    for i in range(n_queries):
        a = lo + (hi - lo) * rng.random(d)
        b = lo + (hi - lo) * rng.random(d)
        qlo = np.minimum(a, b)
        qhi = np.maximum(a, b)
        qhi = np.where(qhi > qlo, qhi, qhi + 1e-9)
        queries.append(
            Query(kinds[i % len(kinds)], Rectangle(tuple(qlo), tuple(qhi)))
        )
    return queries


def domain_of(events):
    lo = None
    hi = None
    for ev in events:
        if ev[0] != "insert":
            continue
        c = np.asarray(ev[1].coords)
        lo = c if lo is None else np.minimum(lo, c)
        hi = c if hi is None else np.maximum(hi, c)
    if lo is None:
        raise EngineError("stream has no insertions")
    return lo, hi
