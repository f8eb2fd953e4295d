"""Synopsis life cycle: initialization, catch-up, trigger evaluation, and
full or partial re-partitioning.

The core engine is a deterministic state machine: catch-up samples are
absorbed cooperatively (a configurable batch per processed event), and a
rebuild runs synchronously between events, so a fixed seed plus a fixed
event sequence reproduces runs bit for bit.  A thin threaded runner at the
bottom of the module realizes the parallel phase layout (background
catch-up, single writer, blocking swap) on top of the same engine.

Catch-up epochs: every (re)build captures an archive snapshot (version and
size N0).  Node statistics are seeded from the pooled sample, then the
engine draws catchup_ratio * N0 further uniform samples of the snapshot
population and folds them in.  Each node's population estimate divides its
hit count by the number of draws made while the node was absorbing, so a
partial re-partition can reset just one subtree and leave every other
node's estimate consistent.
"""

from __future__ import annotations

import enum
import math
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .archive import Archive
from .estimator import QueryAnswer, answer
from .maxvar import MaxVarIndex
from .model import AggKind, EngineConfig, EngineError, Query, Tuple, contains
from .partitioner import PartitionPlan, partition_1d, partition_kd
from .reservoir import REFILLED, Reservoir
from .synopsis import PartitionTree

NO_ACTION = "no_action"
CANDIDATE = "candidate_repartition"
KEPT = "kept"
REBUILT = "rebuilt"


class Phase(enum.Enum):
    IDLE = "idle"
    OPTIMIZING = "optimizing"
    BLOCKING = "blocking"
    CATCHING_UP = "catching_up"
    DONE = "done"


@dataclass
class CatchupProgress:
    target: int = 0
    absorbed: int = 0
    phase: Phase = Phase.IDLE


@dataclass
class TriggerState:
    beta: float
    floor: int
    trigger_floor: int
    baselines: dict = field(default_factory=dict)  # leaf ordinal -> M_i
    pending: Optional[int] = None


class Engine:
    def __init__(self, config: EngineConfig, archive: Optional[Archive] = None):
        self.config = config
        self.archive = archive if archive is not None else Archive(config.d)
        seed = config.seed
        self.reservoir_rng = random.Random(seed * 7919 + 1)
        self.sampler_rng = random.Random(seed * 7919 + 2)
        self.catchup_rng = random.Random(seed * 7919 + 3)
        self.reservoir = Reservoir(config.m, self.reservoir_rng)
        self.index = MaxVarIndex(config.d, config.delta)
        self.tree: Optional[PartitionTree] = None
        self.plan: Optional[PartitionPlan] = None
        self.trigger: Optional[TriggerState] = None
        self.progress = CatchupProgress()
        self.phase = Phase.IDLE
        self._pending_catchup = []
        self._partial_active = []  # preserved nodes still absorbing this epoch
        self.rebuild_count = 0
        self.updates_since_build = 0
        self.events_processed = 0
        self._repartition_in_progress = False
        self._trigger_cooldown = 0

    # -- derived knobs ------------------------------------------------------

    def _alpha(self) -> float:
        if self.config.alpha is not None:
            return self.config.alpha
        n = max(1, self.archive.N)
        return max(1e-9, min(1.0, len(self.reservoir) / n))

    def _floor(self) -> int:
        m = max(2, len(self.reservoir))
        return max(1, math.ceil(self.config.floor_c * (1.0 / self._alpha()) * math.log(m)))

    # -- initialization -------------------------------------------------------

    def initialize(self) -> None:
        """Fill the pool, build the first plan, populate statistics, start
        catch-up.  The engine serves queries from the moment the blocking
        population step finishes."""
        if self.archive.N < self.config.k:
            raise EngineError(
                f"need at least k={self.config.k} live tuples, have {self.archive.N}"
            )
        self.phase = Phase.OPTIMIZING
        self.reservoir.fill_from(self.archive)
        self.index.rebuild_from(self.reservoir.samples())
        plan = self._build_plan(self.reservoir.samples())
        self._install(plan, built_on_empty=self.archive.N == 0)

    def _build_plan(self, samples, oracle=None) -> PartitionPlan:
        cfg = self.config
        eta = self._floor()
        if cfg.d == 1:
            return partition_1d(
                cfg.k,
                samples,
                cfg.partition_kind,
                oracle if oracle is not None else self.index,
                n_total=max(1, self.archive.N),
                rho=cfg.rho,
                value_lo=cfg.value_lo,
                value_hi=cfg.value_hi,
                eta=eta,
                delta=cfg.delta,
            )
        return partition_kd(
            cfg.k,
            samples,
            cfg.partition_kind,
            oracle if oracle is not None else self.index,
            d=cfg.d,
            eta=eta,
            delta=cfg.delta,
            longest_side=cfg.split_longest_side,
        )

    def _install(self, plan: PartitionPlan, built_on_empty: bool = False) -> None:
        """Blocking step: swap in the new tree and populate approximate node
        statistics from the pooled sample.  The pool is then redrawn from the
        archive so the strata serving queries are independent of the sample
        that placed the partition boundaries."""
        self.phase = Phase.BLOCKING
        tree = PartitionTree(plan.root, self.config.heap_k, self.config.d, built_on_empty)
        self.tree = tree
        self.plan = plan
        self.reservoir.attach_tree(tree)
        n0 = self.archive.N
        tree.begin_epoch(range(tree.n_nodes), float(n0), fresh=True)
        for t in self.reservoir.samples():
            tree.absorb_catchup(t)
        if n0 > 0:
            self.reservoir.fill_from(self.archive)
        self.index.rebuild_from(self.reservoir.samples())
        self._reset_trigger()
        self._start_catchup()
        self.updates_since_build = 0

    def _reset_trigger(self) -> None:
        floor = self._floor()
        trigger_floor = max(1, math.ceil(floor / self.config.floor_trigger_divisor))
        baselines = {}
        for ordinal in range(len(self.tree.leaf_ids)):
            baselines[ordinal] = self._leaf_variance(ordinal)
        self.trigger = TriggerState(self.config.beta, floor, trigger_floor, baselines)
        self._trigger_cooldown = 0

    def _start_catchup(self) -> None:
        n0 = self.archive.N
        target = math.ceil(self.config.catchup_ratio * n0)
        target = min(target, n0)
        version = self.archive.version
        self.progress = CatchupProgress(target=target, absorbed=0, phase=Phase.CATCHING_UP)
        if target > 0:
            pending = self.archive.sample_snapshot(target, version, self.sampler_rng)
            self.catchup_rng.shuffle(pending)
            self._pending_catchup = pending
            self.phase = Phase.CATCHING_UP
        else:
            self._pending_catchup = []
            self._finish_catchup()

    def _finish_catchup(self) -> None:
        if self.tree is not None:
            for i in range(self.tree.n_nodes):
                self.tree.freeze_node(i)
        self._partial_active = []
        self.progress.phase = Phase.DONE
        self.phase = Phase.DONE

    def pump_catchup(self, n: int) -> int:
        """Absorb up to n pending catch-up samples; returns how many."""
        if self.phase is not Phase.CATCHING_UP:
            return 0
        done = 0
        pending = self._pending_catchup
        tree = self.tree
        while pending and done < n:
            t = pending.pop()
            tree.absorb_catchup(t)
            done += 1
        self.progress.absorbed += done
        if self._partial_active:
            target = self.progress.target
            still = []
            for i in self._partial_active:
                if tree.h_den(i) >= target:
                    tree.freeze_node(i)
                else:
                    still.append(i)
            self._partial_active = still
        if not pending:
            self._finish_catchup()
        return done

    def run_catchup_to_done(self) -> None:
        while self.phase is Phase.CATCHING_UP:
            self.pump_catchup(4096)

    # -- stream -----------------------------------------------------------------

    def process_event(self, event) -> None:
        op = event[0]
        if op == "insert":
            self._on_insert(event[1])
        elif op == "delete":
            self._on_delete(event[1])
        elif op == "query":
            # queries are answered by query(); replaying one here is a no-op
            pass
        else:
            raise EngineError(f"unknown event op {op!r}")
        self.events_processed += 1

    def _on_insert(self, t: Tuple) -> None:
        self.archive.insert(t)
        if self.tree is None:
            return
        self.tree.route_insert(t)
        change = self.reservoir.on_insert(t, self.archive.N)
        self._after_pool_change(change)
        self._after_update()

    def _on_delete(self, tid) -> None:
        t = self.archive.delete(tid)
        if self.tree is None:
            return
        self.tree.route_delete(t)
        change = self.reservoir.on_delete(tid, self.archive)
        self._after_pool_change(change)
        self._after_update()

    def _after_pool_change(self, change) -> None:
        if change.outcome == REFILLED:
            self.index.rebuild_from(self.reservoir.samples())
            if self.trigger is not None:
                for ordinal in range(len(self.tree.leaf_ids)):
                    if self.evaluate_trigger(ordinal) == CANDIDATE:
                        break
            return
        touched = set()
        for t in change.removed:
            self.index.delete_sample(t)
            touched.add(self.tree.leaf_ordinal[self.tree.find_leaf(t.coords)])
        for t in change.added:
            self.index.insert_sample(t)
            touched.add(self.tree.leaf_ordinal[self.tree.find_leaf(t.coords)])
        for ordinal in touched:
            if self.evaluate_trigger(ordinal) == CANDIDATE:
                break

    def _after_update(self) -> None:
        self.updates_since_build += 1
        if self._trigger_cooldown > 0:
            self._trigger_cooldown -= 1
        if (
            self.config.tau is not None
            and self.updates_since_build >= self.config.tau
            and not self._repartition_in_progress
        ):
            self._force_repartition()
        elif self.trigger is not None and self.trigger.pending is not None:
            self.maybe_repartition()
        self.pump_catchup(self.config.catchup_batch)

    # -- queries -----------------------------------------------------------------

    def query(self, q: Query) -> QueryAnswer:
        if self.tree is None:
            raise EngineError("engine not initialized")
        if self.phase is Phase.BLOCKING:
            raise EngineError("statistics population in progress")
        return answer(q, self.tree, self.reservoir, self.config)

    # -- triggers and re-partitioning ----------------------------------------------

    def _leaf_variance(self, ordinal: int) -> float:
        """Current approximate max variance of a leaf; 0 when the stratum is
        too small to measure."""
        rect = self.tree.rects[self.tree.leaf_ids[ordinal]]
        kind = self.config.partition_kind
        n = self.index.count_in(rect)
        if n < 2:
            return 0.0
        if kind is AggKind.AVG and n <= 2 * self.index.dm:
            return 0.0
        return max(0.0, self.index.maxvar(rect, kind).variance)

    def evaluate_trigger(self, ordinal: int) -> str:
        """Floor and beta-ratio test for one leaf after an update touched it."""
        tr = self.trigger
        if tr is None:
            return NO_ACTION
        if self._trigger_cooldown > 0:
            return NO_ACTION
        if self.reservoir.stratum_size(ordinal) < tr.trigger_floor:
            tr.pending = ordinal
            return CANDIDATE
        current = self._leaf_variance(ordinal)
        base = tr.baselines.get(ordinal, 0.0)
        if base <= 0.0:
            if current > 0.0:
                tr.pending = ordinal
                return CANDIDATE
            return NO_ACTION
        if base / tr.beta <= current <= base * tr.beta:
            return NO_ACTION
        tr.pending = ordinal
        return CANDIDATE

    def current_max_variance(self) -> float:
        if self.tree is None:
            return 0.0
        return max(
            (self._leaf_variance(o) for o in range(len(self.tree.leaf_ids))),
            default=0.0,
        )

    def maybe_repartition(self) -> str:
        """Evaluate the pending candidate: adopt the new plan only if it cuts
        the current max variance by more than beta."""
        tr = self.trigger
        if tr is None or tr.pending is None or self._repartition_in_progress:
            return KEPT
        tr.pending = None
        if len(self.reservoir) < self.config.k:
            return KEPT
        self._repartition_in_progress = True
        try:
            candidate = self._build_plan(self.reservoir.samples())
            current = self.current_max_variance()
            cand_max = max(candidate.leaf_maxvars, default=0.0)
            if current > 0.0 and cand_max < current / self.config.beta:
                self._install(candidate)
                self.rebuild_count += 1
                # let the fresh tree absorb some stream before re-evaluating
                self._trigger_cooldown = max(64, len(self.reservoir))
                return REBUILT
            # rejected candidate: rate-limit further evaluations so sustained
            # skew cannot spend the whole update budget on planning
            self._trigger_cooldown = max(8, len(self.reservoir) // 4)
            return KEPT
        finally:
            self._repartition_in_progress = False

    def _force_repartition(self) -> None:
        self._repartition_in_progress = True
        try:
            if len(self.reservoir) >= self.config.k:
                self._install(self._build_plan(self.reservoir.samples()))
                self.rebuild_count += 1
        finally:
            self._repartition_in_progress = False

    def partial_repartition(self, ordinal: int, psi="auto") -> str:
        """Rebuild only the subtree psi levels above the given leaf,
        preserving statistics everywhere else."""
        if self.tree is None:
            raise EngineError("engine not initialized")
        tree = self.tree
        leaf_node = tree.leaf_ids[ordinal]
        depth = tree.depth[leaf_node]
        if psi == "auto":
            threshold = self.current_max_variance() / self.config.beta
            lo, hi = 0, depth
            chosen = depth
            while lo <= hi:
                mid = (lo + hi) // 2
                u = tree.ancestor(leaf_node, mid)
                subplan, sub_samples = self._subtree_plan(u)
                if subplan is not None and max(subplan.leaf_maxvars, default=0.0) < threshold:
                    chosen = mid
                    hi = mid - 1
                else:
                    lo = mid + 1
            psi = chosen
        if psi >= depth:
            self._force_repartition()
            return REBUILT
        u = tree.ancestor(leaf_node, psi)
        if tree.is_leaf(u):
            return KEPT  # a single-leaf subtree has nothing to resplit
        subplan, _ = self._subtree_plan(u)
        if subplan is None:
            return KEPT
        self._graft(u, subplan)
        self.rebuild_count += 1
        return REBUILT

    def _subtree_plan(self, u: int):
        tree = self.tree
        rect = tree.rects[u]
        samples = [t for t in self.reservoir.samples() if contains(rect, t)]
        l_u = len(tree.leaves_under(u))
        if len(samples) < max(l_u, 2):
            return None, samples
        sub_oracle = MaxVarIndex(self.config.d, self.config.delta)
        sub_oracle.rebuild_from(samples)
        cfg = self.config
        eta = self._floor()
        if cfg.d == 1:
            plan = partition_1d(
                l_u, samples, cfg.partition_kind, sub_oracle,
                n_total=max(1, self.archive.N), rho=cfg.rho,
                value_lo=cfg.value_lo, value_hi=cfg.value_hi,
                eta=eta, delta=cfg.delta,
            )
        else:
            plan = partition_kd(
                l_u, samples, cfg.partition_kind, sub_oracle,
                d=cfg.d, eta=eta, delta=cfg.delta,
                longest_side=cfg.split_longest_side,
            )
        return plan, samples

    def _graft(self, u: int, subplan: PartitionPlan) -> None:
        """Swap the subtree under u for the re-partitioned one; statistics of
        all nodes outside the subtree (and of u itself) are carried over."""
        self.phase = Phase.BLOCKING
        old = self.tree

        class _N:
            __slots__ = ("split_dim", "split_val", "left", "right", "rect")

        mapping = {}  # old node id -> new nested node

        def copy_nested(i):
            n = _N()
            n.rect = None
            mapping[i] = n
            if i == u:
                r = subplan.root
                if r.is_leaf:
                    n.split_dim, n.split_val, n.left, n.right = -1, math.nan, None, None
                else:
                    n.split_dim, n.split_val = r.split_dim, r.split_val
                    n.left, n.right = r.left, r.right
                return n
            if old.is_leaf(i):
                n.split_dim, n.split_val, n.left, n.right = -1, math.nan, None, None
                return n
            li, ri = old.children(i)
            n.split_dim, n.split_val = old.topo_split(i)
            n.left = copy_nested(li)
            n.right = copy_nested(ri)
            return n

        root = copy_nested(0)
        new_tree = PartitionTree(root, self.config.heap_k, self.config.d, False)

        # pair old preserved nodes with their new ids (same shape outside u)
        from . import kernels

        pairs = [(0, 0)]
        new_subtree_root = None
        while pairs:
            oi, ni = pairs.pop()
            kernels.copy_node(new_tree.stats, ni, old.stats, oi)
            new_tree.n_ref[ni] = old.n_ref[oi]
            new_tree.g_start[ni] = 0
            new_tree.h_den_base[ni] = old.h_den(oi)
            kernels.set_absorbing(new_tree.stats, ni, False)
            if oi == u:
                new_subtree_root = ni
                continue
            if not old.is_leaf(oi):
                ol, orr = old.children(oi)
                nl, nr = new_tree.children(ni)
                pairs.append((ol, nl))
                pairs.append((orr, nr))
        new_tree.g = 0

        # fresh epoch for the rebuilt descendants, seeded from the pool
        n0 = float(self.archive.N)
        rebuilt = [n for n in new_tree.subtree_ids(new_subtree_root) if n != new_subtree_root]
        new_tree.begin_epoch(rebuilt, n0, fresh=True)
        u_rect = new_tree.rects[new_subtree_root]
        for t in self.reservoir.samples():
            if contains(u_rect, t):
                kernels.route_catchup(new_tree.topo, new_tree.stats, t.coords, t.value, new_subtree_root)
            new_tree.g += 1
        # the subtree root keeps its stats; it must not double-absorb
        kernels.set_absorbing(new_tree.stats, new_subtree_root, False)

        self.tree = new_tree
        self.reservoir.attach_tree(new_tree)
        self.index.rebuild_from(self.reservoir.samples())
        self._reset_trigger()

        # restart catch-up; preserved nodes absorb only while under-represented
        self._start_catchup()
        if self.phase is Phase.CATCHING_UP:
            target = self.progress.target
            active = []
            for i in range(new_tree.n_nodes):
                if i in rebuilt:
                    continue
                if new_tree.h_den(i) < target:
                    new_tree.begin_epoch([i], new_tree.n_ref[i], fresh=False)
                    active.append(i)
            self._partial_active = active

    # -- status ------------------------------------------------------------------

    def status(self) -> dict:
        return {
            "phase": self.phase.value,
            "catchup_absorbed": self.progress.absorbed,
            "catchup_target": self.progress.target,
            "max_leaf_variance": self.current_max_variance(),
            "rebuild_count": self.rebuild_count,
            "n_live": self.archive.N,
            "pool_size": len(self.reservoir),
            "events_processed": self.events_processed,
        }


class ThreadedEngine:
    """Single-writer wrapper: a worker thread applies events, a background
    thread pumps catch-up, and queries synchronize with the writer so they
    only wait during the blocking population step."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.lock = threading.RLock()
        self._queue = []
        self._cv = threading.Condition(self.lock)
        self._stop = False
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._catchup = threading.Thread(target=self._pump, daemon=True)

    def start(self):
        self._worker.start()
        self._catchup.start()
        return self

    def submit(self, event) -> None:
        with self._cv:
            self._queue.append(event)
            self._cv.notify()

    def query(self, q: Query) -> QueryAnswer:
        with self.lock:
            return self.engine.query(q)

    def drain(self) -> None:
        with self._cv:
            while self._queue:
                self._cv.wait(0.01)

    def stop(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        self._worker.join()
        self._catchup.join()

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._stop:
                    self._cv.wait(0.05)
                if self._stop and not self._queue:
                    return
                event = self._queue.pop(0)
                self.engine.process_event(event)
                self._cv.notify_all()

    def _pump(self) -> None:
        while True:
            with self.lock:
                if self._stop:
                    return
                self.engine.pump_catchup(256)
            time.sleep(0.001)
