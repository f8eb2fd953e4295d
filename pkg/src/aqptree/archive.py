"""The authoritative dataset: an in-process insert/delete event log.

Stands in for a message broker plus cold storage.  Query answering never
touches this module; it exists to absorb the stream, to serve uniform
samples (initialization, reservoir refills, catch-up), and to compute exact
ground truth for tests and benchmark scoring.
"""

from __future__ import annotations

import json
import math
import random
from typing import Iterable, Iterator, Optional

from .model import AggKind, EngineError, Query, Rectangle, Tuple, Unanswerable, contains

SEQUENTIAL = "sequential"
SINGLETON = "singleton"


class DuplicateInsert(EngineError):
    pass


class MissingDelete(EngineError):
    pass


class Archive:
    def __init__(self, d: int):
        self.d = d
        self.live = {}          # id -> Tuple
        self.insert_version = {}  # id -> event index of its insertion
        self.event_log = []     # ("insert", Tuple) | ("delete", id)
        # Tombstones let catch-up sample the population as of an older
        # version even after later deletions: id -> (Tuple, delete_version).
        self.graveyard = {}
        # Dense id list with O(1) swap-remove, for random-offset probes.
        self._ids = []
        self._pos = {}

    @property
    def N(self) -> int:
        return len(self.live)

    @property
    def version(self) -> int:
        return len(self.event_log)

    def insert(self, t: Tuple) -> int:
        if t.id in self.live:
            raise DuplicateInsert(f"id {t.id} already live")
        if len(t.coords) != self.d:
            raise EngineError(f"tuple has {len(t.coords)} dims, archive {self.d}")
        self.live[t.id] = t
        self.insert_version[t.id] = len(self.event_log)
        self._pos[t.id] = len(self._ids)
        self._ids.append(t.id)
        self.event_log.append(("insert", t))
        return self.version

    def delete(self, tid: int) -> Tuple:
        t = self.live.pop(tid, None)
        if t is None:
            raise MissingDelete(f"id {tid} not live")
        self.event_log.append(("delete", tid))
        self.graveyard[tid] = (t, len(self.event_log) - 1)
        # swap-remove from the dense id list
        p = self._pos.pop(tid)
        last = self._ids.pop()
        if last != tid:
            self._ids[p] = last
            self._pos[last] = p
        return t

    def apply(self, event) -> int:
        """Apply one ("insert", Tuple) / ("delete", id) event; returns new version."""
        op = event[0]
        if op == "insert":
            return self.insert(event[1])
        if op == "delete":
            self.delete(event[1])
            return self.version
        raise EngineError(f"unknown event op {op!r}")

    def get(self, tid: int) -> Tuple:
        return self.live[tid]

    # -- sampling ---------------------------------------------------------

    def sample_uniform(self, n: int, mode: str = SEQUENTIAL, rng: Optional[random.Random] = None):
        """n live tuples drawn uniformly without replacement.

        sequential: one pass over the live set keeping a random subset
        (classic reservoir scan).  singleton: repeated random-offset probes,
        cheap when n << N.
        """
        if n > self.N:
            raise EngineError(f"cannot sample {n} of {self.N} live tuples")
        if n == 0:
            return []
        rng = rng or random.Random()
        if mode == SEQUENTIAL:
            return self._sample_scan(self.live.values(), n, rng)
        if mode == SINGLETON:
            if n * 3 > self.N:
                # probe rejection would thrash; a scan is cheaper
                return self._sample_scan(self.live.values(), n, rng)
            seen = set()
            out = []
            ids = self._ids
            size = len(ids)
            while len(out) < n:
                tid = ids[rng.randrange(size)]
                if tid in seen:
                    continue
                seen.add(tid)
                out.append(self.live[tid])
            return out
        raise EngineError(f"unknown sample mode {mode!r}")

    @staticmethod
    def _sample_scan(items: Iterable[Tuple], n: int, rng: random.Random):
        pool = []
        for i, t in enumerate(items):
            if i < n:
                pool.append(t)
            else:
                j = rng.randrange(i + 1)
                if j < n:
                    pool[j] = t
        return pool

    def snapshot_size(self, version: int) -> int:
        n = sum(1 for tid in self.live if self.insert_version[tid] < version)
        n += sum(
            1
            for tid, (_, dv) in self.graveyard.items()
            if self.insert_version.get(tid, math.inf) < version <= dv
        )
        return n

    def iter_snapshot(self, version: int) -> Iterator[Tuple]:
        """Tuples that were live just before event `version` was applied."""
        for tid, t in self.live.items():
            if self.insert_version[tid] < version:
                yield t
        for tid, (t, dv) in self.graveyard.items():
            iv = self.insert_version.get(tid)
            if iv is not None and iv < version <= dv:
                yield t

    def sample_snapshot(self, n: int, version: int, rng: Optional[random.Random] = None):
        """Uniform without-replacement sample of the snapshot population."""
        rng = rng or random.Random()
        return self._sample_scan(self.iter_snapshot(version), n, rng)

    # -- exact answers ----------------------------------------------------

    def ground_truth(self, q: Query) -> float:
        """Exact aggregate over live tuples matching the predicate."""
        r = q.predicate
        if q.kind is AggKind.COUNT:
            return float(sum(1 for t in self.live.values() if contains(r, t)))
        vals = [t.value for t in self.live.values() if contains(r, t)]
        if q.kind is AggKind.SUM:
            return math.fsum(vals)
        if not vals:
            raise Unanswerable(f"{q.kind.value} over empty selection")
        if q.kind is AggKind.AVG:
            return math.fsum(vals) / len(vals)
        if q.kind is AggKind.MIN:
            return min(vals)
        if q.kind is AggKind.MAX:
            return max(vals)
        raise EngineError(f"unknown kind {q.kind}")


# -- JSONL event files -----------------------------------------------------


def event_to_json(event) -> str:
    op = event[0]
    if op == "insert":
        t = event[1]
        return json.dumps(
            {"op": "insert", "id": t.id, "coords": list(t.coords), "value": t.value}
        )
    if op == "delete":
        return json.dumps({"op": "delete", "id": event[1]})
    if op == "query":
        q = event[1]
        return json.dumps(
            {
                "op": "query",
                "kind": q.kind.value,
                "lo": list(q.predicate.lo),
                "hi": list(q.predicate.hi),
                "confidence": q.confidence,
            }
        )
    raise EngineError(f"unknown event op {op!r}")


def event_from_json(line: str):
    obj = json.loads(line)
    op = obj["op"]
    if op == "insert":
        return ("insert", Tuple(int(obj["id"]), tuple(obj["coords"]), float(obj["value"])))
    if op == "delete":
        return ("delete", int(obj["id"]))
    if op == "query":
        q = Query(
            AggKind(obj["kind"]),
            Rectangle(tuple(obj["lo"]), tuple(obj["hi"])),
            float(obj.get("confidence", 0.95)),
        )
        return ("query", q)
    raise EngineError(f"unknown event op {op!r}")


def write_events(path, events: Iterable) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(event_to_json(ev))
            f.write("\n")


def read_events(path) -> Iterator:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield event_from_json(line)
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise EngineError(f"{path}:{lineno}: malformed event ({e})") from e
