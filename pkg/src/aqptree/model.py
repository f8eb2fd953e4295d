"""Shared domain vocabulary: tuples, rectangles, queries, configuration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence


class AggKind(enum.Enum):
    COUNT = "count"
    SUM = "sum"
    AVG = "avg"
    MIN = "min"
    MAX = "max"


class Relation(enum.Enum):
    DISJOINT = "disjoint"
    CONTAINED_IN_Q = "contained"
    PARTIAL_OVERLAP = "partial"


class EngineError(Exception):
    pass


class DimensionMismatch(EngineError):
    pass


class Unanswerable(EngineError):
    """Raised when a query has no defined answer (e.g. AVG over nothing)."""


@dataclass(frozen=True)
class Tuple:
    """A record: caller-assigned id, d predicate coordinates, one aggregate value."""

    id: int
    coords: tuple
    value: float

    def __post_init__(self):
        if not isinstance(self.coords, tuple):
            object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box, half-open: lo[j] <= x[j] < hi[j]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi):
            raise DimensionMismatch(f"lo has {len(lo)} dims, hi has {len(hi)}")
        for a, b in zip(lo, hi):
            if a > b:
                raise ValueError(f"lo {a} > hi {b}")

    @property
    def d(self) -> int:
        return len(self.lo)

    @staticmethod
    def unbounded(d: int) -> "Rectangle":
        return Rectangle((-math.inf,) * d, (math.inf,) * d)


def contains(r: Rectangle, t: Tuple) -> bool:
    """True iff t lies in r under the half-open convention."""
    if len(t.coords) != r.d:
        raise DimensionMismatch(f"tuple has {len(t.coords)} dims, rectangle {r.d}")
    for c, lo, hi in zip(t.coords, r.lo, r.hi):
        if c < lo or c >= hi:
            return False
    return True


def contains_point(lo: Sequence[float], hi: Sequence[float], coords: Sequence[float]) -> bool:
    for c, a, b in zip(coords, lo, hi):
        if c < a or c >= b:
            return False
    return True


def relation(r: Rectangle, q: Rectangle) -> Relation:
    """Classify r against a query rectangle q for frontier lookup."""
    if r.d != q.d:
        raise DimensionMismatch(f"rectangle has {r.d} dims, query {q.d}")
    contained = True
    for rl, rh, ql, qh in zip(r.lo, r.hi, q.lo, q.hi):
        if max(rl, ql) >= min(rh, qh):
            return Relation.DISJOINT
        if rl < ql or rh > qh:
            contained = False
    return Relation.CONTAINED_IN_Q if contained else Relation.PARTIAL_OVERLAP


@dataclass(frozen=True)
class Query:
    kind: AggKind
    predicate: Rectangle
    confidence: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"confidence must be in (0,1), got {self.confidence}")


DEFAULT_CONFIDENCE = 0.95


@dataclass
class EngineConfig:
    """Global engine knobs.

    d         -- predicate dimensionality
    k         -- leaf count of the partition tree
    m         -- reservoir half-capacity; the pool targets 2m samples
    alpha     -- sampling rate of the pooled sample; derived as |S|/N at
                 build time when left unset
    catchup_ratio -- fraction of the archive to absorb during catch-up
    beta      -- max tolerated multiplicative drift of a leaf's max variance
    rho       -- geometric ratio of the 1D error grid
    delta     -- minimum-query mass fraction (AVG oracle window size delta*m)
    z         -- normal scaling factor used at the default 95% confidence
    heap_k    -- capacity of the per-node MIN/MAX heaps
    value_lo / value_hi -- nonzero-|value| bounds; derived from the pool
                 when unset
    tau       -- optional manual re-partition period (updates); off by default
    floor_c   -- multiplier on the (1/alpha)*log(m) minimum-samples floor
    floor_trigger_divisor -- trigger fires when a stratum drops below
                 floor/divisor
    partition_kind -- aggregate the partitioner optimizes for
    catchup_batch -- catch-up samples absorbed per processed event
    """

    d: int
    k: int
    m: int
    alpha: Optional[float] = None
    catchup_ratio: float = 0.1
    beta: float = 10.0
    rho: float = 2.0
    delta: float = 0.05
    z: float = 1.96
    heap_k: int = 32
    value_lo: Optional[float] = None
    value_hi: Optional[float] = None
    tau: Optional[int] = None
    floor_c: float = 1.0
    floor_trigger_divisor: float = 4.0
    partition_kind: AggKind = AggKind.SUM
    catchup_batch: int = 8
    split_longest_side: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d >= 1 required")
        if self.k < 1:
            raise ValueError("k >= 1 required")
        if self.m < self.k:
            raise ValueError("m >= k required")
        if self.beta <= 1.0:
            raise ValueError("beta > 1 required")
        if self.rho <= 1.0:
            raise ValueError("rho > 1 required")
        if not (0.0 < self.delta < 0.5):
            raise ValueError("0 < delta < 1/2 required")
        if not (0.0 < self.catchup_ratio <= 1.0):
            raise ValueError("0 < catchup_ratio <= 1 required")
        if self.alpha is not None and not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha in (0,1] when given")
        if (
            self.value_lo is not None
            and self.value_hi is not None
            and self.value_lo > self.value_hi
        ):
            raise ValueError("value_lo <= value_hi required")
        if self.heap_k < 1:
            raise ValueError("heap_k >= 1 required")


def z_for_confidence(confidence: float, config_z: float = 1.96) -> float:
    """Normal quantile for a two-sided interval at the given confidence.

    The configured z is used verbatim at the default confidence so reported
    widths match the conventional 1.96 exactly.
    """
    if confidence == DEFAULT_CONFIDENCE:
        return config_z
    from statistics import NormalDist

    return NormalDist().inv_cdf(0.5 + confidence / 2.0)
