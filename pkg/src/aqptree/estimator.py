"""Answer queries from the synopsis alone: covered-node partial aggregates
combined with partial-leaf stratum estimates, plus a two-source confidence
interval  +- z * sqrt(nu_c + nu_s).

nu_c collects the catch-up uncertainty of covered nodes (from the stored
h_i, sum a, sum a^2); nu_s collects the stratified-sample uncertainty of the
leaves the predicate cuts.  This module never touches the archive: the
query path reads only tree and reservoir state.

AVG is computed as the ratio of the module's own SUM and COUNT estimates,
i.e. with per-region weights proportional to the estimated *qualifying*
population N-hat_i * c_i / m_i rather than the whole-leaf N-hat_i.  With
whole-leaf weights an AVG over a predicate that cuts leaves converges to a
differently-weighted mixture, which breaks both unbiasedness and the
exact-degenerate case; the qualifying weights make both hold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    AggKind,
    EngineConfig,
    Query,
    Tuple,
    Unanswerable,
    z_for_confidence,
)

EXACT = "exact"
APPROXIMATE = "approximate"


@dataclass
class PhiContext:
    n_hat: float
    m_i: int
    qualifying: int


def phi(kind: AggKind, t: Tuple, q: Query, ctx: PhiContext) -> float:
    """Per-sample scaled contribution; the estimate for a stratum is the
    mean of phi over all its samples."""
    pred = 1.0 if _qualifies(t, q) else 0.0
    if kind is AggKind.COUNT:
        return pred * ctx.n_hat
    if kind is AggKind.SUM:
        return pred * ctx.n_hat * t.value
    if kind is AggKind.AVG:
        if ctx.qualifying == 0:
            raise Unanswerable("AVG phi with zero qualifying samples")
        return pred * (ctx.m_i / ctx.qualifying) * t.value
    raise ValueError(f"phi undefined for {kind}")


def _qualifies(t: Tuple, q: Query) -> bool:
    for c, lo, hi in zip(t.coords, q.predicate.lo, q.predicate.hi):
        if c < lo or c >= hi:
            return False
    return True


@dataclass
class QueryAnswer:
    kind: AggKind
    estimate: float
    ci_half_width: Optional[float]
    nu_c: Optional[float]
    nu_s: Optional[float]
    exactness: str
    confidence: float = 0.95
    diagnostics: list = field(default_factory=list)

    @property
    def exact(self) -> bool:
        return self.exactness == EXACT

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "estimate": self.estimate,
            "ci": self.ci_half_width,
            "nu_c": self.nu_c,
            "nu_s": self.nu_s,
            "exact": self.exact,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _covered_variance(kind: AggKind, n_hat: float, h_i: int, h_sum: float, h_sumsq: float, w: float) -> float:
    if h_i <= 0:
        return 0.0
    if kind is AggKind.COUNT:
        return 0.0  # phi is constant N-hat over a fully covered node
    if kind is AggKind.SUM:
        return max(0.0, (n_hat * n_hat) * (h_i * h_sumsq - h_sum * h_sum) / h_i**3)
    if kind is AggKind.AVG:
        return max(0.0, (w * w) * (h_i * h_sumsq - h_sum * h_sum) / h_i**3)
    raise ValueError(kind)


def _partial_variance(kind: AggKind, n_hat: float, m_i: int, c_i: int, s: float, s2: float, w: float) -> float:
    if m_i <= 0:
        return 0.0
    if kind in (AggKind.COUNT, AggKind.SUM):
        if kind is AggKind.COUNT:
            s, s2 = float(c_i), float(c_i)
        return max(0.0, (n_hat * n_hat) * (m_i * s2 - s * s) / m_i**3)
    if kind is AggKind.AVG:
        if c_i == 0:
            return 0.0
        return max(0.0, (w * w) * (m_i * s2 - s * s) / (m_i * c_i * c_i))
    raise ValueError(kind)


def answer(q: Query, tree, reservoir, config: EngineConfig) -> QueryAnswer:
    if q.predicate.d != tree.d:
        raise Unanswerable(f"query has {q.predicate.d} dims, tree {tree.d}")
    if q.kind in (AggKind.MIN, AggKind.MAX):
        return _answer_minmax(q, tree, reservoir)

    covered, partial = tree.frontier(q.predicate)
    diagnostics = []

    cov = []  # (node, n_hat, est_part, h stats)
    for i in covered:
        n_hat = tree.estimated_population(i, reservoir)
        st = tree.node_stats(i)
        if q.kind is AggKind.COUNT:
            part = n_hat
        else:
            part = tree.estimated_sum(i, reservoir)
        cov.append((i, n_hat, part, st))
        diagnostics.append({"node": i, "role": "covered", "estimate": part, "n_hat": n_hat})

    par = []  # (leaf, n_hat, m_i, c_i, s, s2)
    for i in partial:
        li = tree.leaf_ordinal[i]
        m_i = reservoir.strata.size(li) if reservoir.strata is not None else 0
        n_hat = tree.estimated_population(i, reservoir)
        if m_i == 0:
            diagnostics.append(
                {"node": i, "role": "partial", "estimate": 0.0, "m_i": 0, "low_confidence": True}
            )
            par.append((i, n_hat, 0, 0, 0.0, 0.0))
            continue
        c_i, s, s2 = reservoir.strata.moments_in(li, q.predicate)
        par.append((i, n_hat, m_i, c_i, s, s2))
        diagnostics.append({"node": i, "role": "partial", "m_i": m_i, "qualifying": c_i})

    is_exact = tree.built_on_empty and not partial

    if q.kind in (AggKind.COUNT, AggKind.SUM):
        est = 0.0
        nu_c = 0.0
        nu_s = 0.0
        for i, n_hat, part, st in cov:
            est += part
            nu_c += _covered_variance(q.kind, n_hat, st.h_count, st.h_sum, st.h_sumsq, 1.0)
        for i, n_hat, m_i, c_i, s, s2 in par:
            if m_i > 0:
                est += (n_hat / m_i) * (c_i if q.kind is AggKind.COUNT else s)
            nu_s += _partial_variance(q.kind, n_hat, m_i, c_i, s, s2, 1.0)
        z = z_for_confidence(q.confidence, config.z)
        ci = 0.0 if is_exact else z * math.sqrt(nu_c + nu_s)
        return QueryAnswer(
            q.kind, est, ci, nu_c, nu_s, EXACT if is_exact else APPROXIMATE,
            q.confidence, diagnostics,
        )

    # AVG: ratio of the unbiased SUM and COUNT estimates; weights are the
    # estimated qualifying populations (clamped at zero).
    num = 0.0
    den = 0.0
    pieces = []  # (kind_ctx, qual_pop, mean, variance closure inputs)
    for i, n_hat, part, st in cov:
        qual = max(0.0, n_hat)
        num += part
        den += qual
        pieces.append(("covered", i, qual, st, n_hat))
    for i, n_hat, m_i, c_i, s, s2 in par:
        if m_i > 0 and c_i > 0:
            qual = max(0.0, n_hat) * c_i / m_i
            num += (n_hat / m_i) * s
            den += qual
            pieces.append(("partial", i, qual, (m_i, c_i, s, s2), n_hat))
    if den <= 0.0:
        raise Unanswerable("AVG over zero estimated qualifying population")
    est = num / den

    nu_c = 0.0
    nu_s = 0.0
    for role, i, qual, payload, n_hat in pieces:
        w = qual / den
        if role == "covered":
            st = payload
            nu_c += _covered_variance(AggKind.AVG, n_hat, st.h_count, st.h_sum, st.h_sumsq, w)
        else:
            m_i, c_i, s, s2 = payload
            nu_s += _partial_variance(AggKind.AVG, n_hat, m_i, c_i, s, s2, w)
    z = z_for_confidence(q.confidence, config.z)
    ci = 0.0 if is_exact else z * math.sqrt(nu_c + nu_s)
    return QueryAnswer(
        AggKind.AVG, est, ci, nu_c, nu_s, EXACT if is_exact else APPROXIMATE,
        q.confidence, diagnostics,
    )


def _answer_minmax(q: Query, tree, reservoir) -> QueryAnswer:
    """Best-effort MIN/MAX: covered-node heap tops merged with pool extrema
    inside the predicate; no confidence interval (none is defined)."""
    covered, partial = tree.frontier(q.predicate)
    want_min = q.kind is AggKind.MIN
    candidates = []
    stale = False
    diagnostics = []
    for i in covered:
        st = tree.node_stats(i)
        heap = st.bot if want_min else st.top
        if heap:
            candidates.append(heap[0] if want_min else heap[-1])
        elif st.ins_count - st.del_count > 0 or not tree.built_on_empty:
            stale = True
        if st.minmax_stale:
            stale = True
        diagnostics.append({"node": i, "role": "covered", "heap_size": len(heap)})
    pool_candidates = [
        t.value for t in reservoir.samples() if _qualifies(t, q)
    ]
    if pool_candidates:
        candidates.append(min(pool_candidates) if want_min else max(pool_candidates))
    if not candidates:
        raise Unanswerable(f"{q.kind.value} with no observed values in predicate")
    est = min(candidates) if want_min else max(candidates)
    exact = tree.built_on_empty and not partial and not stale
    return QueryAnswer(
        q.kind, est, None, None, None, EXACT if exact else APPROXIMATE,
        q.confidence, diagnostics,
    )
