"""Exact retrieval evaluation: cosine ranking plus mAP, NDCG, and ANMRR.

All three metrics run over the full (untruncated) ranking with binary
relevance. Queries with no relevant target are excluded from every mean
rather than zero-scored. ANMRR follows the MPEG-7 definition with the
per-query window K(q) = min(4*NG(q), 2*GTM); the K(q) = 2*NG(q) variant is
available behind `variant="2ng"`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import cosine_similarity_matrix


@dataclass
class RankedList:
    query_id: str
    target_ids: list  # best first
    relevance: np.ndarray  # bool, aligned with target_ids
    ng: int
    zero_query: bool = False


@dataclass
class PerQueryMetrics:
    query_id: str
    ap: float
    ndcg: float
    nmrr: float


@dataclass
class MetricsReport:
    map: float
    ndcg: float
    anmrr: float
    per_query: list  # of PerQueryMetrics, sorted by query id
    num_queries: int
    config_hash: int
    seed: int


def rank_targets(query_desc, target_descs, query_label, target_labels,
                 query_id="q", target_ids=None) -> RankedList:
    """Rank targets by descending cosine similarity to the query.

    Exact similarity ties break by ascending target index. Zero-vector
    targets sort below every real similarity; a zero-vector query is
    flagged and yields pure index order.
    """
    query_desc = np.asarray(query_desc, dtype=np.float64)
    target_labels = np.asarray(target_labels)
    n = len(target_labels)
    if target_ids is None:
        target_ids = [str(i) for i in range(n)]
    zero_query = bool(np.linalg.norm(query_desc) < 1e-12)
    sims = cosine_similarity_matrix(query_desc[None, :], target_descs)[0]
    target_norms = np.linalg.norm(np.asarray(target_descs, dtype=np.float64), axis=1)
    sims = np.where(target_norms < 1e-12, -2.0, sims)
    order = np.lexsort((np.arange(n), -sims))
    relevance = target_labels[order] == query_label
    return RankedList(
        query_id=query_id,
        target_ids=[target_ids[i] for i in order],
        relevance=relevance,
        ng=int(relevance.sum()),
        zero_query=zero_query,
    )


def average_precision(ranked: RankedList) -> float:
    """AP over the full ranking; NaN when the query has no relevant target."""
    if ranked.ng == 0:
        return float("nan")
    rel = ranked.relevance.astype(np.float64)
    cum = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((cum[rel > 0] / ranks[rel > 0]).sum() / ranked.ng)


def ndcg(ranked: RankedList) -> float:
    """Binary-gain NDCG over the full ranking (log2(rank+1) discount)."""
    if ranked.ng == 0:
        return float("nan")
    ranks = np.arange(1, len(ranked.relevance) + 1)
    discounts = 1.0 / np.log2(ranks + 1)
    dcg = discounts[ranked.relevance].sum()
    ideal = discounts[:ranked.ng].sum()
    return float(dcg / ideal)


def recall_at_k(ranked: RankedList, k: int) -> float:
    """Fraction of the relevant set retrieved in the top k."""
    if ranked.ng == 0:
        return float("nan")
    return float(ranked.relevance[:k].sum() / ranked.ng)


def anmrr(ranked_lists, variant="gtm"):
    """MPEG-7 average normalized modified retrieval rank.

    Returns (anmrr, per_query_nmrr) with NaN entries for NG=0 queries,
    which are excluded from the mean.
    """
    if variant not in ("gtm", "2ng"):
        raise ValueError(f"unknown anmrr variant {variant!r}")
    ngs = [r.ng for r in ranked_lists if r.ng > 0]
    gtm = max(ngs) if ngs else 0
    per_query = []
    for ranked in ranked_lists:
        if ranked.ng == 0:
            per_query.append(float("nan"))
            continue
        k_q = min(4 * ranked.ng, 2 * gtm) if variant == "gtm" else 2 * ranked.ng
        rel_ranks = np.flatnonzero(ranked.relevance) + 1
        capped = np.where(rel_ranks <= k_q, rel_ranks, 1.25 * k_q)
        avr = capped.mean()
        mrr = avr - 0.5 - ranked.ng / 2.0
        denom = 1.25 * k_q - 0.5 - ranked.ng / 2.0
        per_query.append(float(mrr / denom))
    valid = [v for v in per_query if not math.isnan(v)]
    overall = float(np.mean(valid)) if valid else float("nan")
    return overall, per_query


def evaluate_retrieval(query_descs, query_labels, target_descs, target_labels,
                       query_ids=None, target_ids=None, variant="gtm",
                       workers=1, config_hash=0, seed=0) -> MetricsReport:
    """Rank every query against the full target set and aggregate metrics.

    Per-query work may run in parallel; results are sorted by query id
    before aggregation so the report is independent of worker count.
    """
    query_descs = np.asarray(query_descs, dtype=np.float64)
    nq = len(query_descs)
    if nq == 0 or len(target_descs) == 0:
        raise ValueError("query and target splits must be non-empty")
    if query_ids is None:
        query_ids = [f"q{i:05d}" for i in range(nq)]

    def one(i):
        return rank_targets(query_descs[i], target_descs, query_labels[i],
                            target_labels, query_id=query_ids[i],
                            target_ids=target_ids)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranked = list(pool.map(one, range(nq)))
    else:
        ranked = [one(i) for i in range(nq)]

    ranked.sort(key=lambda r: r.query_id)
    kept = [r for r in ranked if r.ng > 0]
    if not kept:
        raise ValueError("no query has any relevant target")
    _, nmrrs = anmrr(kept, variant=variant)
    per_query = [
        PerQueryMetrics(r.query_id, average_precision(r), ndcg(r), nmrrs[i])
        for i, r in enumerate(kept)
    ]
    return MetricsReport(
        map=float(np.mean([p.ap for p in per_query])),
        ndcg=float(np.mean([p.ndcg for p in per_query])),
        anmrr=float(np.mean([p.nmrr for p in per_query])),
        per_query=per_query,
        num_queries=len(per_query),
        config_hash=config_hash,
        seed=seed,
    )


def render_report(report: MetricsReport) -> str:
    """Serialize a report as stable-format JSON text (6 decimal places,
    fixed key order, no timing fields) so byte equality means result
    equality."""
    lines = [
        "{",
        f'  "map": {report.map:.6f},',
        f'  "ndcg": {report.ndcg:.6f},',
        f'  "anmrr": {report.anmrr:.6f},',
        f'  "num_queries": {report.num_queries},',
        f'  "config_hash": "{report.config_hash}",',
        f'  "seed": {report.seed},',
        '  "per_query": [',
    ]
    for i, p in enumerate(report.per_query):
        comma = "," if i + 1 < len(report.per_query) else ""
        lines.append(
            f'    {{"id": "{p.query_id}", "ap": {p.ap:.6f}, '
            f'"ndcg": {p.ndcg:.6f}, "nmrr": {p.nmrr:.6f}}}{comma}'
        )
    lines += ["  ]", "}", ""]
    return "\n".join(lines)
