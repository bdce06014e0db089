"""Filtered ranking with average-rank ties, MRR/Hits@k, and distance reports.

Every test triple is ranked in both directions: the tail query as given and
the head query rewritten over the inverse relation. Known true answers other
than the target are removed from the candidate pool, and tied candidates
receive the average of the rank positions they jointly occupy (so ranks are
exact rationals, possibly half-integers).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conditioning import AblationFlags, FULL_MODEL
from .graph import INF_DISTANCE, KnowledgeGraph, Triple, bfs_distances
from .model import ConditionCache, MStarModel

COARSE_NEAR = (1, 4)    # [1, 4)
COARSE_MID = (4, 7)     # [4, 7)
COARSE_FAR_START = 7    # [7, max finite]


@dataclass
class RankRecord:
    """Outcome of one directional query."""

    query: Triple                  # directional form (rel may be an inverse id)
    rank: Fraction
    distance: int = INF_DISTANCE   # head-tail hops, query edge excluded


@dataclass
class EvalResult:
    records: list[RankRecord]
    mrr: float
    hits: float
    k: int


def filtered_rank(scores: np.ndarray, target: int, known_true: Iterable[int]) -> Fraction:
    """Average-rank position of the target among the unfiltered candidates.

    Candidates equal to other known true answers are dropped; the target is
    never dropped. rank = |better| + (|tied| + 1) / 2, ties counted over the
    remaining candidates and including the target itself.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < scores.shape[0]:
        raise IndexError(f"target id {target} out of range")
    keep = np.ones(scores.shape[0], dtype=bool)
    filtered = np.fromiter((e for e in known_true if e != target), dtype=np.int64)
    if filtered.size:
        keep[filtered] = False
    keep[target] = True
    target_score = scores[target]
    kept = scores[keep]
    better = int(np.count_nonzero(kept > target_score))
    tied = int(np.count_nonzero(kept == target_score))
    return Fraction(2 * better + tied + 1, 2)


def metrics(records: Sequence[RankRecord], k: int = 10) -> tuple[float, float]:
    """(MRR, Hits@k) over rank records."""
    if not records:
        raise ValueError("metrics over an empty record list")
    mrr = float(np.mean([1.0 / float(r.rank) for r in records]))
    hits = float(np.mean([1.0 if r.rank <= k else 0.0 for r in records]))
    return mrr, hits


@dataclass
class BucketRow:
    label: str
    proportion: float  # percent
    hits: float
    mrr: float


def _bucket(records: list[RankRecord], total: int, label: str, k: int) -> BucketRow:
    if not records:
        return BucketRow(label, 0.0, 0.0, 0.0)
    mrr, hits = metrics(records, k)
    return BucketRow(label, 100.0 * len(records) / total, hits, mrr)


def per_distance_report(
    records: Sequence[RankRecord], k: int = 10
) -> tuple[list[BucketRow], list[BucketRow]]:
    """Fine rows for each exact distance 1..max plus infinity, and the coarse
    [1,4) / [4,7) / [7,max] / infinity grouping."""
    if not records:
        raise ValueError("per-distance report over an empty record list")
    total = len(records)
    finite = [r.distance for r in records if r.distance != INF_DISTANCE]
    max_finite = max(finite) if finite else 0

    fine = []
    for d in range(1, max_finite + 1):
        fine.append(_bucket([r for r in records if r.distance == d], total, str(d), k))
    fine.append(_bucket([r for r in records if r.distance == INF_DISTANCE], total, "inf", k))

    coarse = [
        _bucket(
            [r for r in records if COARSE_NEAR[0] <= r.distance < COARSE_NEAR[1]],
            total, f"[{COARSE_NEAR[0]},{COARSE_NEAR[1]})", k,
        ),
        _bucket(
            [r for r in records if COARSE_MID[0] <= r.distance < COARSE_MID[1]],
            total, f"[{COARSE_MID[0]},{COARSE_MID[1]})", k,
        ),
        _bucket(
            [r for r in records
             if r.distance >= COARSE_FAR_START and r.distance != INF_DISTANCE],
            total, f"[{COARSE_FAR_START},{max(max_finite, COARSE_FAR_START)}]", k,
        ),
        _bucket([r for r in records if r.distance == INF_DISTANCE], total, "inf", k),
    ]
    return fine, coarse


def build_filter_index(
    graph: KnowledgeGraph, query_splits: Sequence[Sequence[Triple]]
) -> dict[tuple[int, int], set[int]]:
    """(head, rel) -> known true tails, over the graph and the given splits,
    in both directions."""
    index: dict[tuple[int, int], set[int]] = {}
    num_rels = graph.num_original_relations

    def put(h: int, r: int, t: int) -> None:
        index.setdefault((h, r), set()).add(t)
        index.setdefault((t, r + num_rels if r < num_rels else r - num_rels), set()).add(h)

    for i in range(graph.num_original_triples):
        h, r, t = graph.triple(i)
        put(h, r, t)
    for split in query_splits:
        for h, r, t in split:
            put(h, r, t)
    return index


def directional_queries(query: Triple, num_rels: int) -> tuple[Triple, Triple]:
    """The tail query as-is and the head query over the inverse relation."""
    return query, Triple(query.tail, query.rel + num_rels, query.head)


def evaluate(
    model: MStarModel,
    queries: Sequence[Triple],
    filter_index: Mapping[tuple[int, int], set[int]] | None = None,
    extra_filter_splits: Sequence[Sequence[Triple]] = (),
    flags: AblationFlags = FULL_MODEL,
    k: int = 10,
    with_distances: bool = False,
) -> EvalResult:
    """Rank every query in both directions against all candidate entities."""
    graph = model.graph
    if filter_index is None:
        filter_index = build_filter_index(graph, [list(queries), *extra_filter_splits])
    num_rels = graph.num_original_relations
    cache = ConditionCache()
    records: list[RankRecord] = []
    for query in queries:
        distance = INF_DISTANCE
        if with_distances:
            excluded = graph.query_edge_ids(*query)
            distance = int(bfs_distances(graph, query.head, excluded)[query.tail])
        for directional in directional_queries(query, num_rels):
            result = model.forward_query(directional, flags=flags, cache=cache)
            known = filter_index.get((directional.head, directional.rel), set())
            rank = filtered_rank(result.scored.scores.data, directional.tail, known)
            records.append(RankRecord(query=directional, rank=rank, distance=distance))
    mrr, hits = metrics(records, k)
    return EvalResult(records=records, mrr=mrr, hits=hits, k=k)


def distance_proportions(
    distances: Sequence[int],
) -> tuple[list[tuple[str, float]], list[tuple[str, float]]]:
    """Model-free distance histogram: fine rows per exact hop count plus
    infinity, and the coarse [1,4) / [4,7) / [7,max] / infinity grouping."""
    if not distances:
        raise ValueError("distance histogram over an empty query list")
    total = len(distances)
    finite = [d for d in distances if d != INF_DISTANCE]
    max_finite = max(finite) if finite else 0

    def pct(predicate) -> float:
        return 100.0 * sum(1 for d in distances if predicate(d)) / total

    fine = [(str(d), pct(lambda x, d=d: x == d)) for d in range(1, max_finite + 1)]
    fine.append(("inf", pct(lambda x: x == INF_DISTANCE)))
    coarse = [
        (f"[{COARSE_NEAR[0]},{COARSE_NEAR[1]})",
         pct(lambda x: COARSE_NEAR[0] <= x < COARSE_NEAR[1])),
        (f"[{COARSE_MID[0]},{COARSE_MID[1]})",
         pct(lambda x: COARSE_MID[0] <= x < COARSE_MID[1])),
        (f"[{COARSE_FAR_START},{max(max_finite, COARSE_FAR_START)}]",
         pct(lambda x: x >= COARSE_FAR_START and x != INF_DISTANCE)),
        ("inf", pct(lambda x: x == INF_DISTANCE)),
    ]
    return fine, coarse


# -- report rendering ---------------------------------------------------------


def format_metrics_report(result: EvalResult) -> str:
    lines = [
        f"queries = {len(result.records)}",
        f"mrr = {result.mrr:.6f}",
        f"hits@{result.k} = {result.hits:.6f}",
    ]
    return "\n".join(lines) + "\n"


def format_bucket_table(rows: Sequence[BucketRow], k: int) -> str:
    lines = [f"distance\tproportion\thits@{k}\tmrr"]
    for row in rows:
        lines.append(f"{row.label}\t{row.proportion:.2f}\t{row.hits:.3f}\t{row.mrr:.3f}")
    return "\n".join(lines) + "\n"


def format_distance_report(result: EvalResult) -> str:
    fine, coarse = per_distance_report(result.records, result.k)
    parts = [
        format_metrics_report(result),
        "# per-distance (exact hops)\n",
        format_bucket_table(fine, result.k),
        "# per-distance (coarse buckets)\n",
        format_bucket_table(coarse, result.k),
    ]
    return "".join(parts)
