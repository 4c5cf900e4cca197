"""Hamming-space nearest-neighbor search and retrieval metrics.

Ranking is a full linear scan with the byte-popcount kernel; ties are
broken by ascending candidate id so results are deterministic. Average
precision is the standard full-ranking retrieval AP.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .errors import InvalidInputError
from .hash_space import BitCode, bulk_hamming, pack_code_matrix

__all__ = [
    "RankedList",
    "rank",
    "average_precision",
    "mean_average_precision",
    "load_relevance_csv",
    "write_ranking_csv",
]


@dataclass(frozen=True)
class RankedList:
    """Candidates ordered by ascending Hamming distance, then ascending id."""

    query_id: str
    entries: tuple[tuple[str, int], ...]  # (candidate id, distance)


def rank(query: BitCode, database, k: int | None = None, query_id: str = "") -> RankedList:
    """Rank (id, code) candidates by Hamming distance to the query."""
    items = list(database)
    if not items:
        raise InvalidInputError("database is empty")
    ids = [str(i) for i, _ in items]
    codes = [c for _, c in items]
    if any(c.nbits != query.nbits for c in codes):
        raise InvalidInputError("database codes must match the query hash length")
    distances = bulk_hamming(query, pack_code_matrix(codes))
    order = sorted(range(len(items)), key=lambda idx: (int(distances[idx]), ids[idx]))
    if k is not None:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        order = order[:k]
    entries = tuple((ids[idx], int(distances[idx])) for idx in order)
    return RankedList(query_id=query_id, entries=entries)


def average_precision(ranked: RankedList, relevant) -> float:
    """Mean of precision-at-r over the ranks r holding a relevant item.

    Relevant items missing from the ranking contribute zero, exactly as in
    the full-ranking AP definition.
    """
    relevant_set = {str(r) for r in relevant}
    if not relevant_set:
        raise InvalidInputError("relevant set is empty; AP is undefined")
    hits = 0
    precision_sum = 0.0
    for position, (candidate, _) in enumerate(ranked.entries, start=1):
        if candidate in relevant_set:
            hits += 1
            precision_sum += hits / position
    return precision_sum / len(relevant_set)


def mean_average_precision(queries) -> float:
    """Unweighted mean of per-query AP over (RankedList, relevant set) pairs."""
    aps = [average_precision(ranked, relevant) for ranked, relevant in queries]
    if not aps:
        raise InvalidInputError("no evaluable queries; mAP is undefined")
    return sum(aps) / len(aps)


def load_relevance_csv(path) -> dict[str, set[str]]:
    """Read (query_id, relevant_id) rows into a per-query relevance map."""
    judgments: dict[str, set[str]] = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].startswith("#"):
                continue
            if row == ["query_id", "relevant_id"]:
                continue
            if len(row) != 2:
                raise InvalidInputError(f"{path}: expected 2 columns, got {row}")
            judgments.setdefault(row[0], set()).add(row[1])
    return judgments


def write_ranking_csv(path, rankings) -> None:
    """Write RankedLists as (query_id, rank, candidate_id, distance) rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "rank", "candidate_id", "distance"])
        for ranked in rankings:
            for position, (candidate, distance) in enumerate(ranked.entries, start=1):
                writer.writerow([ranked.query_id, position, candidate, distance])
