"""Retrieval and classification metrics: median rank, recall@K, average precision."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass
class RetrievalMetrics:
    """Headline retrieval numbers for one evaluation pass."""

    med_r: float
    recall_at: dict[int, float]
    n_queries: int
    med_r_std: float | None = None
    recall_at_std: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "med_r": self.med_r,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "n_queries": self.n_queries,
        }
        if self.med_r_std is not None:
            out["med_r_std"] = self.med_r_std
        if self.recall_at_std:
            out["recall_at_std"] = {str(k): v for k, v in self.recall_at_std.items()}
        return out


def median_rank(ranks: Sequence[int]) -> float:
    """Median of 1-based ranks; even counts average the two middle values."""
    if len(ranks) == 0:
        raise ValueError("median_rank of an empty rank list")
    return float(statistics.median(ranks))


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Percentage of ranks that are <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranks) == 0:
        raise ValueError("recall_at_k of an empty rank list")
    hits = sum(1 for r in ranks if r <= k)
    return 100.0 * hits / len(ranks)


def retrieval_metrics(ranks: Sequence[int], ks: Sequence[int] = (1, 5, 10)) -> RetrievalMetrics:
    return RetrievalMetrics(
        med_r=median_rank(ranks),
        recall_at={k: recall_at_k(ranks, k) for k in ks},
        n_queries=len(ranks),
    )


def per_relation_metrics(
    ranks_by_query: Mapping[str, int],
    labels_by_query: Mapping[str, Sequence[int]],
    relation_index: int,
    ks: Sequence[int] = (1, 5, 10),
) -> RetrievalMetrics | None:
    """Metrics over queries whose ground-truth pair is positive for a relation.

    Returns None when no query carries the relation (absent, not zero).
    """
    ranks = [
        rank
        for qid, rank in ranks_by_query.items()
        if labels_by_query[qid][relation_index] == 1
    ]
    if not ranks:
        return None
    return retrieval_metrics(ranks, ks)


def average_precision(
    scores: Sequence[float],
    labels: Sequence[int],
    item_ids: Sequence | None = None,
) -> float:
    """Non-interpolated average precision.

    Items are ranked by descending score; score ties are broken by ascending
    item id (input index when ids are not given). AP is the mean of the
    precision values at each positive item's rank.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive label")
    ids = list(item_ids) if item_ids is not None else list(range(len(scores)))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / n_pos


def per_relation_average_precision(
    probs: np.ndarray, labels: np.ndarray, relation_names: Sequence[str]
) -> dict[str, float | None]:
    """AP per relation column; relations with no positive labels map to None."""
    out: dict[str, float | None] = {}
    for c, name in enumerate(relation_names):
        if labels[:, c].sum() == 0:
            out[name] = None
        else:
            out[name] = average_precision(probs[:, c], labels[:, c])
    return out
