"""Impression-grouped ranking metrics.

Ranking is by score descending with ties broken by candidate position
(stable). AUC counts tied positive/negative pairs as half a win. MRR
averages reciprocal ranks over an impression's positives; nDCG uses binary
gains with the usual log2 discount. Impressions without a positive score
0 for MRR/nDCG; AUC is undefined there (and with no negatives) and such
impressions are skipped by the aggregator, with a count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_arrays(labels, scores):
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError(f"labels {labels.shape} and scores {scores.shape} must be matching 1-d arrays")
    return labels, scores


def descending_ranks(scores: np.ndarray) -> np.ndarray:
    """rank[i] = 1-based position of item i when sorted by score descending,
    ties keeping original order."""
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ascending ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def impression_auc(labels, scores) -> float | None:
    """P(random positive outranks random negative), ties counting half.

    Returns None when the impression has no positive or no negative.
    """
    labels, scores = _as_arrays(labels, scores)
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mrr(labels, scores) -> float:
    """Mean reciprocal rank over the impression's positives; 0 without any."""
    labels, scores = _as_arrays(labels, scores)
    pos = np.flatnonzero(labels > 0)
    if len(pos) == 0:
        return 0.0
    ranks = descending_ranks(scores)
    return float(np.mean(1.0 / ranks[pos]))


def ndcg_at_k(labels, scores, k: int) -> float:
    """Binary-gain nDCG over the top-k ranked items; 0 without positives."""
    labels, scores = _as_arrays(labels, scores)
    n_pos = int((labels > 0).sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    top = labels[order[:k]]
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float((top * discounts).sum())
    ideal = float(discounts[: min(n_pos, k)].sum())
    return dcg / ideal


@dataclass
class MetricsReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int = 0
    n_auc_undefined: int = 0
    n_skipped_no_history: int = 0
    n_dropped_candidates: int = 0
    per_impression: list | None = None

    def as_dict(self) -> dict[str, float]:
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5, "ndcg10": self.ndcg10}


def aggregate(rows: list[dict], keep_rows: bool = False, **counts) -> MetricsReport:
    """Equal-weight mean over impressions; AUC averages its defined subset."""
    aucs = [r["auc"] for r in rows if r["auc"] is not None]
    report = MetricsReport(
        auc=float(np.mean(aucs)) if aucs else 0.0,
        mrr=float(np.mean([r["mrr"] for r in rows])) if rows else 0.0,
        ndcg5=float(np.mean([r["ndcg5"] for r in rows])) if rows else 0.0,
        ndcg10=float(np.mean([r["ndcg10"] for r in rows])) if rows else 0.0,
        n_impressions=len(rows),
        n_auc_undefined=len(rows) - len(aucs),
        per_impression=rows if keep_rows else None,
    )
    for key, value in counts.items():
        setattr(report, key, value)
    return report
