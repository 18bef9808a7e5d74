"""Relevance and diversity measurement.

Relevance side: ROC AUC via rank statistics, mean average precision over
ranked lists, and precision/recall threshold sweeps with conservative query
operators. Diversity side: pairwise item diversity as one minus min-max
normalized similarity, per-user list diversity, and distribution summaries.
Also here: score-row skew summaries (normalized entropy, Gini) and a plug-in
estimator for how much information the observation context adds to
engagement prediction beyond the positive-only context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .factorization import FactorModel


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counted half. Rank-statistic form (Mann-Whitney).

    Raises on single-class input: the quantity is undefined there and a
    made-up value would silently poison averages.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be aligned 1-d arrays")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks handle ties as half-wins
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(labels_in_rank_order) -> float:
    """Mean over positive positions of the precision at that position."""
    labels = np.asarray(labels_in_rank_order, dtype=np.float64)
    if labels.ndim != 1 or len(labels) == 0:
        raise ValueError("need a non-empty 1-d label sequence")
    positives = labels == 1
    if not positives.any():
        raise ValueError("list has no positive label")
    hits = np.cumsum(positives)
    positions = np.arange(1, len(labels) + 1)
    return float((hits[positives] / positions[positives]).mean())


def mean_average_precision(ranked_label_lists) -> float:
    """Mean AP over lists that contain at least one positive."""
    aps = [average_precision(labels)
           for labels in ranked_label_lists
           if len(labels) and np.asarray(labels).max() == 1]
    if not aps:
        raise ValueError("no list with a positive label")
    return float(np.mean(aps))


def pr_curve(scores, labels):
    """Precision and recall at every distinct-score threshold (predict
    positive when score >= threshold), thresholds descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    n_pos = l.sum()
    if n_pos == 0:
        raise ValueError("precision/recall sweep needs at least one positive")
    tp = np.cumsum(l)
    predicted = np.arange(1, len(l) + 1)
    # keep only the last index of each distinct score block
    last = np.flatnonzero(np.diff(s, append=-np.inf) != 0)
    precision = tp[last] / predicted[last]
    recall = tp[last] / n_pos
    return s[last], precision, recall


def precision_at_recall(scores, labels, target_recall) -> float | None:
    """Best precision among thresholds reaching the recall target, or None
    when no threshold does (never an invented number)."""
    _, precision, recall = pr_curve(scores, labels)
    ok = recall >= target_recall
    if not ok.any():
        return None
    return float(precision[ok].max())


def recall_at_precision(scores, labels, target_precision) -> float | None:
    """Best recall among thresholds reaching the precision target, or None."""
    _, precision, recall = pr_curve(scores, labels)
    ok = precision >= target_precision
    if not ok.any():
        return None
    return float(recall[ok].max())


class ItemSimilarity:
    """Item-item similarity min-max normalized onto [0, 1] over its entries,
    so pair diversity = 1 - similarity is a proper [0, 1] quantity."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("similarity matrix must be square")
        # low-rank reconstructions of a symmetric gram need not come back
        # exactly symmetric; symmetrize so pair diversity is order-free
        matrix = (matrix + matrix.T) / 2.0
        lo, hi = matrix.min(), matrix.max()
        self.normalized = np.zeros_like(matrix) if hi == lo else (matrix - lo) / (hi - lo)

    @classmethod
    def from_factors(cls, model: FactorModel) -> "ItemSimilarity":
        return cls(model.left @ model.right)

    @property
    def n(self) -> int:
        return self.normalized.shape[0]


def pair_diversity(sim: ItemSimilarity, i: int, j: int) -> float:
    return float(1.0 - sim.normalized[i, j])


def user_diversity(items, sim: ItemSimilarity, paper_denominator: bool = False) -> float:
    """Average pairwise diversity over the unordered item pairs of one list.

    ``paper_denominator`` divides the pair sum by 2n(n-1) instead (the sum
    then counts each unordered pair once but is scaled by an extra factor
    of 4); it rescales every method identically, so the default is the
    proper mean.
    """
    idx = (np.asarray(items.item_ids(), dtype=np.int64)
           if hasattr(items, "item_ids") else np.asarray(items, dtype=np.int64))
    n = len(idx)
    if n < 2:
        raise ValueError("diversity needs at least two items")
    sub = sim.normalized[np.ix_(idx, idx)]
    triu = np.triu_indices(n, k=1)
    pair_sum = float((1.0 - sub[triu]).sum())
    if paper_denominator:
        return pair_sum / (2.0 * n * (n - 1))
    return pair_sum / (n * (n - 1) / 2.0)


@dataclass
class DiversityReport:
    values: np.ndarray
    median: float
    p25: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def diversity_report(lists, sim: ItemSimilarity, bins: int = 20) -> DiversityReport:
    """Per-user diversity distribution. Percentiles use linear
    interpolation; the histogram covers [0, 1] with fixed-width bins."""
    values = []
    for rl in lists:
        idx = rl.item_ids() if hasattr(rl, "item_ids") else rl
        if len(idx) >= 2:
            values.append(user_diversity(idx, sim))
    if not values:
        raise ValueError("no list with at least two items to evaluate")
    values = np.asarray(values)
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return DiversityReport(
        values=values,
        median=float(np.percentile(values, 50)),
        p25=float(np.percentile(values, 25)),
        hist_edges=edges,
        hist_counts=counts,
    )


def relevance_skew(score_rows):
    """Normalized entropy and Gini coefficient of score mass over items.

    Scores are shifted to be nonnegative per row and normalized to a
    distribution. A row with no mass expresses no preference and reports
    entropy 1, Gini 0. Returns scalars for a single row, arrays otherwise.
    """
    rows = np.asarray(score_rows, dtype=np.float64)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    n = rows.shape[1]
    shifted = rows - np.minimum(rows.min(axis=1, keepdims=True), 0.0)
    mass = shifted.sum(axis=1)
    entropy = np.ones(len(rows))
    gini = np.zeros(len(rows))
    for r, (row, total) in enumerate(zip(shifted, mass)):
        if total <= 0:
            continue
        p = row / total
        nz = p[p > 0]
        entropy[r] = float(-(nz * np.log(nz)).sum() / np.log(n))
        sorted_p = np.sort(p)
        ranks = np.arange(1, n + 1)
        gini[r] = float((2.0 * np.dot(ranks, sorted_p) - (n + 1)) / n)
    if single:
        return float(entropy[0]), float(gini[0])
    return entropy, gini


def observation_info_gain(labels, pos_context, obs_context) -> float:
    """Plug-in conditional mutual information, in nats, between the label
    and the observation context given the positive-history context.

    Estimated as H(label | pos) - H(label | obs, pos) from empirical
    frequencies over discretized context buckets. Nonnegative by
    construction; exactly zero for a constant label.
    """
    labels = np.asarray(labels)
    pos_context = np.asarray(pos_context)
    obs_context = np.asarray(obs_context)
    if not (len(labels) == len(pos_context) == len(obs_context)) or len(labels) == 0:
        raise ValueError("need aligned, non-empty sample arrays")
    h_label_pos = _joint_entropy(labels, pos_context) - _joint_entropy(pos_context)
    h_label_obs_pos = (_joint_entropy(labels, obs_context, pos_context)
                       - _joint_entropy(obs_context, pos_context))
    return max(float(h_label_pos - h_label_obs_pos), 0.0)


def _joint_entropy(*columns) -> float:
    stacked = np.stack([_codes(c) for c in columns], axis=1)
    _, counts = np.unique(stacked, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _codes(column):
    _, inverse = np.unique(np.asarray(column), return_inverse=True)
    return inverse
