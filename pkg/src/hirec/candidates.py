"""Per-user candidate generation from the two inference channels.

The p2p channel scores items by propagating a user's positive history
through the smoothed co-positive similarity; the n2p channel propagates the
negative history through the cross similarity, which spreads relevance
across topics instead of concentrating it. Mixed lists take a count quota
from each channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factorization import FactorModel
from .feedback import FeedbackMatrices
from .util import top_n_indices


@dataclass(frozen=True)
class ScoredItem:
    item: int
    score: float
    channel: str  # p2p | n2p | rt

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass
class RecommendationList:
    user: int
    items: list
    n: int
    short: bool = False  # fewer scoreable items than requested

    def __post_init__(self):
        seen = set()
        for s in self.items:
            if s.item in seen:
                raise ValueError(f"duplicate item {s.item} in recommendation list")
            seen.add(s.item)
        if len(self.items) > self.n:
            raise ValueError("list longer than requested length")

    def item_ids(self) -> list:
        return [s.item for s in self.items]


def p2p_scores(fm: FeedbackMatrices, model: FactorModel, user: int,
               exclude_engaged: bool = False) -> np.ndarray:
    """Dense relevance row: positive history times smoothed p2p similarity.

    Computed through the k-dimensional factor space, never the dense n x n
    product. With ``exclude_engaged``, items the user already saw score -inf.
    """
    _check_user(fm, user)
    row = fm.positive.getrow(user)
    proj = row @ model.left  # 1 x k
    scores = np.asarray(proj @ model.right).ravel()
    if exclude_engaged:
        scores[fm.observed_items(user)] = -np.inf
    return scores


def n2p_scores(fm: FeedbackMatrices, model: FactorModel, user: int,
               exclude_engaged: bool = False) -> np.ndarray:
    """Dense relevance row from the negative history and the n2p similarity."""
    _check_user(fm, user)
    row = fm.negative.getrow(user)
    proj = row @ model.left
    scores = np.asarray(proj @ model.right).ravel()
    if exclude_engaged:
        scores[fm.observed_items(user)] = -np.inf
    return scores


def _check_user(fm, user):
    if not (0 <= user < fm.m):
        raise IndexError(f"user index {user} out of range [0, {fm.m})")


def _ranked_scoreable(scores: np.ndarray) -> np.ndarray:
    """Channel candidates in rank order; zero scores carry no evidence and
    are not scoreable."""
    order = top_n_indices(scores, len(scores))
    return order[scores[order] != 0.0]


def mixed_candidates(fm: FeedbackMatrices, p2p_model: FactorModel,
                     n2p_model: FactorModel, user: int, n: int,
                     ratio_p2p: float = 0.67,
                     exclude_engaged: bool = True) -> RecommendationList:
    """Top-n list mixing the channels by a count quota.

    ``ceil(ratio_p2p * n)`` slots go to the p2p ranking and the rest to the
    n2p ranking. An item surfacing in both keeps its p2p copy and the next
    n2p item is pulled instead; if one channel runs out of scoreable items
    the other backfills. The list is only short when both channels combined
    cannot fill it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 <= ratio_p2p <= 1.0):
        raise ValueError("ratio_p2p must lie in [0, 1]")
    sp = p2p_scores(fm, p2p_model, user, exclude_engaged)
    sn = n2p_scores(fm, n2p_model, user, exclude_engaged)
    p_rank = _ranked_scoreable(sp)
    n_rank = _ranked_scoreable(sn)

    quota_p = int(np.ceil(ratio_p2p * n))
    picked = []
    chosen = set()

    def take(rank, scores, channel, count):
        got = 0
        for item in rank:
            if got == count:
                break
            if item in chosen:
                continue
            chosen.add(int(item))
            picked.append(ScoredItem(int(item), float(scores[item]), channel))
            got += 1

    take(p_rank, sp, "p2p", quota_p)
    take(n_rank, sn, "n2p", n - len(picked))
    if len(picked) < n:  # backfill whichever channel still has depth
        take(p_rank, sp, "p2p", n - len(picked))
        take(n_rank, sn, "n2p", n - len(picked))
    return RecommendationList(user, picked, n, short=len(picked) < n)


def write_recommendations_tsv(path, lists, item_ids=None, user_ids=None) -> None:
    """TSV wire format: user, rank, item, score, channel."""
    with open(path, "w") as fh:
        fh.write("user\trank\titem\tscore\tchannel\n")
        for rl in lists:
            user = user_ids[rl.user] if user_ids is not None else rl.user
            for rank, s in enumerate(rl.items, start=1):
                item = item_ids[s.item] if item_ids is not None else s.item
                fh.write(f"{user}\t{rank}\t{item}\t{s.score!r}\t{s.channel}\n")
