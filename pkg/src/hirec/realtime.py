"""Realtime recommendation from a stacked two-channel model.

Offline, the stacked similarity input (co-positive gram over cross matrix)
is factorized once. Online, a session row holding the user's positive and
negative marks is projected through the left factors into k dimensions and
expanded back over items, so a request costs O((|pos| + |neg|) * k + n * k)
and never touches an n x n matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .candidates import RecommendationList, ScoredItem
from .factorization import FactorModel, factorize, stacked_rt
from .feedback import FeedbackMatrices
from .util import top_n_indices


@dataclass
class RtModel:
    factors: FactorModel  # left: 2n x k, right: k x n
    beta: float
    n: int

    def __post_init__(self):
        if self.factors.left.shape[0] != 2 * self.n:
            raise ValueError("stacked model must have 2n left rows")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class SessionState:
    """One user's in-session marks. Supports stay disjoint: the latest
    feedback on an item wins."""

    user: object
    n: int
    positive: set = field(default_factory=set)
    negative: set = field(default_factory=set)
    journal: list = field(default_factory=list)  # append-only event log

    @classmethod
    def from_matrices(cls, fm: FeedbackMatrices, user: int) -> "SessionState":
        pos = fm.positive.getrow(user).indices
        neg = fm.negative.getrow(user).indices
        return cls(user, fm.n, set(int(j) for j in pos), set(int(j) for j in neg))


def train_rt(fm: FeedbackMatrices, k=10, lam=0.05, iters=15, beta=1.0,
             seed=0, stop_tol=1e-4) -> RtModel:
    """Factorize the stacked two-channel input for online serving."""
    model = factorize(stacked_rt(fm), k=k, lam=lam, iters=iters, seed=seed,
                      stop_tol=stop_tol)
    return RtModel(model, beta, fm.n)


def session_scores(model: RtModel, state: SessionState) -> np.ndarray:
    """Dense score row for a session: positive marks address the top block
    of the left factors, negative marks the bottom block scaled by beta."""
    if state.n != model.n:
        raise ValueError("session state length does not match model")
    left, right = model.factors.left, model.factors.right
    proj = np.zeros(model.factors.k)
    if state.positive:
        proj += left[sorted(state.positive)].sum(axis=0)
    if state.negative and model.beta != 0.0:
        rows = np.fromiter(sorted(state.negative), dtype=np.int64) + model.n
        proj += model.beta * left[rows].sum(axis=0)
    return proj @ right


def recommend_rt(model: RtModel, state: SessionState, n: int) -> RecommendationList:
    """Top-n items for the session, engaged items excluded. A session with
    no usable evidence returns an empty list flagged short."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = session_scores(model, state)
    engaged = state.positive | state.negative
    if engaged:
        scores[np.fromiter(engaged, dtype=np.int64)] = -np.inf
    ranked = top_n_indices(scores, n)
    ranked = ranked[scores[ranked] != 0.0]
    items = [ScoredItem(int(j), float(scores[j]), "rt") for j in ranked]
    return RecommendationList(state.user if isinstance(state.user, int) else 0,
                              items, n, short=len(items) < n)


def apply_event(state: SessionState, item: int, feedback: str) -> SessionState:
    """Record an in-session event; an item moving between supports keeps
    only its latest mark."""
    if not (0 <= item < state.n):
        raise ValueError(f"item {item} out of range [0, {state.n})")
    if feedback == "positive":
        state.negative.discard(item)
        state.positive.add(item)
    elif feedback == "negative":
        state.positive.discard(item)
        state.negative.add(item)
    else:
        raise ValueError(f"feedback must be positive or negative, got {feedback!r}")
    state.journal.append((item, feedback))
    return state


def measure_latency(model: RtModel, states, n=10, repeats=1):
    """Per-request wall-clock latencies in milliseconds."""
    out = np.empty(len(states) * repeats)
    idx = 0
    for _ in range(repeats):
        for st in states:
            t0 = time.perf_counter()
            recommend_rt(model, st, n)
            out[idx] = (time.perf_counter() - t0) * 1e3
            idx += 1
    return out
