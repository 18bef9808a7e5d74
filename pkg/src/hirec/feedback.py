"""Interaction logs and their sparse encodings.

Engagement data is kept as three aligned sparse matrices over (user, item):

* ``positive``  -- value of the positive feedback (0/1 in binary mode,
  ``rating / 6`` in normalized mode),
* ``observed``  -- 1 wherever an impression happened, regardless of outcome,
* ``negative``  -- ``observed - positive``, i.e. negative feedback made
  explicit instead of being conflated with "never shown".

The third matrix is what separates this encoding from the conventional
positives-only one: a zero in ``positive`` is ambiguous, a one in
``negative`` is not.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .util import substream


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Interaction:
    user: object
    item: object
    value: float
    timestamp: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite feedback value for ({self.user}, {self.item})")


class FeedbackMatrices:
    """Immutable user-item feedback triple with the additive identity
    ``positive + negative == observed`` holding elementwise.

    Rows are users, columns are items. Indices are assigned in first-seen
    order over the interaction list the matrices were built from, so the
    same log always yields bit-identical matrices.
    """

    def __init__(self, positive, observed, user_ids, item_ids, mode="binary"):
        positive = sparse.csr_matrix(positive, dtype=np.float64)
        observed = sparse.csr_matrix(observed, dtype=np.float64)
        if positive.shape != observed.shape:
            raise ValueError("positive/observed shape mismatch")
        self.positive = positive
        self.observed = observed
        negative = (observed - positive).tocsr()
        negative.eliminate_zeros()
        self.negative = negative
        self.mode = mode
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {v: j for j, v in enumerate(self.item_ids)}
        self._pos_csc = None
        self._obs_csc = None
        # support(positive) must sit inside support(observed)
        probe = self.positive.copy()
        probe.data = np.ones_like(probe.data)
        outside = probe - self.observed
        if (outside > 0).nnz:
            raise ValueError("positive feedback without a matching impression")

    @property
    def m(self) -> int:
        return self.positive.shape[0]

    @property
    def n(self) -> int:
        return self.positive.shape[1]

    @property
    def positive_csc(self):
        """Column-major companion; item-column slices dominate some workloads."""
        if self._pos_csc is None:
            self._pos_csc = self.positive.tocsc()
        return self._pos_csc

    @property
    def observed_csc(self):
        if self._obs_csc is None:
            self._obs_csc = self.observed.tocsc()
        return self._obs_csc

    def positive_row(self, i):
        return self.positive.getrow(i)

    def negative_row(self, i):
        return self.negative.getrow(i)

    def observed_items(self, i) -> np.ndarray:
        return self.observed.indices[self.observed.indptr[i]:self.observed.indptr[i + 1]]


@dataclass
class TestExamples:
    """Held-out labeled impressions: did the user engage positively?"""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray  # {0,1}

    def __len__(self):
        return len(self.labels)


@dataclass
class SplitPair:
    train: FeedbackMatrices
    train_interactions: list
    test: TestExamples


@dataclass
class TopicModel:
    """Ground truth behind synthetic logs: each user has a home topic and
    engages in-topic impressions with probability ``affinity``."""

    user_topics: np.ndarray
    item_topics: np.ndarray
    affinity: float
    n_topics: int

    def positive_prob(self, user: int, item: int) -> float:
        in_topic = self.user_topics[user] == self.item_topics[item]
        return self.affinity if in_topic else 1.0 - self.affinity

    def sample_feedback(self, user: int, item: int, rng: np.random.Generator) -> float:
        return float(rng.random() < self.positive_prob(user, item))


def ingest_movielens(path, mode="binary", threshold=4.0):
    """Read a MovieLens-style ratings file into an interaction list.

    Both the classic ``user::item::rating::timestamp`` layout and the CSV
    layout ``userId,movieId,rating,timestamp`` (with or without header) are
    accepted. Binary mode maps rating >= threshold to positive feedback;
    normalized mode keeps the rating as ``rating / 6``.
    """
    if mode not in ("binary", "normalized"):
        raise ValueError(f"unknown mode {mode!r}")
    path = Path(path)
    interactions = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "::" in line:
                parts = line.split("::")
            else:
                parts = line.split(",")
            if len(parts) < 4:
                raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
            if lineno == 1 and not _is_number(parts[2]):
                continue  # CSV header
            try:
                user = parts[0].strip()
                item = parts[1].strip()
                rating = float(parts[2])
                ts = float(parts[3])
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if not (1.0 <= rating <= 5.0):
                raise ParseError(lineno, f"rating {rating} outside 1..5")
            if mode == "binary":
                value = 1.0 if rating >= threshold else 0.0
            else:
                value = rating / 6.0
            interactions.append(Interaction(user, item, value, ts))
    if not interactions:
        raise ValueError(f"no interactions found in {path}")
    return interactions


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def build_matrices(interactions, mode="binary", user_ids=None, item_ids=None) -> FeedbackMatrices:
    """Place an interaction list into the (positive, observed, negative) triple.

    Duplicate (user, item) pairs resolve to the latest timestamp; exact
    timestamp ties resolve deterministically to the larger value. Index maps
    default to first-seen order but can be pinned so that several builds
    (e.g. train matrices inside a fixed user/item universe) stay aligned.
    """
    if not interactions:
        raise ValueError("empty interaction list")
    if user_ids is None:
        user_ids = _first_seen(it.user for it in interactions)
    if item_ids is None:
        item_ids = _first_seen(it.item for it in interactions)
    uidx = {u: i for i, u in enumerate(user_ids)}
    iidx = {v: j for j, v in enumerate(item_ids)}

    latest = {}
    for it in interactions:
        key = (uidx[it.user], iidx[it.item])
        prev = latest.get(key)
        if prev is None or (it.timestamp, it.value) > (prev.timestamp, prev.value):
            latest[key] = it

    rows = np.fromiter((k[0] for k in latest), dtype=np.int64, count=len(latest))
    cols = np.fromiter((k[1] for k in latest), dtype=np.int64, count=len(latest))
    vals = np.fromiter((it.value for it in latest.values()), dtype=np.float64, count=len(latest))
    if mode == "binary" and not np.isin(vals, (0.0, 1.0)).all():
        raise ValueError("binary mode requires feedback values in {0, 1}")

    shape = (len(user_ids), len(item_ids))
    observed = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=shape).tocsr()
    keep = vals != 0
    positive = sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    return FeedbackMatrices(positive, observed, user_ids, item_ids, mode=mode)


def _first_seen(ids):
    seen = {}
    for x in ids:
        if x not in seen:
            seen[x] = None
    return list(seen)


def temporal_split(interactions, ratio=0.8, label_cutoff=0.5, mode="binary") -> SplitPair:
    """Chronological split: the first ``ceil(ratio * N)`` events train, the
    rest become labeled test impressions.

    Test labels are ``value >= label_cutoff`` (0.5 separates the binary
    values exactly; pass the normalized threshold, e.g. 4/6, for normalized
    logs). Users and items that only appear in the test tail are kept in the
    index maps, so cold rows exist in the train matrices as empty rows.
    """
    if len(interactions) < 2:
        raise ValueError("need at least 2 events to split")
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must lie in (0, 1)")
    order = sorted(range(len(interactions)), key=lambda idx: (interactions[idx].timestamp, idx))
    events = [interactions[idx] for idx in order]
    cut = int(np.ceil(ratio * len(events)))
    cut = min(max(cut, 1), len(events) - 1)
    train_events, test_events = events[:cut], events[cut:]
    if train_events[-1].timestamp >= test_events[0].timestamp:
        warnings.warn(
            "tied timestamps at the split boundary; falling back to stable input order",
            stacklevel=2,
        )

    user_ids = _first_seen(it.user for it in events)
    item_ids = _first_seen(it.item for it in events)
    train = build_matrices(train_events, mode=mode, user_ids=user_ids, item_ids=item_ids)
    users = np.array([train.user_index[it.user] for it in test_events], dtype=np.int64)
    items = np.array([train.item_index[it.item] for it in test_events], dtype=np.int64)
    labels = np.array([1.0 if it.value >= label_cutoff else 0.0 for it in test_events])
    return SplitPair(train, train_events, TestExamples(users, items, labels))


def synthesize_topics(n_users, n_items, n_topics=3, affinity=0.8, seed=0, n_events=None):
    """Generate a synthetic engagement log with latent topic structure.

    Every user gets a home topic; impressions land uniformly over items and
    turn positive with probability ``affinity`` in-topic, ``1 - affinity``
    out-of-topic. Returns the interaction list and the generating truth.
    """
    if n_topics < 2:
        raise ValueError("need at least 2 topics")
    if not (0.5 < affinity <= 1.0):
        raise ValueError("affinity must lie in (0.5, 1]")
    if n_events is None:
        n_events = 20 * n_users
    rng = substream(seed, "synthesize_topics")
    user_topics = rng.integers(0, n_topics, size=n_users)
    # contiguous item blocks per topic
    item_topics = (np.arange(n_items) * n_topics) // n_items
    truth = TopicModel(user_topics, item_topics, affinity, n_topics)

    users = rng.integers(0, n_users, size=n_events)
    items = rng.integers(0, n_items, size=n_events)
    in_topic = user_topics[users] == item_topics[items]
    prob = np.where(in_topic, affinity, 1.0 - affinity)
    values = (rng.random(n_events) < prob).astype(np.float64)
    interactions = [
        Interaction(int(u), int(v), float(x), float(t))
        for t, (u, v, x) in enumerate(zip(users, items, values))
    ]
    return interactions, truth


def save_index_maps(fm: FeedbackMatrices, out_dir) -> None:
    """Persist dense-index assignments so models and logs stay joinable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "user_index.tsv", "w") as fh:
        fh.write("user_index\traw_id\n")
        for idx, raw in enumerate(fm.user_ids):
            fh.write(f"{idx}\t{raw}\n")
    with open(out_dir / "item_index.tsv", "w") as fh:
        fh.write("item_index\traw_id\n")
        for idx, raw in enumerate(fm.item_ids):
            fh.write(f"{idx}\t{raw}\n")


def load_index_map(path) -> list:
    ids = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            idx, raw = line.rstrip("\n").split("\t")
            assert int(idx) == len(ids)
            ids.append(raw)
    return ids
