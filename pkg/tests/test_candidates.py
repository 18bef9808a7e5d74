import numpy as np
import pytest

from hirec.candidates import (
    RecommendationList,
    ScoredItem,
    mixed_candidates,
    n2p_scores,
    p2p_scores,
)
from hirec.factorization import FactorModel, cross_n2p, factorize, gram_p2p, reconstruct
from hirec.feedback import synthesize_topics, build_matrices

from test_factorization import fm_from_dense, random_fm


def trained_pair(fm, k=4, seed=0, iters=40):
    c = factorize(gram_p2p(fm), k=k, lam=1e-6, iters=iters, observed_only=False, seed=seed)
    d = factorize(cross_n2p(fm), k=k, lam=1e-6, iters=iters, observed_only=False, seed=seed)
    return c, d


class TestChannelScores:
    def test_one_hot_history_selects_similarity_row(self):
        fm = fm_from_dense([[1, 0, 0], [0, 1, 1]], obs=np.ones((2, 3)))
        c, d = trained_pair(fm, k=3)
        smoothed = reconstruct(c)
        np.testing.assert_allclose(p2p_scores(fm, c, 0), smoothed[0], atol=1e-10)

    def test_empty_positive_history_is_silent(self):
        fm = fm_from_dense([[0, 0, 0], [1, 1, 0]], obs=np.ones((2, 3)))
        c, _ = trained_pair(fm, k=3)
        np.testing.assert_array_equal(p2p_scores(fm, c, 0), np.zeros(3))

    def test_empty_negative_history_is_silent(self):
        fm = fm_from_dense([[1, 1, 1], [1, 0, 1]], obs=np.ones((2, 3)))
        _, d = trained_pair(fm, k=3)
        np.testing.assert_array_equal(n2p_scores(fm, d, 0), np.zeros(3))

    def test_one_hot_negative_selects_cross_row(self):
        fm = fm_from_dense([[0, 1, 1], [1, 0, 1]], obs=np.ones((2, 3)))
        _, d = trained_pair(fm, k=3)
        smoothed = reconstruct(d)
        np.testing.assert_allclose(n2p_scores(fm, d, 0), smoothed[0], atol=1e-10)

    def test_pipeline_matches_dense_oracle(self):
        rng = np.random.default_rng(21)
        fm = random_fm(rng, 5, 6)
        c, d = trained_pair(fm, k=4)
        pos = fm.positive.toarray()
        neg = fm.negative.toarray()
        cp = reconstruct(c)
        dp = reconstruct(d)
        for user in range(5):
            np.testing.assert_allclose(p2p_scores(fm, c, user), pos[user] @ cp, atol=1e-10)
            np.testing.assert_allclose(n2p_scores(fm, d, user), neg[user] @ dp, atol=1e-10)

    def test_user_out_of_range(self):
        fm = fm_from_dense([[1, 0], [0, 1]], obs=np.ones((2, 2)))
        c, _ = trained_pair(fm, k=2)
        with pytest.raises(IndexError):
            p2p_scores(fm, c, 2)

    def test_exclude_engaged_masks_observed(self):
        fm = fm_from_dense([[1, 0, 0], [0, 1, 1]], obs=[[1, 1, 0], [0, 1, 1]])
        c, _ = trained_pair(fm, k=3)
        scores = p2p_scores(fm, c, 0, exclude_engaged=True)
        assert scores[0] == -np.inf and scores[1] == -np.inf
        assert np.isfinite(scores[2])


class TestRecommendationList:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            RecommendationList(0, [ScoredItem(1, 0.5, "p2p"), ScoredItem(1, 0.4, "n2p")], 5)

    def test_rejects_nonfinite_scores(self):
        with pytest.raises(ValueError):
            ScoredItem(0, np.inf, "p2p")


def two_channel_models(n, p_top, n_top):
    """Hand-built factor models whose reconstructions give known disjoint
    score rows for a single user with one positive and one negative mark."""
    cp = np.zeros((n, n))
    dp = np.zeros((n, n))
    for rank, item in enumerate(p_top):
        cp[0, item] = 100 - rank
    for rank, item in enumerate(n_top):
        dp[1, item] = 100 - rank
    # rank-n exact factorizations
    c = FactorModel(cp, np.eye(n), n, 0.0, "p2p", 0)
    d = FactorModel(dp, np.eye(n), n, 0.0, "n2p", 0)
    return c, d


def one_user_fm(n):
    pos = np.zeros((1, n))
    obs = np.zeros((1, n))
    pos[0, 0] = 1.0
    obs[0, 0] = 1.0
    obs[0, 1] = 1.0  # item 1 is the negative mark
    return fm_from_dense(pos, obs)


class TestMixedCandidates:
    def test_quota_split_7_3(self):
        n = 30
        p_top = list(range(2, 12))    # items 2..11 from p2p
        n_top = list(range(12, 22))   # items 12..21 from n2p
        c, d = two_channel_models(n, p_top, n_top)
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 10, ratio_p2p=0.67)
        channels = [s.channel for s in rl.items]
        assert channels.count("p2p") == 7
        assert channels.count("n2p") == 3
        assert rl.item_ids() == p_top[:7] + n_top[:3]

    def test_ratio_one_is_pure_p2p(self):
        n = 30
        c, d = two_channel_models(n, list(range(2, 14)), list(range(14, 26)))
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 10, ratio_p2p=1.0)
        assert [s.channel for s in rl.items] == ["p2p"] * 10
        assert rl.item_ids() == list(range(2, 12))

    def test_ratio_zero_is_pure_n2p(self):
        n = 30
        c, d = two_channel_models(n, list(range(2, 14)), list(range(14, 26)))
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 10, ratio_p2p=0.0)
        assert [s.channel for s in rl.items] == ["n2p"] * 10
        assert rl.item_ids() == list(range(14, 24))

    def test_collision_keeps_p2p_copy_and_pulls_next(self):
        n = 20
        shared = [2, 3, 4]
        c, d = two_channel_models(n, shared + [5], shared + [6, 7, 8])
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 6, ratio_p2p=0.5)
        # p2p takes 2,3,4 (quota ceil(3)); n2p skips the collisions and
        # contributes the next distinct items
        assert rl.item_ids() == [2, 3, 4, 6, 7, 8]
        assert [s.channel for s in rl.items][:3] == ["p2p"] * 3

    def test_short_list_flagged(self):
        n = 10
        c, d = two_channel_models(n, [2, 3], [4])
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 8)
        assert rl.short
        assert set(rl.item_ids()) == {2, 3, 4}

    def test_backfill_across_channels(self):
        n = 12
        c, d = two_channel_models(n, [2, 3, 4, 5, 6, 7], [8])
        fm = one_user_fm(n)
        rl = mixed_candidates(fm, c, d, 0, 6, ratio_p2p=0.5)
        assert not rl.short
        assert len(rl.items) == 6

    def test_no_leakage_of_engaged_items(self):
        rng = np.random.default_rng(33)
        fm = random_fm(rng, 12, 20, p_obs=0.6)
        c, d = trained_pair(fm, k=5)
        for user in range(12):
            rl = mixed_candidates(fm, c, d, user, 8, exclude_engaged=True)
            engaged = set(fm.observed_items(user).tolist())
            assert not (set(rl.item_ids()) & engaged)

    def test_channel_silence_property(self):
        # an all-positive user gets no n2p items; an all-negative user gets
        # no p2p items
        pos = np.zeros((2, 12))
        obs = np.zeros((2, 12))
        pos[0, :4] = 1.0
        obs[0, :4] = 1.0   # user 0: only positives
        obs[1, 4:8] = 1.0  # user 1: only negatives
        fm = fm_from_dense(pos, obs)
        c, d = trained_pair(fm, k=4)
        rl0 = mixed_candidates(fm, c, d, 0, 5, ratio_p2p=0.5)
        assert all(s.channel == "p2p" for s in rl0.items)
        rl1 = mixed_candidates(fm, c, d, 1, 5, ratio_p2p=0.5)
        assert all(s.channel == "n2p" for s in rl1.items)


def topic_entropy(items, item_topics, n_topics):
    counts = np.bincount(item_topics[items], minlength=n_topics).astype(float)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / np.log(n_topics))


def test_n2p_candidates_spread_wider_than_p2p():
    # divergence property: with strong topic affinity, pure n2p lists cover
    # topics more evenly than pure p2p lists on average
    its, truth = synthesize_topics(60, 90, n_topics=3, affinity=0.95, seed=5, n_events=5400)
    fm = build_matrices(its, user_ids=list(range(60)), item_ids=list(range(90)))
    c = factorize(gram_p2p(fm), k=10, lam=0.05, iters=15, seed=0)
    d = factorize(cross_n2p(fm), k=10, lam=0.05, iters=15, seed=0)
    ent_p, ent_n = [], []
    for user in range(60):
        lp = mixed_candidates(fm, c, d, user, 10, ratio_p2p=1.0)
        ln = mixed_candidates(fm, c, d, user, 10, ratio_p2p=0.0)
        if lp.items:
            ent_p.append(topic_entropy(np.array(lp.item_ids()), truth.item_topics, 3))
        if ln.items:
            ent_n.append(topic_entropy(np.array(ln.item_ids()), truth.item_topics, 3))
    assert np.mean(ent_n) >= np.mean(ent_p)
