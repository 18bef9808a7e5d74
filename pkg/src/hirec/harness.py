"""Experiment orchestration: data preparation, training, evaluation,
algorithm comparison, and the closed feedback-loop simulator.

Everything is driven by one JSON-serializable config; a persisted config
re-runs to byte-identical artifacts under the same build. Randomness flows
from the config seed through named sub-streams.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import Preset, cf_da_rerank, cf_dm_rerank, preset
from .candidates import (
    RecommendationList,
    ScoredItem,
    mixed_candidates,
    write_recommendations_tsv,
)
from .factorization import FactorModel, cross_n2p, factorize, gram_p2p
from .feedback import (
    FeedbackMatrices,
    Interaction,
    build_matrices,
    ingest_movielens,
    synthesize_topics,
    temporal_split,
)
from .metrics import (
    DiversityReport,
    ItemSimilarity,
    auc_roc,
    diversity_report,
    mean_average_precision,
    precision_at_recall,
    recall_at_precision,
    user_diversity,
)
from .ranking_nn import RankingConfig, RankingModel
from .realtime import RtModel, train_rt
from .util import substream, top_n_indices


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run."""

    algo: str = "CF-RT"
    dataset: str | None = None      # ratings file; None -> synthetic topics
    mode: str = "binary"
    threshold: float = 4.0
    split_ratio: float = 0.8
    seed: int = 0
    n: int | None = None            # recommendation list length
    k: int | None = None            # factor rank
    lam: float | None = None
    iters: int | None = None
    beta: float | None = None
    phi: float | None = None
    ratio_p2p: float | None = None
    # ranking-model budget
    lr: float = 0.05
    batch_size: int = 256
    epochs_phase1: int = 30
    epochs_phase2: int = 40
    # synthetic dataset shape (used when dataset is None)
    n_users: int = 300
    n_items: int = 600
    n_topics: int = 3
    affinity: float = 0.8
    n_events: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    def resolved_preset(self) -> Preset:
        pre = preset(self.algo)
        overrides = {}
        for name in ("n", "k", "lam", "iters", "beta", "phi", "ratio_p2p"):
            val = getattr(self, name)
            if val is not None:
                overrides[name] = val
        return replace(pre, **overrides)


@dataclass
class EvalReport:
    algo: str
    metrics: dict
    diversity: DiversityReport | None
    n_users: int
    n_test: int
    notes: list = field(default_factory=list)


@dataclass
class TrainedBundle:
    """Models an experiment run produces; which fields are set depends on
    the preset family."""

    p2p: FactorModel                 # always present: scoring and diversity source
    n2p: FactorModel | None = None
    rt: RtModel | None = None
    ranker: RankingModel | None = None


def load_interactions(config: ExperimentConfig):
    if config.dataset is not None:
        return ingest_movielens(config.dataset, mode=config.mode,
                                threshold=config.threshold), None
    n_events = config.n_events or 20 * config.n_users
    return synthesize_topics(config.n_users, config.n_items,
                             n_topics=config.n_topics, affinity=config.affinity,
                             seed=config.seed, n_events=n_events)


def prepare_split(config: ExperimentConfig, interactions):
    cutoff = 0.5 if config.mode == "binary" else config.threshold / 6.0
    return temporal_split(interactions, ratio=config.split_ratio,
                          label_cutoff=cutoff, mode=config.mode)


def train_bundle(pre: Preset, fm: FeedbackMatrices,
                 config: ExperimentConfig) -> TrainedBundle:
    seed = config.seed
    bundle = TrainedBundle(
        p2p=factorize(gram_p2p(fm), k=pre.k, lam=pre.lam, iters=pre.iters, seed=seed))
    if pre.use_n2p or pre.family == "nn":
        bundle.n2p = factorize(cross_n2p(fm), k=pre.k, lam=pre.lam,
                               iters=pre.iters, seed=seed)
    if pre.family == "rt" and pre.use_n2p:
        bundle.rt = train_rt(fm, k=pre.k, lam=pre.lam, iters=pre.iters,
                             beta=pre.beta, seed=seed)
    if pre.family == "nn":
        rcfg = RankingConfig(
            k=pre.k, alpha=pre.alpha, gamma=pre.gamma, use_n2p=pre.use_n2p,
            lr=config.lr, batch_size=config.batch_size,
            epochs_phase1=config.epochs_phase1, epochs_phase2=config.epochs_phase2,
            seed=seed)
        bundle.ranker = RankingModel(fm.m, fm.n, rcfg)
        bundle.ranker.train_phase1(fm).train_phase2(fm)
    return bundle


def _pairs_through_factors(fm, model, users, items, negative_side=False, beta=None):
    """Scores for (user, item) pairs via the k-dim projection; one proj per
    distinct user."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    uniq, inverse = np.unique(users, return_inverse=True)
    if beta is not None:  # stacked model: positive block plus beta * negative
        n = fm.n
        proj = np.asarray(fm.positive[uniq] @ model.left[:n])
        proj += beta * np.asarray(fm.negative[uniq] @ model.left[n:])
    elif negative_side:
        proj = np.asarray(fm.negative[uniq] @ model.left)
    else:
        proj = np.asarray(fm.positive[uniq] @ model.left)
    return np.einsum("pk,kp->p", proj[inverse], model.right[:, items])


def score_test(pre: Preset, bundle: TrainedBundle, fm: FeedbackMatrices, test):
    """Model scores for the held-out labeled impressions.

    Realtime presets replay the test stream in order: the offline model is
    static but each user's session row absorbs every observed test event
    before the next one is scored. Batch presets score statically.
    """
    if pre.family == "nn":
        return bundle.ranker.predict_pairs(fm, test.users, test.items,
                                           bundle.p2p, bundle.n2p)
    if pre.family == "rt":
        if pre.use_n2p:
            return _replay_scores(fm, bundle.rt.factors, test,
                                  beta=bundle.rt.beta, stacked=True)
        return _replay_scores(fm, bundle.p2p, test, beta=0.0, stacked=False)
    return _pairs_through_factors(fm, bundle.p2p, test.users, test.items)


def _replay_scores(fm, model, test, beta, stacked):
    """Chronological replay with per-user k-dim session projections; each
    event costs O(k), matching the online serving path. Marks follow the
    session's latest-wins semantics: re-marking an item is a no-op, moving
    it between supports swaps its contribution."""
    n = fm.n
    if stacked:
        proj_pos = np.asarray(fm.positive @ model.left[:n])
        proj_neg = np.asarray(fm.negative @ model.left[n:])
    else:
        proj_pos = np.asarray(fm.positive @ model.left)
        proj_neg = None
    pos_sets = _row_sets(fm.positive)
    neg_sets = _row_sets(fm.negative)
    scores = np.empty(len(test))
    right = model.right
    for idx in range(len(test)):
        u = int(test.users[idx])
        i = int(test.items[idx])
        proj = proj_pos[u]
        if proj_neg is not None and beta:
            proj = proj + beta * proj_neg[u]
        scores[idx] = proj @ right[:, i]
        if test.labels[idx]:
            if i not in pos_sets[u]:
                pos_sets[u].add(i)
                proj_pos[u] += model.left[i]
                if i in neg_sets[u]:
                    neg_sets[u].remove(i)
                    if stacked:
                        proj_neg[u] -= model.left[n + i]
        elif stacked:
            # a positives-only session ignores negative events entirely
            if i not in neg_sets[u]:
                neg_sets[u].add(i)
                proj_neg[u] += model.left[n + i]
                if i in pos_sets[u]:
                    pos_sets[u].remove(i)
                    proj_pos[u] -= model.left[i]
    return scores


def _row_sets(matrix):
    indptr, indices = matrix.indptr, matrix.indices
    return [set(indices[indptr[r]:indptr[r + 1]].tolist())
            for r in range(matrix.shape[0])]


def _block_scores(fm, model, users, beta=None, exclude_engaged=True):
    """Dense score rows for a block of users."""
    if beta is not None:
        n = fm.n
        proj = np.asarray(fm.positive[users] @ model.left[:n])
        proj += beta * np.asarray(fm.negative[users] @ model.left[n:])
    else:
        proj = np.asarray(fm.positive[users] @ model.left)
    scores = proj @ model.right
    if exclude_engaged:
        for r, u in enumerate(users):
            scores[r, fm.observed_items(u)] = -np.inf
    return scores


def _top_list(user, scores, n, channel):
    ranked = top_n_indices(scores, n)
    ranked = ranked[scores[ranked] != 0.0]
    items = [ScoredItem(int(j), float(scores[j]), channel) for j in ranked]
    return RecommendationList(int(user), items, n, short=len(items) < n)


def build_lists(pre: Preset, bundle: TrainedBundle, fm: FeedbackMatrices,
                sim: ItemSimilarity | None = None, users=None, block=512):
    """Top-n recommendation lists for every user under the preset's wiring."""
    users = np.arange(fm.m) if users is None else np.asarray(users)
    n = pre.n
    pool_n = pre.pool_multiplier * n
    out = []
    for lo in range(0, len(users), block):
        chunk = users[lo:lo + block]
        if pre.family == "rt" and pre.use_n2p:
            scores = _block_scores(fm, bundle.rt.factors, chunk, beta=bundle.rt.beta)
            out.extend(_top_list(u, s, n, "rt") for u, s in zip(chunk, scores))
            continue
        if pre.family == "nn":
            for u in chunk:
                if pre.use_n2p:
                    pool = mixed_candidates(fm, bundle.p2p, bundle.n2p, int(u),
                                            pool_n, ratio_p2p=pre.ratio_p2p)
                else:
                    row = _block_scores(fm, bundle.p2p, np.array([u]))[0]
                    pool = _top_list(u, row, pool_n, "p2p")
                if not pool.items:
                    out.append(RecommendationList(int(u), [], n, short=True))
                    continue
                pool_items = np.array(pool.item_ids(), dtype=np.int64)
                probs = bundle.ranker.predict_pairs(
                    fm, np.full(len(pool_items), u), pool_items,
                    bundle.p2p, bundle.n2p)
                order = np.lexsort((pool_items, -probs))[:n]
                picked = [ScoredItem(int(pool_items[i]), float(probs[i]), "nn")
                          for i in order]
                out.append(RecommendationList(int(u), picked, n,
                                              short=len(picked) < n))
            continue
        scores = _block_scores(fm, bundle.p2p, chunk)
        if pre.rerank == "none":
            out.extend(_top_list(u, s, n, "p2p") for u, s in zip(chunk, scores))
            continue
        for u, s in zip(chunk, scores):
            pool = _top_list(u, s, pool_n, "p2p")
            if len(pool.items) < 2:
                out.append(RecommendationList(int(u), pool.items, n,
                                              short=len(pool.items) < n))
                continue
            pairs = [(it.item, it.score) for it in pool.items]
            if pre.rerank == "diversity_augmented":
                out.append(cf_da_rerank(pairs, sim, phi=pre.phi, n=n, user=int(u)))
            else:
                out.append(cf_dm_rerank(pairs, sim, n=n, user=int(u)))
    return out


def evaluate_scores(scores, test, notes):
    """The relevance metric block; unreachable metrics become None."""
    metrics = {}
    try:
        metrics["auc"] = auc_roc(scores, test.labels)
    except ValueError as exc:
        metrics["auc"] = None
        notes.append(f"auc absent: {exc}")
    ranked_lists = []
    order = np.lexsort((test.items, -scores, test.users))
    users_sorted = test.users[order]
    labels_sorted = test.labels[order]
    for _, grp in _group_slices(users_sorted):
        ranked_lists.append(labels_sorted[grp])
    try:
        metrics["map"] = mean_average_precision(ranked_lists)
    except ValueError as exc:
        metrics["map"] = None
        notes.append(f"map absent: {exc}")
    try:
        metrics["precision_at_recall_0.80"] = precision_at_recall(scores, test.labels, 0.8)
        metrics["recall_at_precision_0.85"] = recall_at_precision(scores, test.labels, 0.85)
    except ValueError as exc:
        metrics["precision_at_recall_0.80"] = None
        metrics["recall_at_precision_0.85"] = None
        notes.append(f"pr sweep absent: {exc}")
    return metrics


def _group_slices(sorted_keys):
    if len(sorted_keys) == 0:
        return
    starts = np.flatnonzero(np.diff(sorted_keys, prepend=sorted_keys[0] - 1))
    bounds = np.append(starts, len(sorted_keys))
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield sorted_keys[a], slice(a, b)


def run_experiment(config: ExperimentConfig, out_dir=None) -> EvalReport:
    """ingest -> split -> train -> recommend -> evaluate, with artifacts."""
    pre = config.resolved_preset()
    interactions, _ = load_interactions(config)
    split = prepare_split(config, interactions)
    fm = split.train
    bundle = train_bundle(pre, fm, config)
    sim = ItemSimilarity.from_factors(bundle.p2p)

    notes = []
    scores = score_test(pre, bundle, fm, split.test)
    metrics = evaluate_scores(scores, split.test, notes)
    lists = build_lists(pre, bundle, fm, sim=sim)
    try:
        div = diversity_report(lists, sim)
        metrics["diversity_median"] = div.median
        metrics["diversity_p25"] = div.p25
    except ValueError as exc:
        div = None
        metrics["diversity_median"] = None
        metrics["diversity_p25"] = None
        notes.append(f"diversity absent: {exc}")

    report = EvalReport(pre.name, metrics, div, n_users=fm.m,
                        n_test=len(split.test), notes=notes)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(config.to_json() + "\n")
        (out_dir / "report.txt").write_text(report_text(report))
        write_recommendations_tsv(out_dir / "recommendations.tsv", lists,
                                  item_ids=fm.item_ids, user_ids=fm.user_ids)
        emit_plot_data(report, out_dir)
    return report


def report_text(report: EvalReport) -> str:
    lines = [f"algo={report.algo}",
             f"n_users={report.n_users}",
             f"n_test={report.n_test}"]
    for key, val in report.metrics.items():
        lines.append(f"{key}={'absent' if val is None else repr(val)}")
    for note in report.notes:
        lines.append(f"note={note}")
    return "\n".join(lines) + "\n"


METRIC_ROWS = (
    ("auc", "AUC-ROC"),
    ("precision_at_recall_0.80", "Precision (recall=0.8)"),
    ("recall_at_precision_0.85", "Recall (precision=0.85)"),
    ("map", "mAP"),
    ("diversity_median", "Diversity median"),
    ("diversity_p25", "Diversity 25%ile"),
)


def compare(algos, base_config: ExperimentConfig, out_dir=None):
    """Run several presets on the same data and merge one metrics table."""
    reports = []
    for algo in algos:
        cfg = replace(base_config, algo=algo)
        sub_dir = Path(out_dir) / algo if out_dir is not None else None
        reports.append(run_experiment(cfg, out_dir=sub_dir))
    table = comparison_table(reports)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.txt").write_text(table)
    return reports, table


def comparison_table(reports) -> str:
    names = [r.algo for r in reports]
    width = max(24, *(len(n) + 2 for n in names))
    head = "metric".ljust(26) + "".join(n.rjust(width) for n in names)
    lines = [head]
    for key, label in METRIC_ROWS:
        cells = []
        for r in reports:
            val = r.metrics.get(key)
            cells.append(("absent" if val is None else f"{val:.4f}").rjust(width))
        lines.append(label.ljust(26) + "".join(cells))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- feedback loop

@dataclass
class LoopConfig:
    n_users: int = 300
    n_items: int = 600
    n_topics: int = 3
    affinity: float = 0.9
    initial_events_per_user: int = 10
    rounds: int = 20
    n_per_round: int = 10
    ratio_p2p: float = 1.0   # 1.0 = pure p2p; 0.67 = the mixed channel
    k: int = 10
    lam: float = 0.05
    iters: int = 10
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LoopConfig":
        return cls(**json.loads(text))


@dataclass
class LoopState:
    round_index: int
    log_size: int
    topic_entropy: float
    mean_diversity: float


def ratio_for_algo(name: str) -> float:
    """Map a preset name to its candidate-channel mix for the simulator."""
    pre = preset(name)
    return pre.ratio_p2p if pre.use_n2p else 1.0


def _zero_model(n, k):
    return FactorModel(np.zeros((n, k)), np.zeros((k, n)), k, 0.0, "n2p", 0)


def simulate_loop(cfg: LoopConfig):
    """Closed loop: recommend, sample feedback from the generating truth,
    append, retrain. Records per-round topic entropy (normalized) of the
    recommendations and mean user diversity.

    The pure-p2p arm never touches the negative channel (no backfill), so
    its narrowing dynamics are unconfounded.
    """
    if cfg.rounds < 2:
        raise ValueError("need at least 2 rounds")
    if cfg.n_topics == 1:
        # degenerate single-topic world: entropy is identically zero
        return _simulate_single_topic(cfg)
    interactions, truth = synthesize_topics(
        cfg.n_users, cfg.n_items, n_topics=cfg.n_topics, affinity=cfg.affinity,
        seed=cfg.seed, n_events=cfg.initial_events_per_user * cfg.n_users)
    log = list(interactions)
    rng = substream(cfg.seed, "loop_feedback")
    clock = float(len(log))
    history = []
    log_n = np.log(cfg.n_topics)
    for round_index in range(1, cfg.rounds + 1):
        fm = build_matrices(log, user_ids=list(range(cfg.n_users)),
                            item_ids=list(range(cfg.n_items)))
        c = factorize(gram_p2p(fm), k=cfg.k, lam=cfg.lam, iters=cfg.iters,
                      seed=cfg.seed)
        if cfg.ratio_p2p < 1.0:
            d = factorize(cross_n2p(fm), k=cfg.k, lam=cfg.lam, iters=cfg.iters,
                          seed=cfg.seed)
        else:
            d = _zero_model(fm.n, cfg.k)
        sim = ItemSimilarity.from_factors(c)
        entropies, diversities = [], []
        new_events = []
        for user in range(cfg.n_users):
            rl = mixed_candidates(fm, c, d, user, cfg.n_per_round,
                                  ratio_p2p=cfg.ratio_p2p)
            items = rl.item_ids()
            if items:
                counts = np.bincount(truth.item_topics[items],
                                     minlength=cfg.n_topics).astype(float)
                p = counts / counts.sum()
                nz = p[p > 0]
                entropies.append(float(-(nz * np.log(nz)).sum() / log_n))
            if len(items) >= 2:
                diversities.append(user_diversity(items, sim))
            for item in items:
                value = truth.sample_feedback(user, item, rng)
                new_events.append(Interaction(user, item, value, clock))
                clock += 1.0
        log.extend(new_events)
        history.append(LoopState(
            round_index=round_index,
            log_size=len(log),
            topic_entropy=float(np.mean(entropies)) if entropies else 0.0,
            mean_diversity=float(np.mean(diversities)) if diversities else 0.0,
        ))
    return history


def _simulate_single_topic(cfg: LoopConfig):
    history = []
    size = cfg.initial_events_per_user * cfg.n_users
    for round_index in range(1, cfg.rounds + 1):
        size += cfg.n_users * cfg.n_per_round
        history.append(LoopState(round_index, size, 0.0, 0.0))
    return history


# --------------------------------------------------------------- plot data

def emit_plot_data(obj, out_dir):
    """CSV artifacts for plotting: a diversity histogram for a report, a
    per-round time series for a loop history. Re-emission is idempotent."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, EvalReport):
        path = out_dir / "diversity_hist.csv"
        lines = ["bin_low,bin_high,count"]
        if obj.diversity is not None:
            edges = obj.diversity.hist_edges
            for lo, hi, count in zip(edges[:-1], edges[1:], obj.diversity.hist_counts):
                lines.append(f"{lo!r},{hi!r},{int(count)}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    else:
        path = out_dir / "loop_timeseries.csv"
        lines = ["round,log_size,topic_entropy,mean_diversity"]
        for state in obj:
            lines.append(f"{state.round_index},{state.log_size},"
                         f"{state.topic_entropy!r},{state.mean_diversity!r}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
