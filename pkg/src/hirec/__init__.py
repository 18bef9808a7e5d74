"""Collaborative filtering with an explicit negative-to-positive channel.

The package covers the full desk-scale loop: encoding feedback logs,
factorizing item-similarity inputs, generating candidates from positive and
negative history, realtime scoring, a two-phase embedding ranker, relevance
and diversity metrics, diversity-oriented re-ranking baselines, and a
reproducible experiment harness with a CLI front end.
"""

from .baselines import Preset, cf_da_rerank, cf_dm_rerank, preset
from .candidates import (
    RecommendationList,
    ScoredItem,
    mixed_candidates,
    n2p_scores,
    p2p_scores,
)
from .factorization import (
    FactorModel,
    SimilarityInput,
    cross_n2p,
    factorize,
    gram_p2p,
    load_factors,
    reconstruct,
    save_factors,
    stacked_rt,
)
from .feedback import (
    FeedbackMatrices,
    Interaction,
    SplitPair,
    TestExamples,
    TopicModel,
    build_matrices,
    ingest_movielens,
    synthesize_topics,
    temporal_split,
)
from .harness import (
    EvalReport,
    ExperimentConfig,
    LoopConfig,
    LoopState,
    compare,
    emit_plot_data,
    run_experiment,
    simulate_loop,
)
from .metrics import (
    DiversityReport,
    ItemSimilarity,
    auc_roc,
    average_precision,
    diversity_report,
    mean_average_precision,
    observation_info_gain,
    pair_diversity,
    pr_curve,
    precision_at_recall,
    recall_at_precision,
    relevance_skew,
    user_diversity,
)
from .ranking_nn import (
    RankingConfig,
    RankingModel,
    load_ranking_model,
    save_ranking_model,
)
from .realtime import (
    RtModel,
    SessionState,
    apply_event,
    recommend_rt,
    session_scores,
    train_rt,
)

__version__ = "0.1.0"
