"""Command-line front end.

Stage subcommands (ingest, split, train, recommend) exchange artifacts
through a working directory; evaluate and compare run the full pipeline
in memory from a config and write report artifacts. Exit codes: 0 success,
1 usage, 2 data error, 3 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .baselines import PRESET_NAMES, preset
from .candidates import write_recommendations_tsv
from .factorization import (
    FactorModel,
    cross_n2p,
    factorize,
    gram_p2p,
    load_factors,
    save_factors,
    stacked_rt,
)
from .feedback import (
    Interaction,
    ParseError,
    build_matrices,
    ingest_movielens,
    save_index_maps,
    synthesize_topics,
    temporal_split,
)
from .harness import (
    ExperimentConfig,
    LoopConfig,
    TrainedBundle,
    build_lists,
    compare,
    emit_plot_data,
    load_interactions,
    ratio_for_algo,
    run_experiment,
    simulate_loop,
)
from .metrics import ItemSimilarity
from .ranking_nn import RankingConfig, RankingModel, load_ranking_model, save_ranking_model
from .realtime import RtModel, train_rt
from .serve import make_server

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="hirec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="working/output directory")
        p.add_argument("--k", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--phi", type=float)
        p.add_argument("--ratio", type=float, help="p2p share of the candidate mix")
        p.add_argument("--n", type=int, help="recommendation list length")

    p = sub.add_parser("ingest", help="read a ratings file into the canonical log")
    common(p)
    p.add_argument("--data", type=Path, help="MovieLens-style ratings file")
    p.add_argument("--mode", choices=("binary", "normalized"), default="binary")
    p.add_argument("--threshold", type=float, default=4.0)

    p = sub.add_parser("split", help="temporal split of the canonical log")
    common(p)
    p.add_argument("--ratio-split", type=float, default=0.8, dest="split_ratio")

    p = sub.add_parser("train", help="train a preset's models from the train log")
    common(p)
    p.add_argument("--algo", choices=PRESET_NAMES, required=True)

    p = sub.add_parser("recommend", help="emit top-n lists from trained models")
    common(p)
    p.add_argument("--algo", choices=PRESET_NAMES, required=True)

    p = sub.add_parser("evaluate", help="full pipeline for one preset, with report")
    common(p)
    p.add_argument("--algo", choices=PRESET_NAMES)
    p.add_argument("--data", type=Path)

    p = sub.add_parser("compare", help="evaluate several presets, merged table")
    common(p)
    p.add_argument("--algos", default="CF-RT,CF-DM,HI-RT",
                   help="comma-separated preset names")
    p.add_argument("--data", type=Path)

    p = sub.add_parser("simulate-loop", help="closed feedback-loop simulation")
    common(p)
    p.add_argument("--algo", choices=PRESET_NAMES)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--users", type=int, default=300)
    p.add_argument("--items", type=int, default=600)
    p.add_argument("--topics", type=int, default=3)
    p.add_argument("--affinity", type=float, default=0.9)

    p = sub.add_parser("serve", help="demo HTTP server over the realtime model")
    common(p)
    p.add_argument("--algo", choices=("CF-RT", "HI-RT"), default="HI-RT")
    p.add_argument("--data", type=Path)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8040)
    return parser


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    for src, dst in (("seed", "seed"), ("k", "k"), ("beta", "beta"),
                     ("phi", "phi"), ("ratio", "ratio_p2p"), ("n", "n"),
                     ("algo", "algo"), ("mode", "mode"),
                     ("threshold", "threshold"), ("split_ratio", "split_ratio")):
        val = getattr(args, src, None)
        if val is not None:
            config = dataclasses.replace(config, **{dst: val})
    data = getattr(args, "data", None)
    if data is not None:
        config = dataclasses.replace(config, dataset=str(data))
    return config


def _out_dir(args) -> Path:
    out = args.out or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_log(path, interactions):
    with open(path, "w") as fh:
        fh.write("user\titem\tvalue\ttimestamp\n")
        for it in interactions:
            fh.write(f"{it.user}\t{it.item}\t{it.value!r}\t{it.timestamp!r}\n")


def _read_log(path):
    interactions = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            user, item, value, ts = line.rstrip("\n").split("\t")
            interactions.append(Interaction(user, item, float(value), float(ts)))
    if not interactions:
        raise ValueError(f"{path} holds no interactions")
    return interactions


def _canonical_log(config: ExperimentConfig):
    interactions, _ = load_interactions(config)
    return interactions


def cmd_ingest(args):
    config = _load_config(args)
    out = _out_dir(args)
    interactions = _canonical_log(config)
    _write_log(out / "interactions.tsv", interactions)
    fm = build_matrices(interactions, mode=config.mode)
    save_index_maps(fm, out)
    print(f"ingested {len(interactions)} interactions "
          f"({fm.m} users x {fm.n} items) -> {out / 'interactions.tsv'}")
    return EXIT_OK


def cmd_split(args):
    config = _load_config(args)
    out = _out_dir(args)
    log_path = out / "interactions.tsv"
    if not log_path.exists():
        raise FileNotFoundError(f"{log_path} missing; run ingest first")
    interactions = _read_log(log_path)
    pair = temporal_split(interactions, ratio=args.split_ratio, mode=config.mode)
    split_dir = out / "split"
    split_dir.mkdir(exist_ok=True)
    _write_log(split_dir / "train.tsv", pair.train_interactions)
    with open(split_dir / "test.tsv", "w") as fh:
        fh.write("user\titem\tlabel\n")
        for u, i, l in zip(pair.test.users, pair.test.items, pair.test.labels):
            fh.write(f"{pair.train.user_ids[u]}\t{pair.train.item_ids[i]}\t{int(l)}\n")
    print(f"split {len(pair.train_interactions)} train / {len(pair.test)} test")
    return EXIT_OK


def _train_matrices(config, out):
    train_path = out / "split" / "train.tsv"
    if not train_path.exists():
        raise FileNotFoundError(f"{train_path} missing; run split first")
    log_path = out / "interactions.tsv"
    universe = _read_log(log_path) if log_path.exists() else None
    train_events = _read_log(train_path)
    if universe is not None:
        users, items = [], []
        seen_u, seen_i = set(), set()
        for it in universe:
            if it.user not in seen_u:
                seen_u.add(it.user)
                users.append(it.user)
            if it.item not in seen_i:
                seen_i.add(it.item)
                items.append(it.item)
        return build_matrices(train_events, mode=config.mode,
                              user_ids=users, item_ids=items)
    return build_matrices(train_events, mode=config.mode)


def cmd_train(args):
    config = _load_config(args)
    out = _out_dir(args)
    fm = _train_matrices(config, out)
    pre = config.resolved_preset()
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    seed = config.seed
    c = factorize(gram_p2p(fm), k=pre.k, lam=pre.lam, iters=pre.iters, seed=seed)
    save_factors(c, models_dir / f"{pre.name}_p2p.bin")
    if pre.use_n2p or pre.family == "nn":
        d = factorize(cross_n2p(fm), k=pre.k, lam=pre.lam, iters=pre.iters, seed=seed)
        save_factors(d, models_dir / f"{pre.name}_n2p.bin")
    if pre.family == "rt" and pre.use_n2p:
        stacked = factorize(stacked_rt(fm), k=pre.k, lam=pre.lam, iters=pre.iters,
                            seed=seed)
        save_factors(stacked, models_dir / f"{pre.name}_stacked.bin")
    if pre.family == "nn":
        rcfg = RankingConfig(k=pre.k, alpha=pre.alpha, gamma=pre.gamma,
                             use_n2p=pre.use_n2p, lr=config.lr,
                             batch_size=config.batch_size,
                             epochs_phase1=config.epochs_phase1,
                             epochs_phase2=config.epochs_phase2, seed=seed)
        ranker = RankingModel(fm.m, fm.n, rcfg).train_phase1(fm).train_phase2(fm)
        save_ranking_model(ranker, models_dir / f"{pre.name}.nn")
    print(f"trained {pre.name} models -> {models_dir}")
    return EXIT_OK


def _load_bundle(pre, fm, out):
    models_dir = out / "models"
    p2p_path = models_dir / f"{pre.name}_p2p.bin"
    if not p2p_path.exists():
        raise FileNotFoundError(f"{p2p_path} missing; run train first")
    bundle = TrainedBundle(p2p=load_factors(p2p_path))
    n2p_path = models_dir / f"{pre.name}_n2p.bin"
    if n2p_path.exists():
        bundle.n2p = load_factors(n2p_path)
    stacked_path = models_dir / f"{pre.name}_stacked.bin"
    if stacked_path.exists():
        bundle.rt = RtModel(load_factors(stacked_path), pre.beta, fm.n)
    nn_path = models_dir / f"{pre.name}.nn"
    if nn_path.exists():
        bundle.ranker = load_ranking_model(nn_path)
    return bundle


def cmd_recommend(args):
    config = _load_config(args)
    out = _out_dir(args)
    fm = _train_matrices(config, out)
    pre = config.resolved_preset()
    bundle = _load_bundle(pre, fm, out)
    sim = ItemSimilarity.from_factors(bundle.p2p) if pre.rerank != "none" else None
    lists = build_lists(pre, bundle, fm, sim=sim)
    path = out / "recommendations.tsv"
    write_recommendations_tsv(path, lists, item_ids=fm.item_ids,
                              user_ids=fm.user_ids)
    print(f"wrote {sum(len(rl.items) for rl in lists)} recommendations -> {path}")
    return EXIT_OK


def cmd_evaluate(args):
    config = _load_config(args)
    out = _out_dir(args)
    report = run_experiment(config, out_dir=out)
    sys.stdout.write((out / "report.txt").read_text())
    return EXIT_OK


def cmd_compare(args):
    config = _load_config(args)
    out = _out_dir(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for algo in algos:
        preset(algo)  # validate before any training starts
    _, table = compare(algos, config, out_dir=out)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_simulate_loop(args):
    out = _out_dir(args)
    ratio = args.ratio
    if ratio is None:
        ratio = ratio_for_algo(args.algo) if args.algo else 1.0
    cfg = LoopConfig(
        n_users=args.users, n_items=args.items, n_topics=args.topics,
        affinity=args.affinity, rounds=args.rounds,
        n_per_round=args.n or 10, ratio_p2p=ratio,
        k=args.k or 10, seed=args.seed or 0)
    history = simulate_loop(cfg)
    (out / "loop_config.json").write_text(cfg.to_json() + "\n")
    emit_plot_data(history, out)
    start, end = history[0], history[-1]
    print(f"rounds={len(history)} entropy {start.topic_entropy:.3f} -> "
          f"{end.topic_entropy:.3f}, diversity {start.mean_diversity:.3f} -> "
          f"{end.mean_diversity:.3f}")
    return EXIT_OK


def cmd_serve(args):
    config = _load_config(args)
    config = dataclasses.replace(config, algo=args.algo)
    interactions = _canonical_log(config)
    fm = build_matrices(interactions, mode=config.mode)
    pre = config.resolved_preset()
    if pre.use_n2p:
        model = train_rt(fm, k=pre.k, lam=pre.lam, iters=pre.iters,
                         beta=pre.beta, seed=config.seed)
    else:
        c = factorize(gram_p2p(fm), k=pre.k, lam=pre.lam, iters=pre.iters,
                      seed=config.seed)
        # a p2p-only realtime model is the stacked form with a silent
        # negative block
        left = np.vstack([c.left, np.zeros_like(c.left)])
        model = RtModel(FactorModel(left, c.right, c.k, c.lam, "stacked",
                                    c.seed), 0.0, fm.n)
    server = make_server(model, fm, host=args.host, port=args.port)
    host, port = server.server_address
    print(f"serving {pre.name} on http://{host}:{port}  (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "simulate-loop": cmd_simulate_loop,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
