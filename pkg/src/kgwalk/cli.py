"""Command-line entry point: ``kgwalk <command> --data DIR --out DIR``.

Each training stage reads the artifacts of the stages before it from
``--out`` and writes its own there, so stages can be rerun individually.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

COMMANDS = ("prepare", "pagerank", "mine-rules", "train-embeddings", "pretrain", "train",
            "evaluate", "explain", "rule-report", "pipeline")


class CliError(Exception):
    """Failure reported to the user as a single line."""


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", default="data", help="directory with train.txt, dev.txt, test.txt")
    common.add_argument("--out", default="run", help="artifact directory")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--ablation", choices=("full", "freeze-pretrained", "no-pretrain", "single-agent"))
    common.add_argument("--beam-width", type=int, dest="beam_width")
    common.add_argument("--bandwidth", type=int)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="kgwalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="validate a dataset or generate a synthetic one")
    p.add_argument("--synthetic", choices=("kinship", "tiny"))
    sub.add_parser("pagerank", parents=[common], help="compute entity PageRank scores")
    p = sub.add_parser("mine-rules", parents=[common], help="mine cyclic Horn rules (stage 2)")
    p.add_argument("--threshold", type=float)
    sub.add_parser("train-embeddings", parents=[common], help="train ComplEx/DistMult embeddings (stage 1)")
    sub.add_parser("pretrain", parents=[common], help="pretrain the relation agent on rule rewards (stage 3)")
    sub.add_parser("train", parents=[common], help="joint training of both agents (stage 4)")
    p = sub.add_parser("evaluate", parents=[common], help="beam-search evaluation of the trained model")
    p.add_argument("--split", default="dev", choices=("dev", "test"))
    p.add_argument("--raw", action="store_true", help="raw instead of filtered ranking")
    p = sub.add_parser("explain", parents=[common], help="export the best reasoning paths per query")
    p.add_argument("--split", default="test", choices=("dev", "test"))
    p.add_argument("--top", type=int, default=1)
    p.add_argument("--output", help="path file (default OUT/paths_SPLIT.txt)")
    p = sub.add_parser("rule-report", parents=[common], help="rank mined rules by precision on a split")
    p.add_argument("--split", default="dev", choices=("dev", "test"))
    p.add_argument("--limit", type=int, default=20)
    p = sub.add_parser("pipeline", parents=[common], help="run all four stages and report metrics")
    p.add_argument("--threshold", type=float)
    return parser


def _overrides(args):
    values = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    for key in ("seed", "threads", "epochs", "ablation", "beam_width", "bandwidth", "threshold"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


def load_config(args):
    from .trainer import TrainConfig, parse_config_file

    values = parse_config_file(args.config) if args.config else {}
    values.update(_overrides(args))
    return TrainConfig.from_dict(values)


def _graph(args, config):
    from .kg import load_dataset
    from .pagerank import load_scores
    from .trainer import artifact_paths

    if not os.path.exists(os.path.join(args.data, "train.txt")):
        raise CliError(f"no train.txt in {args.data!r}; run 'kgwalk prepare' first")
    pr_path = artifact_paths(args.out)["pagerank"]
    scores = load_scores(pr_path) if os.path.exists(pr_path) else None
    graph = load_dataset(args.data, eta=config.bandwidth, unseen=config.unseen, pagerank_scores=scores)
    return graph


def _require(path, what, command):
    if not os.path.exists(path):
        raise CliError(f"missing {what} ({path}); run 'kgwalk {command}' first")
    return path


def _trainer(args, config, graph, need_policy=None):
    from .embed import EmbeddingModel
    from .rules import load_rules
    from .trainer import Trainer, artifact_paths, load_policy

    paths = artifact_paths(args.out)
    model = EmbeddingModel.load(_require(paths["embeddings"], "stage-1 embeddings", "train-embeddings"))
    index = load_rules(_require(paths["rules"], "stage-2 rules", "mine-rules"), graph.vocab, config.threshold)
    trainer = Trainer(graph, config, index, model, log_path=None)
    if need_policy:
        command = "pretrain" if need_policy == "pretrain" else "train"
        saved = load_policy(_require(paths[need_policy], f"{need_policy} checkpoint", command), graph)
        trainer.policy.params.load_state_dict(saved.params.state_dict())
    return trainer


def _append_log(trainer, path):
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as f:
        if new:
            f.write("epoch\tstage\tmean_reward\tloss\tdev_hits1\tdev_mrr\trule_usage_pct\n")
        for row in trainer.history:
            f.write("\t".join([str(row[0]), str(row[1])] + [f"{v:.6f}" for v in row[2:]]) + "\n")


# ---------------------------------------------------------------- commands

def cmd_prepare(args, config):
    from .kg import load_dataset
    from .synthetic import kinship, tiny_groups, write_dataset

    if args.synthetic:
        make = kinship if args.synthetic == "kinship" else tiny_groups
        train, dev, test = make(seed=config.seed)
        write_dataset(args.data, train, dev, test)
    graph = load_dataset(args.data, eta=config.bandwidth, unseen=config.unseen)
    os.makedirs(args.out, exist_ok=True)
    graph.vocab.save(args.out)
    print(f"entities={graph.num_entities} relations={graph.vocab.num_relations} "
          f"train={len(graph.train)} dev={len(graph.dev)} test={len(graph.test)}")


def cmd_pagerank(args, config):
    from .kg import add_reverse_links, load_triples
    from .pagerank import compute_pagerank, save_scores
    from .trainer import artifact_paths

    path = os.path.join(args.data, "train.txt")
    if not os.path.exists(path):
        raise CliError(f"no train.txt in {args.data!r}; run 'kgwalk prepare' first")
    train, vocab = load_triples(path)
    edges = [(s, o) for s, _, o in add_reverse_links(train, vocab)]
    scores = compute_pagerank(vocab.num_entities, edges)
    os.makedirs(args.out, exist_ok=True)
    save_scores(artifact_paths(args.out)["pagerank"], scores)
    print(f"pagerank over {vocab.num_entities} entities written")


def cmd_mine_rules(args, config):
    from .rules import mine, save_rules
    from .trainer import artifact_paths

    graph = _graph(args, config)
    index = mine(graph, config.miner_config())
    os.makedirs(args.out, exist_ok=True)
    save_rules(artifact_paths(args.out)["rules"], index, graph.vocab)
    print(f"{len(index)} rules with confidence >= {config.threshold}")


def cmd_train_embeddings(args, config):
    from .embed import filtered_mrr, train_embeddings
    from .trainer import artifact_paths

    graph = _graph(args, config)
    model = train_embeddings(graph, config.embedding_config())
    os.makedirs(args.out, exist_ok=True)
    model.save(artifact_paths(args.out)["embeddings"])
    if graph.dev:
        print(f"{model.kind} dev filtered MRR {filtered_mrr(model, graph.dev, graph.known_answers):.4f}")


def cmd_pretrain(args, config):
    from .trainer import artifact_paths, save_policy

    graph = _graph(args, config)
    trainer = _trainer(args, config, graph)
    trainer.stage3_pretrain()
    paths = artifact_paths(args.out)
    save_policy(paths["pretrain"], trainer.policy)
    _append_log(trainer, paths["log"])


def cmd_train(args, config):
    from .trainer import artifact_paths, save_policy

    graph = _graph(args, config)
    start = None if config.ablation == "no-pretrain" else "pretrain"
    trainer = _trainer(args, config, graph, need_policy=start)
    trainer.stage4_joint_train()
    paths = artifact_paths(args.out)
    save_policy(paths["model"], trainer.policy)
    _append_log(trainer, paths["log"])


def cmd_evaluate(args, config):
    from .inference import write_report

    graph = _graph(args, config)
    trainer = _trainer(args, config, graph, need_policy="model")
    mode = "raw" if args.raw else "filtered"
    report = trainer.evaluate(args.split, mode=mode)
    if report is None:
        raise CliError(f"split {args.split!r} has no queries")
    write_report(os.path.join(args.out, f"metrics_{args.split}.tsv"), report, args.split, mode)
    print(f"{args.split}\t{report.line()}")


def cmd_explain(args, config):
    from .inference import beam_search, export_paths

    graph = _graph(args, config)
    trainer = _trainer(args, config, graph, need_policy="model")
    queries = graph.queries(args.split)
    if not queries:
        raise CliError(f"split {args.split!r} has no queries")
    preds = beam_search(trainer.policy, queries, config.beam_width, trainer.rules)
    out = args.output or os.path.join(args.out, f"paths_{args.split}.txt")
    export_paths(preds, graph.vocab, out, top=args.top)
    print(f"paths for {len(preds)} queries written to {out}")


def cmd_rule_report(args, config):
    from .rules import format_rule, load_rules, rank_rules_by_accuracy
    from .trainer import artifact_paths

    graph = _graph(args, config)
    index = load_rules(_require(artifact_paths(args.out)["rules"], "stage-2 rules", "mine-rules"),
                       graph.vocab, config.threshold)
    ranked = rank_rules_by_accuracy(index, graph.split_triples(args.split), graph)
    print("precision\thits\tpredictions\tconfidence\trule")
    for item in ranked[:args.limit]:
        print(f"{item.precision:.4f}\t{item.hits}\t{item.predictions}\t{item.rule.confidence:.4f}"
              f"\t{format_rule(item.rule, graph.vocab)}")


def cmd_pipeline(args, config):
    from .trainer import run_pipeline

    graph = _graph(args, config)
    _, reports = run_pipeline(graph, config, args.out)
    for split, report in reports.items():
        print(f"{split}\t{report.line()}")


HANDLERS = {
    "prepare": cmd_prepare,
    "pagerank": cmd_pagerank,
    "mine-rules": cmd_mine_rules,
    "train-embeddings": cmd_train_embeddings,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "rule-report": cmd_rule_report,
    "pipeline": cmd_pipeline,
}


def _limit_threads(n):
    # must happen before numpy loads its BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        _limit_threads(args.threads)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)

    from .kg import ConfigError, TripleParseError, UnknownIdError
    from .rules import RuleParseError
    from .trainer import MissingArtifact

    expected = (CliError, ConfigError, TripleParseError, UnknownIdError, RuleParseError,
                MissingArtifact, FileNotFoundError, ValueError)
    try:
        config = load_config(args)
        HANDLERS[args.command](args, config)
    except expected as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kgwalk {args.command}: error: {message}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
