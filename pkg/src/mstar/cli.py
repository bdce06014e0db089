"""Command-line interface: dataset analysis, training, evaluation, ablation.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files, vocabulary mismatch), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from .autodiff import NumericError
from .conditioning import AblationFlags, ModelConfig
from .evaluator import (
    build_filter_index,
    distance_proportions,
    evaluate,
    format_distance_report,
    format_metrics_report,
)
from .graph import DataError, InductiveDataset, load_dataset, load_union_graph
from .graph import directory_stats, graph_stats, long_distance_proportion, query_distance
from .model import MStarModel
from .params import CheckpointError, load_checkpoint
from .trainer import CHECKPOINT_FILE, ConfigError, fit, load_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ABLATION_VARIANTS = (
    ("full", {}, {}),
    ("no_selection", {"selection_on": False}, {}),
    ("no_highway", {"highway_on": False}, {}),
    ("no_linkverify", {"linkverify_on": False}, {}),
    ("sel_random", {}, {"selection_mode": "random"}),
    ("sel_degree", {}, {"selection_mode": "degree"}),
)


def _emit(text: str, out_path: str | None) -> None:
    sys.stdout.write(text)
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_run_inputs(args) -> tuple[InductiveDataset, ModelConfig, AblationFlags]:
    dataset = load_dataset(args.train_dir, args.test_dir)
    if args.config:
        config, flags = load_config(args.config)
    else:
        config, flags = ModelConfig(), AblationFlags()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if getattr(args, "mode", None):
        config = config.with_overrides(selection_mode=args.mode)
    return dataset, config, flags


def cmd_stats(args) -> int:
    lines = []
    for label, directory in (("train", args.train_dir), ("test", args.test_dir)):
        r, v, f = directory_stats(directory)
        lines.append(f"{label} (|R|, |V|, |F|) = ({r}, {v}, {f})")
    dataset = load_dataset(args.train_dir, args.test_dir)
    for label, graph in (("train", dataset.train_graph), ("test", dataset.test_graph)):
        r, v, f = graph_stats(graph)
        lines.append(f"{label} propagation graph (|R|, |V|, |F|) = ({r}, {v}, {f})")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_distance_report(args) -> int:
    dataset = load_dataset(args.train_dir, args.test_dir)
    parts = []

    distances = [
        query_distance(dataset.test_graph, q) for q in dataset.test_queries
    ]
    fine, coarse = distance_proportions(distances)
    parts.append("# test-query distances on the inference graph (query edge excluded)\n")
    parts.append("distance\tproportion\n")
    parts.extend(f"{label}\t{pct:.2f}\n" for label, pct in fine)
    parts.append("# coarse buckets\n")
    parts.extend(f"{label}\t{pct:.2f}\n" for label, pct in coarse)

    parts.append(
        f"# long-distance proportions (> {args.threshold} hops), "
        "whole-directory graphs, own edge excluded\n"
    )
    for label, directory in (("train", args.train_dir), ("test", args.test_dir)):
        union, _ = load_union_graph(directory)
        pct = long_distance_proportion(
            union, union.original_triples(), threshold=args.threshold
        )
        parts.append(f"{label}\t{pct:.2f}\n")
    _emit("".join(parts), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    dataset, config, flags = _load_run_inputs(args)
    run, _ = fit(
        dataset, config, flags, out_dir=args.out,
        log=lambda line: print(line),
    )
    print(f"best epoch {run.best_epoch}: valid_mrr = {run.best_valid_mrr:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset, config, flags = _load_run_inputs(args)
    checkpoint_path = os.path.join(args.out, CHECKPOINT_FILE)
    if not os.path.exists(checkpoint_path):
        raise DataError(f"no checkpoint at {checkpoint_path}; run train first")
    model = MStarModel(dataset.train_graph, config)
    model.params.load_state(load_checkpoint(checkpoint_path))
    test_model = model.bind(dataset.test_graph)
    filter_index = build_filter_index(dataset.test_graph, [dataset.test_queries])
    result = evaluate(
        test_model, dataset.test_queries, filter_index=filter_index,
        flags=flags, with_distances=True,
    )
    report = format_distance_report(result)
    sys.stdout.write(report)
    report_path = os.path.join(args.out, "test_metrics.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset, config, flags = _load_run_inputs(args)
    summary = ["variant\tbest_valid_mrr\ttest_mrr\ttest_hits@10"]
    filter_index = build_filter_index(dataset.test_graph, [dataset.test_queries])
    for name, flag_overrides, config_overrides in ABLATION_VARIANTS:
        variant_config = config.with_overrides(**config_overrides)
        variant_flags = AblationFlags(
            **{
                "selection_on": flags.selection_on,
                "highway_on": flags.highway_on,
                "linkverify_on": flags.linkverify_on,
                **flag_overrides,
            }
        )
        out_dir = os.path.join(args.out, name) if args.out else None
        run, model = fit(dataset, variant_config, variant_flags, out_dir=out_dir)
        result = evaluate(
            model.bind(dataset.test_graph), dataset.test_queries,
            filter_index=filter_index, flags=variant_flags,
        )
        line = f"{name}\t{run.best_valid_mrr:.6f}\t{result.mrr:.6f}\t{result.hits:.6f}"
        summary.append(line)
        print(line)
    text = "\n".join(summary) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.tsv"), "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstar",
        description="Multi-starting progressive propagation for inductive KG reasoning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out_dir=False, model_flags=False):
        p.add_argument("--train-dir", required=True, help="directory with train.txt and valid.txt")
        p.add_argument("--test-dir", required=True,
                       help="directory with train.txt (inference graph) and test.txt")
        if needs_out_dir:
            p.add_argument("--out", required=True, help="output directory for run artifacts")
        else:
            p.add_argument("--out", default=None, help="optional output file")
        if model_flags:
            p.add_argument("--config", default=None, help="key = value configuration file")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
            p.add_argument("--mode", choices=("learned", "random", "degree"), default=None,
                           help="override the starting-entity selection mode")

    p = sub.add_parser("stats", help="dataset statistics per side")
    add_common(p)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("distance-report", help="head-tail distance analytics")
    add_common(p)
    p.add_argument("--threshold", type=int, default=3,
                   help="hop threshold for the long-distance proportion")
    p.set_defaults(fn=cmd_distance_report)

    p = sub.add_parser("train", help="train a model with early stopping")
    add_common(p, needs_out_dir=True, model_flags=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint on the test split")
    add_common(p, needs_out_dir=True, model_flags=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the component and selection-variant studies")
    add_common(p, needs_out_dir=True, model_flags=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
