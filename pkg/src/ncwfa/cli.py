"""Command-line interface.

Subcommands:

    ncwfa gen-data   --config cfg.json --out DIR
    ncwfa train      --method {spec,sgd,em} --config cfg.json --data DIR \
                     --out model.json [--size N] [--noise S] [--seed K]
    ncwfa eval       --models m1.json [m2.json ...] --test DIR \
                     --truth truth.json --out report.csv
    ncwfa experiment --config cfg.json --out DIR

Exit code 0 on success; on failure a diagnostic goes to stderr and the exit
code is nonzero.  NCWFA_THREADS caps worker parallelism for `experiment`.
"""

import argparse
import sys
from pathlib import Path

from .experiment import (
    EvalReport,
    ExperimentConfig,
    evaluate,
    generate_corpus,
    load_cell_datasets,
    load_test_sets,
    run_experiment,
    train_cell_model,
    _fill_std_over_seeds,
    _sort_key,
    _write_metrics,
)
from .serialize import load_model, save_model


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ncwfa",
        description="Synthetic sequential-density experiments with weighted-automaton estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/test splits from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on one corpus cell")
    p.add_argument("--method", required=True, choices=["spec", "sgd", "em"])
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="directory produced by gen-data")
    p.add_argument("--out", required=True, help="model output path (JSON)")
    p.add_argument("--size", type=int, default=None, help="training size (default: first in config)")
    p.add_argument("--noise", type=float, default=None, help="noise std (default: first in config)")
    p.add_argument("--seed", type=int, default=None, help="cell seed (default: first in config)")

    p = sub.add_parser("eval", help="evaluate model files against a test corpus")
    p.add_argument("--models", required=True, nargs="+")
    p.add_argument("--test", required=True, help="directory holding test_len*.jsonl")
    p.add_argument("--truth", required=True, help="ground-truth HMM model file")
    p.add_argument("--out", required=True, help="CSV report path")

    p = sub.add_parser("experiment", help="run the full generate/train/evaluate pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen_data(args):
    cfg = ExperimentConfig.from_json(args.config)
    generate_corpus(cfg, args.out)
    print(f"corpus written to {args.out}")


def _cmd_train(args):
    cfg = ExperimentConfig.from_json(args.config)
    size = args.size if args.size is not None else cfg.train_sizes[0]
    noise = args.noise if args.noise is not None else cfg.noise_stds[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    datasets = load_cell_datasets(Path(args.data), cfg, seed, size, noise)
    model, history, info = train_cell_model(args.method, datasets, cfg, seed)
    save_model(model, args.out)
    metrics_path = Path(args.out).with_suffix(".metrics.csv")
    _write_metrics(metrics_path, history)
    msg = f"{args.method} model written to {args.out} (metrics: {metrics_path})"
    if info is not None:
        msg += f"; recovery numerical rank {info.numerical_rank}/{info.rank}"
    print(msg)


def _cmd_eval(args):
    truth = load_model(args.truth)
    test_sets = load_test_sets(args.test)
    if not test_sets:
        raise FileNotFoundError(f"no test_len*.jsonl files under {args.test}")
    models = {}
    for path in args.models:
        name = Path(path).stem
        models[name] = load_model(path)
    report = evaluate(models, test_sets, truth)
    rows = report.rows
    _fill_std_over_seeds(rows)
    rows.sort(key=_sort_key)
    EvalReport(rows).to_csv(args.out)
    print(f"report written to {args.out} ({len(rows)} rows)")


def _cmd_experiment(args):
    cfg = ExperimentConfig.from_json(args.config)
    out = run_experiment(cfg, args.out)
    print(f"experiment artifacts written to {out}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "experiment": _cmd_experiment,
    }
    try:
        handlers[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
