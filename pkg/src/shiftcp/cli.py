"""Command-line interface.

Subcommands: train-demo, calibrate, evaluate, stream, sweep-beta,
diagnose-scaling, ingest. Every flag mirrors a config-file key and overrides
it. Exit codes: 0 success, 1 config error, 2 data/parse error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import METHODS, RunConfig, load_config
from .conformal import calibrate, true_label_scores
from .errors import ShiftCPError
from .experiment import (
    run_beta_sweep,
    run_experiment,
    run_scaling_diagnostic,
    split_seeds,
    split_table,
)
from .fileio import LogitTable, fmt6, load_logit_table, save_dataset, save_logit_table
from .model import accuracy, save_checkpoint, train_supervised
from .shiftsim import generate

# (flag destination, RunConfig field) pairs applied when the flag was given
_FLAG_FIELDS = [
    ("alpha", "alpha"),
    ("method", "method"),
    ("order", "order"),
    ("beta", "beta"),
    ("measure", "measure"),
    ("window", "window"),
    ("gamma", "gamma"),
    ("temperature", "temperature"),
    ("quantile_mode", "quantile_mode"),
    ("quantile_window", "quantile_window"),
    ("lr", "tta_lr"),
    ("momentum", "tta_momentum"),
    ("batch_size", "tta_batch_size"),
    ("tta_method", "tta_method"),
    ("entropy_margin", "entropy_margin"),
    ("epsilon", "epsilon"),
    ("param_subset", "param_subset"),
    ("epochs", "train_epochs"),
    ("train_lr", "train_lr"),
    ("architecture", "architecture"),
    ("hidden_units", "hidden_units"),
    ("classes", "n_classes"),
    ("features", "n_features"),
    ("n_train", "n_train"),
    ("n_cal", "n_cal"),
    ("n_test", "n_test"),
    ("separation", "separation"),
    ("stddev", "stddev"),
    ("corruption", "corruption"),
    ("severity", "severity"),
    ("schedule", "schedule_mode"),
    ("segment_length", "segment_length"),
    ("total_points", "total_points"),
    ("table", "table_path"),
    ("table_cal", "table_cal_path"),
    ("table_test", "table_test_path"),
    ("orientation", "table_orientation"),
    ("split", "table_split"),
    ("checkpoint", "checkpoint"),
    ("out", "out_dir"),
    ("dataset_name", "dataset_name"),
]


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="flat key = value configuration file")
    g.add_argument("--alpha", type=float, help="target error rate (default 0.1)")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--order", type=float, help="scaling polynomial order (>= 1)")
    g.add_argument("--beta", type=float, help="uncertainty quantile level (default 1 - alpha)")
    g.add_argument("--measure", choices=("entropy", "softmax_variance", "one_minus_max"))
    g.add_argument("--window", type=int, help="worst-window width (default 128)")
    g.add_argument("--seed", type=int, nargs="+", dest="seeds", help="run seed(s)")
    g.add_argument("--gamma", type=float, help="online baseline step size")
    g.add_argument("--temperature", type=float, help="inference softmax temperature")
    g.add_argument("--quantile-mode", dest="quantile_mode", choices=("running", "window"))
    g.add_argument("--quantile-window", dest="quantile_window", type=int)
    g.add_argument("--lr", type=float, help="adaptation learning rate")
    g.add_argument("--momentum", type=float, help="adaptation momentum")
    g.add_argument("--batch-size", dest="batch_size", type=int, help="adaptation batch size")
    g.add_argument("--tta-method", dest="tta_method", choices=("eta", "tent"))
    g.add_argument("--entropy-margin", dest="entropy_margin", type=float)
    g.add_argument("--epsilon", type=float, help="redundancy filter epsilon")
    g.add_argument("--param-subset", dest="param_subset", choices=("final_layer", "all"))
    g.add_argument("--epochs", type=int, help="training epochs for the base model")
    g.add_argument("--train-lr", dest="train_lr", type=float)
    g.add_argument("--architecture", choices=("linear", "mlp"))
    g.add_argument("--hidden-units", dest="hidden_units", type=int)
    g.add_argument("--classes", type=int, help="synthetic class count")
    g.add_argument("--features", type=int, help="synthetic feature dimension")
    g.add_argument("--n-train", dest="n_train", type=int)
    g.add_argument("--n-cal", dest="n_cal", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--separation", type=float)
    g.add_argument("--stddev", type=float)
    g.add_argument(
        "--corruption", choices=("additive_noise", "contrast", "mean_shift", "rotation")
    )
    g.add_argument("--severity", type=int, choices=range(6))
    g.add_argument("--schedule", choices=("stationary", "gradual", "sudden"))
    g.add_argument("--segment-length", dest="segment_length", type=int)
    g.add_argument("--total-points", dest="total_points", type=int)
    g.add_argument("--table", help="logit table CSV instead of synthetic data")
    g.add_argument("--table-cal", dest="table_cal", help="pre-split calibration logit table")
    g.add_argument("--table-test", dest="table_test", help="pre-split test logit table")
    g.add_argument("--orientation", choices=("probabilities", "raw_logits"))
    g.add_argument("--split", type=float, help="calibration fraction of an ingested table")
    g.add_argument("--checkpoint", help="load this model checkpoint instead of training")
    g.add_argument("--out", help="output directory (default results)")
    g.add_argument("--dataset-name", dest="dataset_name")
    g.add_argument("--per-point", dest="per_point", action="store_true", default=None)
    g.add_argument(
        "--no-plot-data", dest="plot_data", action="store_false", default=None,
        help="skip the plot-data CSVs",
    )


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, config)
    updates = {}
    for flag, field in _FLAG_FIELDS:
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    if getattr(args, "seeds", None) is not None:
        updates["seeds"] = tuple(args.seeds)
    if getattr(args, "per_point", None) is not None:
        updates["per_point"] = args.per_point
    if getattr(args, "plot_data", None) is not None:
        updates["plot_data"] = args.plot_data
    return replace(config, **updates)


def cmd_train_demo(args) -> int:
    config = build_config(args)
    seed = config.seeds[0]
    train_seed = split_seeds(seed)[0]
    data = generate(config.synthetic_spec(config.n_train, train_seed, seed))
    params = train_supervised(data, config.train_config(seed))
    out = Path(args.model_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params.with_temperature(config.temperature), out)
    print(f"checkpoint = {out}")
    print(f"train_accuracy = {fmt6(accuracy(params, data))}")
    if args.export_data:
        data_path = Path(args.export_data)
        data_path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(data, data_path)
        print(f"train_data = {data_path}")
    return 0


def cmd_calibrate(args) -> int:
    config = build_config(args)
    table = load_logit_table(args.table, config.table_orientation)
    scores = true_label_scores(table.probs, table.labels)
    result = calibrate(scores, config.alpha)
    print(f"tau = {fmt6(result.tau)}")
    print(f"alpha = {fmt6(result.alpha)}")
    print(f"n_cal = {result.n_cal}")
    return 0


def _print_reports(reports, config) -> None:
    for seed, report in zip(config.seeds, reports):
        print(
            f"seed {seed}: method={report.method} coverage={fmt6(report.coverage)} "
            f"avg_size={fmt6(report.avg_size)} empty_rate={fmt6(report.empty_set_rate)}"
        )


def cmd_evaluate(args) -> int:
    config = build_config(args)
    reports = run_experiment(config, streaming=False)
    _print_reports(reports, config)
    print(f"report = {Path(config.out_dir) / 'report.csv'}")
    return 0


def cmd_stream(args) -> int:
    config = build_config(args)
    reports = run_experiment(config, streaming=True)
    _print_reports(reports, config)
    print(f"report = {Path(config.out_dir) / 'report.csv'}")
    return 0


def cmd_sweep_beta(args) -> int:
    config = build_config(args)
    path = run_beta_sweep(config)
    print(f"beta_sweep = {path}")
    return 0


def cmd_diagnose_scaling(args) -> int:
    config = build_config(args)
    path = run_scaling_diagnostic(config)
    print(f"scaling_diagnostic = {path}")
    return 0


def cmd_ingest(args) -> int:
    config = build_config(args)
    table = load_logit_table(args.table, config.table_orientation)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.split_files:
        seed = config.seeds[0]
        cal_p, cal_y, test_p, test_y = split_table(table, config.table_split, seed)
        save_logit_table(LogitTable(cal_y, cal_p), out / "calibration.csv")
        save_logit_table(LogitTable(test_y, test_p), out / "test.csv")
        print(f"calibration = {out / 'calibration.csv'} ({len(cal_y)} rows)")
        print(f"test = {out / 'test.csv'} ({len(test_y)} rows)")
    else:
        save_logit_table(table, out / "table.csv")
        print(f"table = {out / 'table.csv'} ({len(table)} rows, k={table.n_classes})")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftcp",
        description=(
            "Prediction sets under distribution shift: threshold conformal "
            "prediction, entropy-scaled sets, and entropy-minimization "
            "test-time adaptation, on synthetic data or ingested model scores."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-demo", help="train the built-in classifier on synthetic data")
    _add_run_flags(p)
    p.add_argument("--model-out", dest="model_out", default="model.txt")
    p.add_argument(
        "--export-data", dest="export_data",
        help="also write the training split as a dataset CSV",
    )
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("calibrate", help="calibrate a threshold from a logit table")
    _add_run_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="stationary-shift evaluation run")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stream", help="continuous-shift streaming run")
    _add_run_flags(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("sweep-beta", help="coverage/size across quantile levels")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("diagnose-scaling", help="log-log scaling-order diagnostic")
    _add_run_flags(p)
    p.set_defaults(func=cmd_diagnose_scaling)

    p = sub.add_parser("ingest", help="validate and normalize an external logit table")
    _add_run_flags(p)
    p.add_argument(
        "--split-files", dest="split_files", action="store_true",
        help="write calibration.csv and test.csv instead of one table",
    )
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command in ("calibrate", "ingest") and not getattr(args, "table", None):
        parser.error(f"{args.command} requires --table")
    try:
        return args.func(args)
    except ShiftCPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
