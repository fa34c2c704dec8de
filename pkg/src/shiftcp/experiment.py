"""End-to-end experiment runs: data, model, calibration, method, report files.

The pipeline per seed: build (or load) the base classifier on a clean train
split, calibrate the threshold on a clean calibration split, apply the chosen
method to shifted test data, and score the emitted sets. Test labels are used
only by metrics, diagnostics, and the supervised online baseline; no
set-construction call accepts them.

Seeds: each run seed fixes the synthetic population (class means) and
deterministically derives per-split sampling seeds, so reruns are
byte-identical and different seeds are honest replications.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .conformal import CalibrationResult, calibrate, naive_set, splitcp_set, true_label_scores
from .errors import ConfigError
from .fileio import (
    LogitTable,
    load_logit_table,
    report_row,
    write_per_point_csv,
    write_report_csv,
    write_table_csv,
)
from .metrics import (
    EvalReport,
    beta_sweep,
    build_report,
    scaling_order_diagnostic,
)
from .model import ClassifierParams, load_checkpoint, predict_proba, train_supervised
from .numeric import rng_from_seed
from .online import aci_masks
from .scaling import ecp_set, profile
from .shiftsim import Corruption, corrupt, generate, schedule_stream
from .tta import adapt, eacp_offline, eacp_streaming

SWEEP_BETAS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


def split_seeds(seed: int) -> tuple[int, int, int, int, int]:
    """Derived sampling seeds (train, cal, test, corrupt, stream) for one run seed."""
    rng = rng_from_seed(seed)
    return tuple(int(s) for s in rng.integers(2**63, size=5))


def _dataset_name(config: RunConfig, streaming: bool) -> str:
    if config.dataset_name:
        return config.dataset_name
    if config.table_path:
        return Path(config.table_path).name
    if config.table_cal_path:
        return Path(config.table_test_path).name
    if streaming:
        return f"synth-{config.schedule_mode}-stream"
    return f"synth-k{config.n_classes}d{config.n_features}-{config.corruption}{config.severity}"


class PreparedModel:
    """Per-seed base model plus its clean calibration materials."""

    def __init__(self, config: RunConfig, seed: int):
        train_seed, cal_seed, test_seed, corrupt_seed, stream_seed = split_seeds(seed)
        self.seed = seed
        self.corrupt_seed = corrupt_seed
        self.stream_seed = stream_seed
        self.test_seed = test_seed
        if config.checkpoint:
            params = load_checkpoint(config.checkpoint)
        else:
            train = generate(config.synthetic_spec(config.n_train, train_seed, seed))
            params = train_supervised(train, config.train_config(seed))
        self.params = params.with_temperature(config.temperature)
        cal = generate(config.synthetic_spec(config.n_cal, cal_seed, seed))
        cal_probs = predict_proba(self.params, cal.X)
        self.cal_scores = true_label_scores(cal_probs, cal.y)
        self.calib = calibrate(self.cal_scores, config.alpha)


def stationary_masks(
    config: RunConfig,
    params: ClassifierParams,
    calib: CalibrationResult,
    X_test: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Apply the configured method to test covariates; returns masks and extras."""
    method = config.method
    spec = config.scaling_spec()
    if method == "naive":
        probs = predict_proba(params, X_test)
        return naive_set(probs, config.alpha), {"probs": probs}
    if method == "splitcp":
        probs = predict_proba(params, X_test)
        return splitcp_set(probs, calib), {"probs": probs}
    if method == "ecp":
        probs = predict_proba(params, X_test)
        prof = profile(probs, spec)
        return ecp_set(probs, calib, prof.factor), {
            "probs": probs,
            "u_test": prof.u_test,
            "factor": prof.factor,
        }
    if method == "eta_splitcp":
        adapted, _ = adapt(params, X_test, config.tta_config())
        probs = predict_proba(adapted, X_test)
        return splitcp_set(probs, calib), {"probs": probs}
    if method == "eacp":
        adapted, masks, prof = eacp_offline(params, X_test, calib, spec, config.tta_config())
        probs = predict_proba(adapted, X_test)
        return masks, {"probs": probs, "u_test": prof.u_test, "factor": prof.factor}
    raise ConfigError(f"method {method!r} is not an offline method")


def table_masks(config: RunConfig, calib: CalibrationResult, probs: np.ndarray):
    method = config.method
    if method == "naive":
        return naive_set(probs, config.alpha), {"probs": probs}
    if method == "splitcp":
        return splitcp_set(probs, calib), {"probs": probs}
    if method == "ecp":
        prof = profile(probs, config.scaling_spec())
        return ecp_set(probs, calib, prof.factor), {
            "probs": probs,
            "u_test": prof.u_test,
            "factor": prof.factor,
        }
    raise ConfigError(f"method {method!r} needs covariates, not a logit table")


def table_splits(config: RunConfig, seed: int):
    """Calibration/test probabilities and labels for one seed, from either a
    single table (seeded split) or a pre-split pair (fixed across seeds)."""
    if config.table_cal_path is not None:
        cal = load_logit_table(config.table_cal_path, config.table_orientation)
        test = load_logit_table(config.table_test_path, config.table_orientation)
        if cal.n_classes != test.n_classes:
            raise ConfigError(
                f"calibration table has k={cal.n_classes} but test table has "
                f"k={test.n_classes}"
            )
        return cal.probs, cal.labels, test.probs, test.labels
    table = load_logit_table(config.table_path, config.table_orientation)
    return split_table(table, config.table_split, seed)


def split_table(table: LogitTable, fraction: float, seed: int):
    """Seeded permutation split of an ingested table into calibration and test."""
    n = len(table)
    n_cal = int(math.ceil(fraction * n))
    if n_cal < 2 or n - n_cal < 1:
        raise ConfigError(
            f"table split {fraction} leaves too few rows (n={n}); need >= 2 "
            "calibration and >= 1 test rows"
        )
    order = rng_from_seed(seed).permutation(n)
    cal_idx, test_idx = order[:n_cal], order[n_cal:]
    return (
        table.probs[cal_idx],
        table.labels[cal_idx],
        table.probs[test_idx],
        table.labels[test_idx],
    )


def _plot_data_stationary(config: RunConfig, prepared: list[PreparedModel], out: Path):
    severity_rows, sweep_rows, diag_rows = [], [], []
    for prep in prepared:
        cfg_seed = prep.seed
        test_clean = generate(
            config.synthetic_spec(config.n_test, prep.test_seed, cfg_seed)
        )
        for severity in range(6):
            shifted = corrupt(
                test_clean,
                Corruption(config.corruption, severity),
                seed=prep.corrupt_seed,
                stddev=config.stddev,
                separation=config.separation,
            )
            masks, extras = stationary_masks(config, prep.params, prep.calib, shifted.X)
            report = build_report(
                config.method, config.alpha, masks, shifted.y, window=config.window
            )
            severity_rows.append(
                (
                    cfg_seed,
                    severity,
                    report.coverage,
                    report.avg_size,
                    extras.get("u_test", math.nan),
                    extras.get("factor", math.nan),
                )
            )
        shifted = corrupt(
            test_clean,
            Corruption(config.corruption, config.severity),
            seed=prep.corrupt_seed,
            stddev=config.stddev,
            separation=config.separation,
        )
        probs = predict_proba(prep.params, shifted.X)
        for row in beta_sweep(
            probs, shifted.y, prep.calib, SWEEP_BETAS, order=config.order,
            measure=config.measure,
        ):
            sweep_rows.append(
                (cfg_seed, row.beta, row.u_test, row.factor, row.coverage, row.avg_size)
            )
        diag = scaling_order_diagnostic(
            prep.cal_scores, probs, shifted.y, measure=config.measure
        )
        for alpha, u, ratio in zip(diag.alphas, diag.u_values, diag.ratios):
            diag_rows.append((cfg_seed, alpha, u, ratio, diag.slope, diag.intercept))
    write_table_csv(
        ("seed", "severity", "coverage", "avg_size", "u_test", "factor"),
        severity_rows,
        out / "coverage_by_severity.csv",
    )
    write_table_csv(
        ("seed", "beta", "u_test", "factor", "coverage", "avg_size"),
        sweep_rows,
        out / "beta_sweep.csv",
    )
    write_table_csv(
        ("seed", "alpha", "u_test", "ratio", "slope", "intercept"),
        diag_rows,
        out / "scaling_diagnostic.csv",
    )


def _plot_data_table(config: RunConfig, runs: list[tuple], out: Path):
    sweep_rows, diag_rows = [], []
    for seed, cal_scores, calib, probs_test, labels_test in runs:
        for row in beta_sweep(
            probs_test, labels_test, calib, SWEEP_BETAS, order=config.order,
            measure=config.measure,
        ):
            sweep_rows.append(
                (seed, row.beta, row.u_test, row.factor, row.coverage, row.avg_size)
            )
        diag = scaling_order_diagnostic(
            cal_scores, probs_test, labels_test, measure=config.measure
        )
        for alpha, u, ratio in zip(diag.alphas, diag.u_values, diag.ratios):
            diag_rows.append((seed, alpha, u, ratio, diag.slope, diag.intercept))
    write_table_csv(
        ("seed", "beta", "u_test", "factor", "coverage", "avg_size"),
        sweep_rows,
        out / "beta_sweep.csv",
    )
    write_table_csv(
        ("seed", "alpha", "u_test", "ratio", "slope", "intercept"),
        diag_rows,
        out / "scaling_diagnostic.csv",
    )


def _diagnostic_materials(config: RunConfig):
    """Per-seed (cal_scores, calib, test probs, test labels) for diagnostics."""
    runs = []
    if config.uses_tables():
        for seed in config.seeds:
            cal_probs, cal_labels, test_probs, test_labels = table_splits(config, seed)
            cal_scores = true_label_scores(cal_probs, cal_labels)
            runs.append(
                (seed, cal_scores, calibrate(cal_scores, config.alpha), test_probs, test_labels)
            )
        return runs
    for seed in config.seeds:
        prep = PreparedModel(config, seed)
        test_clean = generate(config.synthetic_spec(config.n_test, prep.test_seed, seed))
        shifted = corrupt(
            test_clean,
            Corruption(config.corruption, config.severity),
            seed=prep.corrupt_seed,
            stddev=config.stddev,
            separation=config.separation,
        )
        probs = predict_proba(prep.params, shifted.X)
        runs.append((seed, prep.cal_scores, prep.calib, probs, shifted.y))
    return runs


def run_beta_sweep(config: RunConfig, betas=SWEEP_BETAS) -> Path:
    """Emit only the beta-sweep plot data; returns the CSV path."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed, _, calib, probs, labels in _diagnostic_materials(config):
        for row in beta_sweep(
            probs, labels, calib, betas, order=config.order, measure=config.measure
        ):
            rows.append((seed, row.beta, row.u_test, row.factor, row.coverage, row.avg_size))
    path = out / "beta_sweep.csv"
    write_table_csv(
        ("seed", "beta", "u_test", "factor", "coverage", "avg_size"), rows, path
    )
    return path


def run_scaling_diagnostic(config: RunConfig) -> Path:
    """Emit only the log-log scaling diagnostic; returns the CSV path."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed, cal_scores, _, probs, labels in _diagnostic_materials(config):
        diag = scaling_order_diagnostic(cal_scores, probs, labels, measure=config.measure)
        for alpha, u, ratio in zip(diag.alphas, diag.u_values, diag.ratios):
            rows.append((seed, alpha, u, ratio, diag.slope, diag.intercept))
    path = out / "scaling_diagnostic.csv"
    write_table_csv(
        ("seed", "alpha", "u_test", "ratio", "slope", "intercept"), rows, path
    )
    return path


def run_experiment(config: RunConfig, streaming: bool = False) -> list[EvalReport]:
    """Run the configured method over all seeds; write report and plot CSVs."""
    config.validate(streaming=streaming)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _dataset_name(config, streaming)
    reports: list[EvalReport] = []
    rows: list[dict] = []
    if config.uses_tables():
        reports, rows = _run_table(config, dataset, out)
    elif streaming:
        reports, rows = _run_streaming(config, dataset, out)
    else:
        reports, rows = _run_stationary(config, dataset, out)
    write_report_csv(rows, out / "report.csv")
    return reports


def _run_stationary(config: RunConfig, dataset: str, out: Path):
    reports, rows, prepared = [], [], []
    for seed in config.seeds:
        prep = PreparedModel(config, seed)
        prepared.append(prep)
        test_clean = generate(config.synthetic_spec(config.n_test, prep.test_seed, seed))
        shifted = corrupt(
            test_clean,
            Corruption(config.corruption, config.severity),
            seed=prep.corrupt_seed,
            stddev=config.stddev,
            separation=config.separation,
        )
        masks, extras = stationary_masks(config, prep.params, prep.calib, shifted.X)
        report = build_report(
            config.method,
            config.alpha,
            masks,
            shifted.y,
            window=config.window,
            probs=extras.get("probs"),
            severity=np.full(len(shifted.y), config.severity),
            u_test=extras.get("u_test", math.nan),
            factor=extras.get("factor", math.nan),
            tau=prep.calib.tau,
            keep_records=config.per_point,
        )
        reports.append(report)
        rows.append(report_row(report, dataset, seed))
        if config.per_point:
            write_per_point_csv(report, out / f"per_point_seed{seed}.csv")
    if config.plot_data:
        _plot_data_stationary(config, prepared, out)
    return reports, rows


def _run_streaming(config: RunConfig, dataset: str, out: Path):
    reports, rows = [], []
    for seed in config.seeds:
        prep = PreparedModel(config, seed)
        base_spec = config.synthetic_spec(1, 0, seed)
        stream = schedule_stream(
            base_spec, config.shift_schedule(prep.stream_seed), config.total_points
        )
        method = config.method
        cfg = config.tta_config()
        u_used = None
        u_final = math.nan
        factor_final = math.nan
        quantile_mode = ""
        if method in ("naive", "splitcp", "aci"):
            probs = predict_proba(prep.params, stream.X)
            if method == "naive":
                masks = naive_set(probs, config.alpha)
            elif method == "splitcp":
                masks = splitcp_set(probs, prep.calib)
            else:
                masks, _ = aci_masks(
                    probs, stream.y, prep.cal_scores, config.gamma, config.alpha
                )
        else:
            spec = None if method == "eta_splitcp" else config.scaling_spec()
            if method == "ecp":
                cfg = replace(cfg, learning_rate=0.0)
            batches = [
                stream.X[i : i + cfg.batch_size]
                for i in range(0, len(stream), cfg.batch_size)
            ]
            result = eacp_streaming(
                prep.params,
                batches,
                prep.calib,
                spec,
                cfg,
                quantile_mode=config.quantile_mode,
                window=config.quantile_window,
            )
            masks = result.masks
            u_used = result.u_test
            quantile_mode = config.quantile_mode if spec is not None else ""
            if spec is not None:
                u_final = float(result.u_test[-1])
                factor_final = float(result.factors[-1])
        report = build_report(
            method,
            config.alpha,
            masks,
            stream.y,
            window=config.window,
            severity=stream.severity,
            u_used=u_used,
            u_test=u_final,
            factor=factor_final,
            tau=prep.calib.tau,
            quantile_mode=quantile_mode,
            keep_records=config.per_point,
        )
        reports.append(report)
        rows.append(report_row(report, dataset, seed))
        if config.per_point:
            write_per_point_csv(report, out / f"per_point_seed{seed}.csv")
    return reports, rows


def _run_table(config: RunConfig, dataset: str, out: Path):
    reports, rows, runs = [], [], []
    for seed in config.seeds:
        cal_probs, cal_labels, test_probs, test_labels = table_splits(config, seed)
        cal_scores = true_label_scores(cal_probs, cal_labels)
        calib = calibrate(cal_scores, config.alpha)
        masks, extras = table_masks(config, calib, test_probs)
        report = build_report(
            config.method,
            config.alpha,
            masks,
            test_labels,
            window=config.window,
            probs=test_probs,
            u_test=extras.get("u_test", math.nan),
            factor=extras.get("factor", math.nan),
            tau=calib.tau,
            keep_records=config.per_point,
        )
        reports.append(report)
        rows.append(report_row(report, dataset, seed))
        runs.append((seed, cal_scores, calib, test_probs, test_labels))
        if config.per_point:
            write_per_point_csv(report, out / f"per_point_seed{seed}.csv")
    if config.plot_data:
        _plot_data_table(config, runs, out)
    return reports, rows
