"""Evaluation of prediction-set runs: coverage, sizes, worst windows, ECE.

Worst-window metrics scan every contiguous window of a fixed width (default
128 points) in arrival order. Local coverage error is reported as the
absolute gap |target - window coverage| (the headline number) alongside the
signed worst under-coverage; local set size is the largest window-mean size.

``beta_sweep`` and ``scaling_order_diagnostic`` are labeled diagnostics: the
first recomputes scaled sets across quantile levels, the second assembles
(uncertainty quantile, threshold ratio) points over an error-rate grid and
fits their log-log slope, which estimates the polynomial order the scaling
function should use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationResult, calibrate, true_label_scores
from .numeric import check_prob_matrix, empirical_quantile, linear_fit_loglog
from .scaling import (
    ScalingSpec,
    ecp_set,
    scale_factor,
    tau_test_diagnostic,
    uncertainty_values,
)

DEFAULT_WINDOW = 128
DEFAULT_ECE_BINS = 15
DEFAULT_DIAGNOSTIC_ALPHAS = tuple(np.round(np.linspace(0.05, 0.3, 11), 6))


def coverage(masks, labels) -> float:
    """Fraction of points whose set contains the true label."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (masks.shape[0],):
        raise ValueError("labels must match the number of sets")
    if labels.min() < 0 or labels.max() >= masks.shape[1]:
        raise ValueError("labels out of range")
    return float(masks[np.arange(masks.shape[0]), labels].mean())


def covered_flags(masks, labels) -> np.ndarray:
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    labels = np.asarray(labels, dtype=np.int64)
    return masks[np.arange(masks.shape[0]), labels]


def worst_window(
    values, window: int, target: float | None = None, kind: str = "lce", signed: bool = False
) -> float:
    """Worst sliding-window statistic over contiguous windows of ``window`` points.

    kind="lce": max |target - window mean| (or max(target - mean) when
    ``signed``) of 0/1 coverage indicators. kind="lss": max window mean.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("values must be a 1-D vector")
    n = v.shape[0]
    if not 1 <= window <= n:
        raise ValueError(f"window must be in [1, {n}], got {window}")
    csum = np.concatenate([[0.0], np.cumsum(v)])
    means = (csum[window:] - csum[:-window]) / window
    if kind == "lss":
        return float(means.max())
    if kind != "lce":
        raise ValueError(f"unknown worst-window kind {kind!r}")
    if target is None:
        raise ValueError("lce needs a coverage target")
    if signed:
        return float((target - means).max())
    return float(np.abs(target - means).max())


def ece(probs, labels, bins: int = DEFAULT_ECE_BINS) -> float:
    """Top-label expected calibration error with equal-width confidence bins."""
    if bins < 1:
        raise ValueError("need at least one bin")
    P = check_prob_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (P.shape[0],):
        raise ValueError("labels must match probability rows")
    conf = P.max(axis=1)
    correct = (P.argmax(axis=1) == labels).astype(np.float64)
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    n = P.shape[0]
    for b in range(bins):
        members = idx == b
        n_b = int(members.sum())
        if n_b == 0:
            continue
        gap = abs(correct[members].mean() - conf[members].mean())
        total += (n_b / n) * gap
    return float(total)


@dataclass(frozen=True)
class BetaSweepRow:
    beta: float
    u_test: float
    factor: float
    coverage: float
    avg_size: float


def beta_sweep(
    probs,
    labels,
    calib: CalibrationResult,
    betas,
    order: float = 1.0,
    measure: str = "entropy",
) -> list[BetaSweepRow]:
    """Recompute the scaled sets for each quantile level beta (labeled diagnostic)."""
    P = check_prob_matrix(probs)
    rows = []
    values = uncertainty_values(P, measure)
    for beta in betas:
        spec = ScalingSpec(measure=measure, order=order, beta=float(beta))
        u = empirical_quantile(values, spec.beta)
        factor = scale_factor(u, spec)
        masks = ecp_set(P, calib, factor)
        rows.append(
            BetaSweepRow(
                beta=float(beta),
                u_test=u,
                factor=factor,
                coverage=coverage(masks, labels),
                avg_size=float(masks.sum(axis=1).mean()),
            )
        )
    return rows


@dataclass(frozen=True)
class ScalingOrderDiagnostic:
    """Per-alpha (u_test, tau ratio) points and their fitted log-log slope."""

    alphas: tuple[float, ...]
    u_values: tuple[float, ...]
    ratios: tuple[float, ...]
    slope: float  # nan when the fit is degenerate
    intercept: float


def scaling_order_diagnostic(
    cal_scores,
    probs_test,
    labels_test,
    alphas=DEFAULT_DIAGNOSTIC_ALPHAS,
    measure: str = "entropy",
) -> ScalingOrderDiagnostic:
    """Assemble (u_test, tau_cal/tau_test) across an error-rate grid and fit it.

    Points with a non-positive coordinate are excluded with a warning; a fit
    on fewer than two surviving points (or with no spread in u) reports a nan
    slope, meaning not applicable.
    """
    cal_scores = np.asarray(cal_scores, dtype=np.float64)
    P = check_prob_matrix(probs_test)
    scores_test = true_label_scores(P, labels_test)
    values = uncertainty_values(P, measure)
    pts_alpha, pts_u, pts_r = [], [], []
    for alpha in alphas:
        alpha = float(alpha)
        calib = calibrate(cal_scores, alpha)
        u = empirical_quantile(values, 1.0 - alpha)
        diag = tau_test_diagnostic(scores_test, alpha, calib.tau)
        ratio = diag.ratio
        if not (u > 0 and math.isfinite(ratio) and ratio > 0):
            warnings.warn(
                f"alpha={alpha}: excluded non-positive point (u={u}, ratio={ratio})"
            )
            continue
        pts_alpha.append(alpha)
        pts_u.append(u)
        pts_r.append(ratio)
    slope, intercept = math.nan, math.nan
    if len(pts_u) >= 2:
        try:
            slope, intercept = linear_fit_loglog(pts_u, pts_r)
        except ValueError:
            pass  # no spread in u: report not-applicable
    return ScalingOrderDiagnostic(
        alphas=tuple(pts_alpha),
        u_values=tuple(pts_u),
        ratios=tuple(pts_r),
        slope=slope,
        intercept=intercept,
    )


@dataclass
class PointRecords:
    """Per-point evaluation trace in arrival order."""

    covered: np.ndarray
    set_size: np.ndarray
    severity: np.ndarray | None = None
    u_test: np.ndarray | None = None


@dataclass
class EvalReport:
    """Headline metrics of one (method, dataset, seed) run."""

    method: str
    alpha: float
    n_points: int
    coverage: float
    avg_size: float
    empty_set_rate: float
    lce: float
    lce_signed: float
    lss: float
    window: int
    ece: float = math.nan
    u_test: float = math.nan
    factor: float = math.nan
    tau: float = math.nan
    quantile_mode: str = ""
    records: PointRecords | None = None


def build_report(
    method: str,
    alpha: float,
    masks,
    labels,
    window: int = DEFAULT_WINDOW,
    probs=None,
    severity=None,
    u_used=None,
    u_test: float = math.nan,
    factor: float = math.nan,
    tau: float = math.nan,
    quantile_mode: str = "",
    keep_records: bool = False,
) -> EvalReport:
    """Assemble an EvalReport; window metrics are nan when fewer than ``window`` points."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    labels = np.asarray(labels, dtype=np.int64)
    flags = covered_flags(masks, labels)
    sizes = masks.sum(axis=1)
    n = masks.shape[0]
    target = 1.0 - alpha
    if n >= window:
        lce = worst_window(flags.astype(float), window, target, "lce")
        lce_signed = worst_window(flags.astype(float), window, target, "lce", signed=True)
        lss = worst_window(sizes.astype(float), window, kind="lss")
    else:
        lce = lce_signed = lss = math.nan
    report = EvalReport(
        method=method,
        alpha=float(alpha),
        n_points=n,
        coverage=float(flags.mean()),
        avg_size=float(sizes.mean()),
        empty_set_rate=float((sizes == 0).mean()),
        lce=lce,
        lce_signed=lce_signed,
        lss=lss,
        window=window,
        ece=ece(probs, labels) if probs is not None else math.nan,
        u_test=u_test,
        factor=factor,
        tau=tau,
        quantile_mode=quantile_mode,
    )
    if keep_records:
        report.records = PointRecords(
            covered=flags,
            set_size=sizes,
            severity=None if severity is None else np.asarray(severity, dtype=np.int64),
            u_test=None if u_used is None else np.asarray(u_used, dtype=np.float64),
        )
    return report
