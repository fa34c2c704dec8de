"""Split conformal prediction for classification.

The score of label y at covariate x is the softmax entry p[y] (positively
oriented: bigger score means more plausible). Calibration picks the threshold
tau as the alpha*(1 - 1/n) order-statistic quantile of the true-label scores
on a held-out calibration split; prediction sets keep every class whose score
clears tau.

Prediction sets are represented as boolean membership arrays over classes:
shape (k,) for one point, (n, k) for a batch. ``set_members`` converts a mask
to the sorted index list, ``set_sizes`` counts members row-wise. Threshold
sets may be empty; the cumulative-softmax baseline never is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .numeric import check_prob_matrix, empirical_quantile

# Slack for cumulative-sum comparisons: nine uniform 0.1 entries sum to
# 0.8999999999999999, which must still count as reaching 0.9.
_CUMSUM_TOL = 1e-9


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated threshold tau with the error rate and sample size behind it."""

    tau: float
    alpha: float
    n_cal: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.n_cal < 2:
            raise ValueError("calibration needs at least 2 scores")


def score(p, y: int) -> float:
    """Softmax score of candidate label y: the y-th entry of p."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("score takes a single probability vector")
    if not 0 <= int(y) < p.shape[0]:
        raise ValueError(f"label {y} out of range for {p.shape[0]} classes")
    return float(p[int(y)])


def true_label_scores(probs, labels) -> np.ndarray:
    """Row-wise scores of the true labels: probs[i, labels[i]]."""
    probs = check_prob_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise ValueError("labels must match probability rows")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("labels out of range")
    return probs[np.arange(probs.shape[0]), labels]


def calibrate(cal_scores, alpha: float) -> CalibrationResult:
    """Threshold at the alpha*(1 - 1/n) empirical quantile of calibration scores."""
    cal_scores = np.asarray(cal_scores, dtype=np.float64)
    if cal_scores.ndim != 1 or cal_scores.shape[0] < 2:
        raise ValueError("calibration needs at least 2 scores")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if np.any(cal_scores < 0) or np.any(cal_scores > 1):
        raise ValueError("scores must lie in [0, 1] (softmax entries)")
    n = cal_scores.shape[0]
    level = alpha * (1.0 - 1.0 / n)
    tau = empirical_quantile(cal_scores, level)
    return CalibrationResult(tau=tau, alpha=float(alpha), n_cal=n)


def splitcp_set(probs, calib: CalibrationResult | float) -> np.ndarray:
    """Threshold rule: keep classes with p[y] >= tau. May be empty."""
    tau = calib.tau if isinstance(calib, CalibrationResult) else float(calib)
    p = check_prob_matrix(probs)
    mask = p >= tau
    return mask[0] if np.asarray(probs).ndim == 1 else mask


def naive_set(probs, alpha: float) -> np.ndarray:
    """Cumulative-softmax rule: take classes by descending probability until
    the running total first reaches 1 - alpha. Ties break toward the smaller
    class index; the set is never empty.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    single = np.asarray(probs).ndim == 1
    p = check_prob_matrix(probs)
    n, k = p.shape
    order = np.argsort(-p, axis=1, kind="stable")
    sorted_p = np.take_along_axis(p, order, axis=1)
    csum = np.cumsum(sorted_p, axis=1)
    reached = csum >= (1.0 - alpha) - _CUMSUM_TOL
    counts = np.where(reached.any(axis=1), reached.argmax(axis=1) + 1, k)
    mask = np.zeros((n, k), dtype=bool)
    within = np.arange(k)[None, :] < counts[:, None]
    np.put_along_axis(mask, order, within, axis=1)
    return mask[0] if single else mask


def set_members(mask) -> np.ndarray:
    """Sorted class indices of a single set mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1:
        raise ValueError("set_members takes one mask; index batches first")
    return np.flatnonzero(mask)


def set_sizes(masks) -> np.ndarray:
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    return masks.sum(axis=1)


class SplitConformalClassifier(BaseEstimator):
    """Calibrate-then-threshold wrapper over any probabilistic classifier's output.

    fit() consumes calibration probabilities and labels; predict_set() emits
    boolean membership masks for new probability rows.
    """

    def __init__(self, alpha: float = 0.1):
        self.alpha = alpha

    def fit(self, probs, labels):
        self.result_ = calibrate(true_label_scores(probs, labels), self.alpha)
        self.tau_ = self.result_.tau
        return self

    def _check_fitted(self) -> CalibrationResult:
        if not hasattr(self, "result_"):
            raise NotFittedError("calibrate before predicting sets")
        return self.result_

    def predict_set(self, probs) -> np.ndarray:
        return splitcp_set(probs, self._check_fitted())
