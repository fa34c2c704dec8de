"""Entropy-scaled prediction sets.

Under distribution shift the true label's softmax score drops while the
model's predictive uncertainty rises, so a threshold calibrated in
distribution under-covers. The remedy implemented here multiplies every test
score by a single batch-level inflation factor before thresholding:

    factor = max(1, u^p),   u = beta-quantile of per-point uncertainty,

with the uncertainty measured on the unlabeled test batch alone. beta
defaults to the target coverage 1 - alpha, p=1 is linear scaling, p=2
quadratic. Because factor >= 1, the scaled set always contains the plain
threshold set.

``tau_test_diagnostic`` is the labeled post-hoc companion: it recomputes the
threshold the test data would have wanted and reports how far the calibrated
one overshoots it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .conformal import CalibrationResult, calibrate, true_label_scores
from .numeric import check_prob_matrix, empirical_quantile, entropy

UNCERTAINTY_MEASURES = ("entropy", "softmax_variance", "one_minus_max")


@dataclass(frozen=True)
class ScalingSpec:
    """How to turn a test batch into one inflation factor."""

    measure: str = "entropy"
    order: float = 1.0
    beta: float = 0.9

    def __post_init__(self):
        if self.measure not in UNCERTAINTY_MEASURES:
            raise ValueError(f"unknown uncertainty measure {self.measure!r}")
        if not self.order >= 1.0:
            raise ValueError("scaling order must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must be in (0, 1)")

    @classmethod
    def for_alpha(cls, alpha: float, order: float = 1.0, measure: str = "entropy"):
        """Default hyperparameter choice: beta equal to the target coverage."""
        return cls(measure=measure, order=order, beta=1.0 - alpha)


@dataclass(frozen=True)
class EntropyProfile:
    """Per-point uncertainty values with their beta-quantile."""

    values: np.ndarray
    u_test: float
    spec: ScalingSpec

    @property
    def factor(self) -> float:
        return scale_factor(self.u_test, self.spec)


def uncertainty_values(probs, measure: str = "entropy") -> np.ndarray:
    """Per-row uncertainty of probability rows.

    entropy: -sum p ln p; softmax_variance: population variance of the k
    entries; one_minus_max: 1 - max_j p_j. All three are nonnegative.
    """
    P = check_prob_matrix(probs)
    if measure == "entropy":
        return np.asarray(entropy(P), dtype=np.float64).reshape(P.shape[0])
    if measure == "softmax_variance":
        return P.var(axis=1)
    if measure == "one_minus_max":
        return 1.0 - P.max(axis=1)
    raise ValueError(f"unknown uncertainty measure {measure!r}")


def entropy_quantile(values, beta: float) -> float:
    """beta-level order-statistic quantile of uncertainty values."""
    return empirical_quantile(values, beta)


def profile(probs, spec: ScalingSpec) -> EntropyProfile:
    values = uncertainty_values(probs, spec.measure)
    return EntropyProfile(values=values, u_test=entropy_quantile(values, spec.beta), spec=spec)


def scale_factor(u_test: float, spec: ScalingSpec) -> float:
    """max(1, u^p): the polynomial is applied before the clamp."""
    if u_test < 0:
        raise ValueError("uncertainty quantile must be nonnegative")
    return max(1.0, float(u_test) ** spec.order)


def ecp_set(probs, calib: CalibrationResult | float, factor: float) -> np.ndarray:
    """Scaled threshold rule: keep classes with p[y] * factor >= tau."""
    if not factor >= 1.0:
        raise ValueError("inflation factor must be >= 1")
    tau = calib.tau if isinstance(calib, CalibrationResult) else float(calib)
    P = check_prob_matrix(probs)
    mask = P * factor >= tau
    return mask[0] if np.asarray(probs).ndim == 1 else mask


@dataclass(frozen=True)
class TauTestDiagnostic:
    """Post-hoc threshold comparison on labeled shifted data.

    ``tau_test`` mirrors the calibration convention (the alpha*(1 - 1/N)
    order statistic of the true-label scores), so the no-shift ratio is 1.
    ``tau_test_upper`` is the other reading of "the (1 - alpha)-quantile"
    (the upper order statistic); both are reported because the orientation
    is genuinely ambiguous for positively oriented scores.
    """

    tau_test: float
    ratio: float
    tau_test_upper: float
    ratio_upper: float


def tau_test_diagnostic(
    true_label_test_scores, alpha: float, tau_cal: float
) -> TauTestDiagnostic:
    scores = np.asarray(true_label_test_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ValueError("need at least one true-label score")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    n = scores.shape[0]
    level = alpha * (1.0 - 1.0 / n)
    tau_test = float(scores.min()) if level <= 0.0 else empirical_quantile(scores, level)
    tau_upper = empirical_quantile(scores, 1.0 - alpha) if alpha < 1.0 else float(scores.min())
    ratio = tau_cal / tau_test if tau_test > 0 else math.inf
    ratio_upper = tau_cal / tau_upper if tau_upper > 0 else math.inf
    return TauTestDiagnostic(tau_test, ratio, tau_upper, ratio_upper)


class EntropyScaledConformal(BaseEstimator):
    """Calibrated threshold plus batch-level uncertainty scaling.

    fit() calibrates on in-distribution probabilities and labels;
    predict_set() measures uncertainty on the (unlabeled) test rows it is
    given, forms the inflation factor, and thresholds the scaled scores.
    """

    def __init__(
        self,
        alpha: float = 0.1,
        order: float = 1.0,
        beta: float | None = None,
        measure: str = "entropy",
    ):
        self.alpha = alpha
        self.order = order
        self.beta = beta
        self.measure = measure

    def _spec(self) -> ScalingSpec:
        beta = 1.0 - self.alpha if self.beta is None else self.beta
        return ScalingSpec(measure=self.measure, order=self.order, beta=beta)

    def fit(self, probs, labels):
        self.result_ = calibrate(true_label_scores(probs, labels), self.alpha)
        return self

    def _check_fitted(self) -> CalibrationResult:
        if not hasattr(self, "result_"):
            raise NotFittedError("calibrate before predicting sets")
        return self.result_

    def test_profile(self, probs) -> EntropyProfile:
        self._check_fitted()
        return profile(probs, self._spec())

    def predict_set(self, probs) -> np.ndarray:
        calib = self._check_fitted()
        prof = profile(probs, self._spec())
        return ecp_set(probs, calib, prof.factor)
