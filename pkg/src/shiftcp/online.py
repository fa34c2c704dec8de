"""A supervised online conformal baseline with label feedback.

The comparison point for label-free methods on shifting streams: after every
prediction the true label is revealed, and the working error rate moves by a
step-size gamma toward whichever direction restores the target,

    alpha_{t+1} = clamp(alpha_t + gamma * (alpha_target - err_t), 0, 1),

where err_t is 1 exactly when the emitted set missed the label. The working
threshold is re-read from the frozen calibration scores at each step:
alpha_t = 0 maps to threshold 0 (the full label set) and alpha_t = 1 to the
maximum calibration score. gamma = 0 reduces to the static threshold rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import splitcp_set
from .metrics import DEFAULT_WINDOW, EvalReport, build_report
from .numeric import check_prob_matrix, empirical_quantile


@dataclass
class OnlineState:
    """Working error rate, step size, and the frozen calibration scores."""

    alpha_t: float
    gamma: float
    cal_scores: np.ndarray

    def __post_init__(self):
        self.cal_scores = np.asarray(self.cal_scores, dtype=np.float64)
        if self.gamma <= 0 and self.gamma != 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.cal_scores.ndim != 1 or self.cal_scores.shape[0] < 2:
            raise ValueError("need at least 2 calibration scores")
        self.alpha_t = float(np.clip(self.alpha_t, 0.0, 1.0))


def aci_step(alpha_t: float, err: int, gamma: float, alpha_target: float) -> float:
    """One error-feedback update of the working error rate, clamped to [0, 1]."""
    if err not in (0, 1):
        raise ValueError("err must be 0 (covered) or 1 (missed)")
    if not 0.0 < alpha_target < 1.0:
        raise ValueError("alpha_target must be in (0, 1)")
    return float(np.clip(alpha_t + gamma * (alpha_target - err), 0.0, 1.0))


def threshold_at(cal_scores: np.ndarray, alpha_t: float) -> float:
    """Threshold for the working error rate, with the clamped endpoints."""
    if alpha_t <= 0.0:
        return 0.0
    if alpha_t >= 1.0:
        return float(cal_scores.max())
    n = cal_scores.shape[0]
    return empirical_quantile(cal_scores, alpha_t * (1.0 - 1.0 / n))


def aci_masks(
    probs, labels, cal_scores, gamma: float, alpha_target: float
) -> tuple[np.ndarray, np.ndarray]:
    """Feedback loop over (probability row, label) pairs.

    Returns the emitted set masks and the working error-rate trace (the
    alpha_t in force when each point was predicted).
    """
    P = check_prob_matrix(probs)
    if P.shape[0] < 1:
        raise ValueError("stream must be non-empty")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (P.shape[0],):
        raise ValueError("labels must match probability rows")
    state = OnlineState(alpha_t=alpha_target, gamma=gamma, cal_scores=cal_scores)
    n, k = P.shape
    masks = np.zeros((n, k), dtype=bool)
    alphas = np.zeros(n)
    for t in range(n):
        alphas[t] = state.alpha_t
        tau_t = threshold_at(state.cal_scores, state.alpha_t)
        masks[t] = splitcp_set(P[t], tau_t)
        err = 0 if masks[t, labels[t]] else 1
        state.alpha_t = aci_step(state.alpha_t, err, state.gamma, alpha_target)
    return masks, alphas


def aci_run(
    probs,
    labels,
    cal_scores,
    gamma: float,
    alpha_target: float,
    window: int = DEFAULT_WINDOW,
    keep_records: bool = False,
) -> EvalReport:
    """Run the feedback loop and summarize it as an evaluation report."""
    masks, _ = aci_masks(probs, labels, cal_scores, gamma, alpha_target)
    return build_report(
        "aci", alpha_target, masks, labels, window=window, keep_records=keep_records
    )
