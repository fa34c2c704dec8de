"""Test-time adaptation by entropy minimization, and its conformal couplings.

Two batch updates are provided. The plain variant ("tent") takes one
SGD-with-momentum step on the unweighted mean prediction entropy of each
batch. The filtered variant ("eta") first drops unreliable samples (entropy
at or above a margin), then drops redundant ones (softmax output too similar
to an exponential moving average of what was already adapted on), weights the
survivors by exp(margin - entropy) so confident samples steer the update, and
takes one step on the weighted loss. Either way: exactly one gradient step
per batch, and a batch that retains nothing (or produces a non-finite
gradient) is skipped.

``eacp_offline`` runs a single adaptation pass over the test covariates,
recomputes all outputs under the adapted parameters, and emits
uncertainty-scaled sets, so a zero learning rate reproduces the unadapted
scaled sets bit for bit. ``eacp_streaming`` interleaves the two: each
arriving batch is predicted with the current parameters and the uncertainty
quantile accumulated so far, and only then used for the update, so no
sample's own adaptation influences its own prediction set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .conformal import CalibrationResult, calibrate, splitcp_set, true_label_scores
from .model import (
    ClassifierParams,
    Gradients,
    MomentumState,
    entropy_loss_and_grad,
    predict_proba,
    sgd_momentum_step,
    zero_momentum,
)
from .numeric import empirical_quantile, entropy
from .scaling import (
    EntropyProfile,
    ScalingSpec,
    ecp_set,
    profile,
    scale_factor,
    uncertainty_values,
)

TTA_METHODS = ("eta", "tent")
PARAMETER_SUBSETS = ("final_layer", "all")
QUANTILE_MODES = ("running", "window")


@dataclass(frozen=True)
class TTAConfig:
    method: str = "eta"
    learning_rate: float = 0.00025
    momentum: float = 0.9
    batch_size: int = 64
    entropy_margin: float | None = None  # None: 0.4 * ln k, resolved per model
    redundancy_epsilon: float = 0.05
    parameter_subset: str = "final_layer"

    def __post_init__(self):
        if self.method not in TTA_METHODS:
            raise ValueError(f"unknown TTA method {self.method!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.entropy_margin is not None and not self.entropy_margin > 0:
            raise ValueError("entropy margin must be positive")
        if not 0.0 <= self.redundancy_epsilon <= 1.0:
            raise ValueError("redundancy epsilon must be in [0, 1]")
        if self.parameter_subset not in PARAMETER_SUBSETS:
            raise ValueError(f"unknown parameter subset {self.parameter_subset!r}")

    def resolve_margin(self, n_classes: int) -> float:
        if self.entropy_margin is not None:
            return self.entropy_margin
        return 0.4 * math.log(n_classes)


@dataclass
class AdaptationState:
    """Mutable per-run adaptation memory (one instance per adaptation run)."""

    momentum: MomentumState
    moving_avg: np.ndarray | None = None  # EMA of retained softmax outputs
    batches_seen: int = 0
    steps_taken: int = 0
    steps_skipped: int = 0

    @classmethod
    def fresh(cls, params: ClassifierParams) -> "AdaptationState":
        return cls(momentum=zero_momentum(params))


MOVING_AVG_DECAY = 0.9


def _restrict_to_subset(grad: Gradients, subset: str) -> Gradients:
    """Zero out every layer's gradient except the last when adapting final_layer only."""
    if subset == "all" or len(grad.weights) == 1:
        return grad
    weights = tuple(
        g if i == len(grad.weights) - 1 else np.zeros_like(g)
        for i, g in enumerate(grad.weights)
    )
    biases = tuple(
        g if i == len(grad.biases) - 1 else np.zeros_like(g)
        for i, g in enumerate(grad.biases)
    )
    return Gradients(weights, biases)


def _apply_step(
    params: ClassifierParams,
    grad: Gradients,
    cfg: TTAConfig,
    state: AdaptationState,
) -> ClassifierParams:
    """One guarded optimizer step; skips (and counts) non-finite gradients."""
    if not grad.is_finite():
        state.steps_skipped += 1
        return params
    grad = _restrict_to_subset(grad, cfg.parameter_subset)
    params, state.momentum = sgd_momentum_step(
        params, grad, state.momentum, cfg.learning_rate, cfg.momentum
    )
    state.steps_taken += 1
    return params


def tent_batch_update(
    params: ClassifierParams,
    batch: np.ndarray,
    cfg: TTAConfig,
    state: AdaptationState,
) -> tuple[ClassifierParams, AdaptationState]:
    """One step on the unweighted mean batch entropy."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    _, grad = entropy_loss_and_grad(params, batch)
    params = _apply_step(params, grad, cfg, state)
    state.batches_seen += 1
    return params, state


def eta_filter_weights(
    probs: np.ndarray,
    moving_avg: np.ndarray | None,
    margin: float,
    epsilon: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample selection and weighting for the filtered update.

    Returns (keep mask, weights for kept samples). Drops samples whose
    entropy reaches the margin, then samples whose cosine similarity to the
    moving average strictly exceeds 1 - epsilon. Weights are
    exp(margin - entropy); an infinite margin degrades gracefully to
    exp(-entropy), the same weighting after normalization.
    """
    h = np.asarray(entropy(probs), dtype=np.float64).reshape(len(probs))
    keep = h < margin
    if moving_avg is not None and epsilon > 0.0:
        denom = np.linalg.norm(probs, axis=1) * np.linalg.norm(moving_avg)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosine = (probs @ moving_avg) / np.where(denom > 0, denom, 1.0)
        keep &= ~(cosine > 1.0 - epsilon)
    if math.isinf(margin):
        weights = np.exp(-h[keep])
    else:
        weights = np.exp(margin - h[keep])
    return keep, weights


def eta_batch_update(
    params: ClassifierParams,
    batch: np.ndarray,
    cfg: TTAConfig,
    state: AdaptationState,
) -> tuple[ClassifierParams, AdaptationState, int]:
    """Filtered, entropy-weighted update; returns the retained sample count."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    probs = predict_proba(params, batch)
    margin = cfg.resolve_margin(params.n_classes)
    keep, weights = eta_filter_weights(
        probs, state.moving_avg, margin, cfg.redundancy_epsilon
    )
    retained = int(keep.sum())
    if retained > 0:
        _, grad = entropy_loss_and_grad(params, batch[keep], weights)
        params = _apply_step(params, grad, cfg, state)
        batch_mean = probs[keep].mean(axis=0)
        if state.moving_avg is None:
            state.moving_avg = batch_mean
        else:
            state.moving_avg = (
                MOVING_AVG_DECAY * state.moving_avg + (1 - MOVING_AVG_DECAY) * batch_mean
            )
    state.batches_seen += 1
    return params, state, retained


def _iter_batches(X: np.ndarray, batch_size: int):
    for start in range(0, X.shape[0], batch_size):
        yield X[start : start + batch_size]


def adapt(
    params: ClassifierParams,
    X: np.ndarray,
    cfg: TTAConfig,
    state: AdaptationState | None = None,
) -> tuple[ClassifierParams, AdaptationState]:
    """Single in-order adaptation pass over covariates, one step per batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("adaptation needs at least one sample")
    state = AdaptationState.fresh(params) if state is None else state
    for batch in _iter_batches(X, cfg.batch_size):
        if cfg.method == "tent":
            params, state = tent_batch_update(params, batch, cfg, state)
        else:
            params, state, _ = eta_batch_update(params, batch, cfg, state)
    return params, state


def eacp_offline(
    params: ClassifierParams,
    X_test: np.ndarray,
    calib: CalibrationResult,
    spec: ScalingSpec,
    cfg: TTAConfig,
) -> tuple[ClassifierParams, np.ndarray, EntropyProfile]:
    """Adapt over the whole test set, then emit scaled sets under the adapted model."""
    params, _ = adapt(params, X_test, cfg)
    probs = predict_proba(params, np.atleast_2d(X_test))
    prof = profile(probs, spec)
    masks = ecp_set(probs, calib, prof.factor)
    return params, masks, prof


@dataclass
class StreamResult:
    """Per-point outcome of a streaming run, in arrival order."""

    masks: np.ndarray  # (n, k) boolean membership
    u_test: np.ndarray  # (n,) uncertainty quantile in force at prediction time
    factors: np.ndarray  # (n,) inflation factor applied
    values: np.ndarray  # (n,) per-point uncertainty under the then-current model
    retained: list[int] = field(default_factory=list)  # per batch
    quantile_mode: str = "running"
    params: ClassifierParams | None = None
    state: AdaptationState | None = None


def eacp_streaming(
    params: ClassifierParams,
    batches,
    calib: CalibrationResult,
    spec: ScalingSpec | None,
    cfg: TTAConfig,
    quantile_mode: str = "running",
    window: int = 1024,
) -> StreamResult:
    """Predict-then-adapt over a stream of covariate batches.

    Per batch: (1) probabilities and uncertainty under the current model;
    (2) the uncertainty quantile over everything seen so far (``running``)
    or the last ``window`` values (``window``); (3) scaled sets for the
    batch; (4) only then the adaptation update on that batch.

    ``spec=None`` disables scaling (factor pinned to 1), which is the plain
    threshold rule under adaptation. A zero learning rate makes this
    scaled-threshold prediction with the initial model throughout.
    """
    if quantile_mode not in QUANTILE_MODES:
        raise ValueError(f"unknown quantile mode {quantile_mode!r}")
    if window < 1:
        raise ValueError("window must be positive")
    state = AdaptationState.fresh(params)
    seen: list[np.ndarray] = []
    mask_parts, u_parts, f_parts, v_parts = [], [], [], []
    retained: list[int] = []
    n_batches = 0
    for batch in batches:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape[0] == 0:
            continue
        n_batches += 1
        probs = predict_proba(params, batch)
        if spec is not None:
            values = uncertainty_values(probs, spec.measure)
            seen.append(values)
            pool = np.concatenate(seen)
            if quantile_mode == "window":
                pool = pool[-window:]
            u = empirical_quantile(pool, spec.beta)
            factor = scale_factor(u, spec)
            mask_parts.append(ecp_set(probs, calib, factor))
        else:
            values = np.asarray(entropy(probs), dtype=np.float64).reshape(len(probs))
            u = float("nan")
            factor = 1.0
            mask_parts.append(splitcp_set(probs, calib))
        u_parts.append(np.full(batch.shape[0], u))
        f_parts.append(np.full(batch.shape[0], factor))
        v_parts.append(values)
        if cfg.method == "tent":
            params, state = tent_batch_update(params, batch, cfg, state)
        else:
            params, state, kept = eta_batch_update(params, batch, cfg, state)
            retained.append(kept)
    if n_batches == 0:
        raise ValueError("stream must contain at least one non-empty batch")
    return StreamResult(
        masks=np.vstack(mask_parts),
        u_test=np.concatenate(u_parts),
        factors=np.concatenate(f_parts),
        values=np.concatenate(v_parts),
        retained=retained,
        quantile_mode=quantile_mode,
        params=params,
        state=state,
    )


class EntropyAdaptedConformal(BaseEstimator):
    """Estimator facade over the adapt-then-scale pipeline.

    Wraps a fitted probabilistic classifier (anything with ``predict_proba``
    returning (n, k) rows and a ``params_`` attribute holding
    ClassifierParams). fit() calibrates the threshold on labeled clean
    covariates; predict_set() adapts a copy of the model on the unlabeled
    test covariates and emits the scaled sets. The wrapped classifier is
    never mutated.
    """

    def __init__(
        self,
        model,
        alpha: float = 0.1,
        order: float = 2.0,
        beta: float | None = None,
        measure: str = "entropy",
        tta: TTAConfig = TTAConfig(),
    ):
        self.model = model
        self.alpha = alpha
        self.order = order
        self.beta = beta
        self.measure = measure
        self.tta = tta

    def _spec(self) -> ScalingSpec:
        beta = 1.0 - self.alpha if self.beta is None else self.beta
        return ScalingSpec(measure=self.measure, order=self.order, beta=beta)

    def fit(self, X_cal, y_cal):
        probs = self.model.predict_proba(np.atleast_2d(X_cal))
        self.result_ = calibrate(true_label_scores(probs, y_cal), self.alpha)
        return self

    def _check_fitted(self) -> CalibrationResult:
        if not hasattr(self, "result_"):
            raise NotFittedError("calibrate before predicting sets")
        return self.result_

    def predict_set(self, X_test) -> np.ndarray:
        calib = self._check_fitted()
        params, masks, profile_ = eacp_offline(
            self.model.params_, np.atleast_2d(X_test), calib, self._spec(), self.tta
        )
        self.adapted_params_ = params
        self.last_profile_ = profile_
        return masks
