"""A small differentiable softmax classifier with hand-written gradients.

Two architectures: a linear-softmax model and a one-hidden-layer tanh MLP.
Forward passes apply the stored temperature; supervised training always
optimizes cross-entropy at temperature 1 (temperature is an inference-time
knob, never a trainable parameter).

The gradient of the prediction-entropy loss is analytic. With p = softmax(z/T)
and h = -sum p ln p, the per-logit derivative is

    dh/dz = -(1/T) * p * (ln p + h)

which backpropagates through the (optional) tanh hidden layer in the usual
way. Correctness is pinned against central finite differences in the tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DataFormatError, NumericError
from .numeric import log_softmax, rng_from_seed, softmax

ARCHITECTURES = ("linear", "mlp")


@dataclass(frozen=True)
class ClassifierParams:
    """Weights/biases per layer plus the inference temperature.

    linear: weights = (W,) with W of shape (k, d).
    mlp:    weights = (W1, W2) with shapes (H, d) and (k, H), tanh between.
    """

    architecture: str
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    temperature: float = 1.0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        expected_layers = 1 if self.architecture == "linear" else 2
        if len(self.weights) != expected_layers or len(self.biases) != expected_layers:
            raise ValueError(f"{self.architecture} model needs {expected_layers} layer(s)")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shapes inconsistent")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("parameters contain non-finite entries")
        if self.architecture == "mlp" and self.weights[1].shape[1] != self.weights[0].shape[0]:
            raise ValueError("hidden layer widths inconsistent")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be a positive finite real")

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def with_temperature(self, temperature: float) -> "ClassifierParams":
        return replace(self, temperature=float(temperature))


@dataclass(frozen=True)
class Gradients:
    """Gradient arrays shape-matched to a ClassifierParams."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass(frozen=True)
class MomentumState:
    """SGD momentum buffers, shape-matched to the owning parameters."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass
class Dataset:
    """Labeled covariates: X is (n, d), y holds integer labels in [0, n_classes)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("covariates must be a non-empty (n, d) matrix")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("labels must be a vector matching the covariate rows")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("covariates contain non-finite entries")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    architecture: str = "linear"
    hidden_units: int = 32
    temperature: float = 1.0


def init_params(
    architecture: str,
    n_features: int,
    n_classes: int,
    hidden_units: int = 32,
    temperature: float = 1.0,
    seed: int = 0,
) -> ClassifierParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases."""
    rng = rng_from_seed(seed)
    if architecture == "linear":
        dims = [(n_classes, n_features)]
    elif architecture == "mlp":
        dims = [(hidden_units, n_features), (n_classes, hidden_units)]
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    weights, biases = [], []
    for out_dim, in_dim in dims:
        bound = 1.0 / math.sqrt(in_dim)
        weights.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return ClassifierParams(architecture, tuple(weights), tuple(biases), float(temperature))


def logits(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Raw class scores before the temperature softmax. X is (n, d) or (d,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.n_features:
        raise ValueError(
            f"expected {params.n_features} features, got {X.shape[1]}"
        )
    if params.architecture == "linear":
        return X @ params.weights[0].T + params.biases[0]
    hidden = np.tanh(X @ params.weights[0].T + params.biases[0])
    return hidden @ params.weights[1].T + params.biases[1]


def predict_proba(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Softmax outputs at the stored temperature; (d,) input gives a (k,) vector."""
    single = np.asarray(X).ndim == 1
    p = softmax(logits(params, X), params.temperature)
    return p[0] if single else p


def entropy_loss_and_grad(
    params: ClassifierParams,
    X: np.ndarray,
    sample_weights: np.ndarray | None = None,
) -> tuple[float, Gradients]:
    """Weighted mean prediction entropy and its analytic parameter gradient.

    loss = sum_i w_i h(x_i) / sum_i w_i. Weights must be nonnegative with a
    positive total; ``None`` means uniform. Temperature enters as a fixed
    constant (the 1/T factor in the logit gradient), never as a variable.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError("sample_weights length must match the batch")
        if np.any(w < 0):
            raise ValueError("sample_weights must be nonnegative")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("sample_weights must not be all zero")

    T = params.temperature
    z = logits(params, X)
    logp = log_softmax(z, T)
    p = np.exp(logp)
    plogp = np.where(p > 0, p * logp, 0.0)
    h = -plogp.sum(axis=1)
    loss = float((w * h).sum() / total)

    # dh/dz = -(1/T) p (log p + h); weighted-mean combination per sample.
    coeff = (w / total)[:, None]
    g_z = -(1.0 / T) * p * (logp + h[:, None]) * coeff
    return loss, _backprop_from_logit_grad(params, X, g_z)


def _backprop_from_logit_grad(
    params: ClassifierParams, X: np.ndarray, g_z: np.ndarray
) -> Gradients:
    if params.architecture == "linear":
        return Gradients(weights=(g_z.T @ X,), biases=(g_z.sum(axis=0),))
    hidden = np.tanh(X @ params.weights[0].T + params.biases[0])
    gW2 = g_z.T @ hidden
    gb2 = g_z.sum(axis=0)
    g_hidden = (g_z @ params.weights[1]) * (1.0 - hidden**2)
    gW1 = g_hidden.T @ X
    gb1 = g_hidden.sum(axis=0)
    return Gradients(weights=(gW1, gW2), biases=(gb1, gb2))


def cross_entropy_loss_and_grad(
    params: ClassifierParams, X: np.ndarray, y: np.ndarray
) -> tuple[float, Gradients]:
    """Mean cross-entropy at temperature 1 (training objective)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    z = logits(params, X)
    logp = log_softmax(z, 1.0)
    loss = float(-logp[np.arange(n), y].mean())
    g_z = np.exp(logp)
    g_z[np.arange(n), y] -= 1.0
    g_z /= n
    return loss, _backprop_from_logit_grad(params, X, g_z)


def zero_momentum(params: ClassifierParams) -> MomentumState:
    return MomentumState(
        weights=tuple(np.zeros_like(W) for W in params.weights),
        biases=tuple(np.zeros_like(b) for b in params.biases),
    )


def sgd_momentum_step(
    params: ClassifierParams,
    grad: Gradients,
    state: MomentumState,
    learning_rate: float,
    momentum: float,
) -> tuple[ClassifierParams, MomentumState]:
    """v <- momentum*v + g; theta <- theta - lr*v. Purely functional."""
    if len(grad.weights) != len(params.weights):
        raise ValueError("gradient layer count does not match parameters")
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for W, b, gW, gb, vW, vb in zip(
        params.weights, params.biases, grad.weights, grad.biases, state.weights, state.biases
    ):
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ValueError("gradient shapes do not match parameters")
        vW2 = momentum * vW + gW
        vb2 = momentum * vb + gb
        new_w.append(W - learning_rate * vW2)
        new_b.append(b - learning_rate * vb2)
        vel_w.append(vW2)
        vel_b.append(vb2)
    out = ClassifierParams(
        params.architecture, tuple(new_w), tuple(new_b), params.temperature
    )
    return out, MomentumState(tuple(vel_w), tuple(vel_b))


def train_supervised(data: Dataset, config: TrainConfig = TrainConfig()) -> ClassifierParams:
    """Mini-batch SGD with momentum on mean cross-entropy; bit-reproducible per seed."""
    if np.unique(data.y).size < 2:
        warnings.warn("training data contains a single class; proceeding anyway")
    rng = rng_from_seed(config.seed)
    params = init_params(
        config.architecture,
        data.X.shape[1],
        data.n_classes,
        hidden_units=config.hidden_units,
        temperature=config.temperature,
        seed=config.seed,
    )
    state = zero_momentum(params)
    n = len(data)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = cross_entropy_loss_and_grad(params, data.X[idx], data.y[idx])
            if not (math.isfinite(loss) and grad.is_finite()):
                raise NumericError("training diverged: non-finite loss or gradient")
            try:
                params, state = sgd_momentum_step(
                    params, grad, state, config.learning_rate, config.momentum
                )
            except ValueError as exc:  # parameter overflow to inf/nan
                raise NumericError(f"training diverged: {exc}") from None
    return params


def accuracy(params: ClassifierParams, data: Dataset) -> float:
    return float((predict_proba(params, data.X).argmax(axis=1) == data.y).mean())


# ---------------------------------------------------------------------------
# checkpoint file format
#
# line 1: architecture tag ("linear" or "mlp")
# line 2: dimensions, space-separated ("d k" for linear, "d H k" for mlp)
# line 3: temperature
# then one value per line: layer-0 weight row-major, layer-0 bias,
# then (mlp only) layer-1 weight row-major, layer-1 bias.
# Values are written with 17 significant digits so reloads are bit-exact.
# ---------------------------------------------------------------------------


def save_checkpoint(params: ClassifierParams, path) -> None:
    lines = [params.architecture]
    if params.architecture == "linear":
        lines.append(f"{params.n_features} {params.n_classes}")
    else:
        lines.append(
            f"{params.n_features} {params.weights[0].shape[0]} {params.n_classes}"
        )
    lines.append(f"{params.temperature:.17g}")
    for W, b in zip(params.weights, params.biases):
        lines.extend(f"{v:.17g}" for v in W.ravel())
        lines.extend(f"{v:.17g}" for v in b)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> ClassifierParams:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 4:
        raise DataFormatError(f"{path}: truncated checkpoint")
    arch = lines[0]
    if arch not in ARCHITECTURES:
        raise DataFormatError(f"{path}: unknown architecture tag {arch!r}")
    try:
        dims = [int(tok) for tok in lines[1].split()]
        temperature = float(lines[2])
        values = np.array([float(v) for v in lines[3:]])
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed checkpoint: {exc}") from None
    if arch == "linear":
        if len(dims) != 2:
            raise DataFormatError(f"{path}: linear checkpoint needs 2 dimensions")
        d, k = dims
        shapes = [(k, d)]
    else:
        if len(dims) != 3:
            raise DataFormatError(f"{path}: mlp checkpoint needs 3 dimensions")
        d, hidden, k = dims
        shapes = [(hidden, d), (k, hidden)]
    expected = sum(o * i + o for o, i in shapes)
    if values.size != expected:
        raise DataFormatError(
            f"{path}: expected {expected} parameter values, found {values.size}"
        )
    weights, biases, pos = [], [], 0
    for out_dim, in_dim in shapes:
        weights.append(values[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim))
        pos += out_dim * in_dim
        biases.append(values[pos : pos + out_dim])
        pos += out_dim
    try:
        return ClassifierParams(arch, tuple(weights), tuple(biases), temperature)
    except ValueError as exc:
        raise DataFormatError(f"{path}: invalid checkpoint: {exc}") from None


class SoftmaxClassifier(BaseEstimator):
    """Estimator facade over the functional training/prediction routines.

    Follows the usual fit/predict_proba/predict surface so the model slots
    into pipelines and the conformal wrappers below it.
    """

    def __init__(
        self,
        architecture: str = "linear",
        hidden_units: int = 32,
        epochs: int = 30,
        batch_size: int = 64,
        learning_rate: float = 0.1,
        momentum: float = 0.9,
        temperature: float = 1.0,
        seed: int = 0,
    ):
        self.architecture = architecture
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.temperature = temperature
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.seed,
            architecture=self.architecture,
            hidden_units=self.hidden_units,
            temperature=self.temperature,
        )

    def fit(self, X, y, n_classes: int | None = None):
        y = np.asarray(y, dtype=np.int64)
        k = int(n_classes if n_classes is not None else y.max() + 1)
        data = Dataset(np.asarray(X, dtype=np.float64), y, n_classes=k)
        self.params_ = train_supervised(data, self._train_config())
        return self

    def _check_fitted(self) -> ClassifierParams:
        if not hasattr(self, "params_"):
            raise NotFittedError("fit the classifier before predicting")
        return self.params_

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self._check_fitted(), X)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(np.atleast_2d(X)).argmax(axis=1)
