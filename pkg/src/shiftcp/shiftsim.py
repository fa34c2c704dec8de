"""Synthetic classification data with severity-graded covariate corruptions.

Class means sit on a sphere of the requested radius (orthogonal directions
whenever k <= d), samples are isotropic Gaussians around their mean, and
labels are balanced to within one count. Four corruption families emulate a
noise / digital / weather-like / blur-like split at severities 0..5, where
severity 0 is exactly the identity and the magnitude constants are fixed so
that severity 5 roughly halves the default model's clean accuracy:

    additive_noise: x + 0.25 * s * stddev * N(0, I)
    contrast:       x * (1 - 0.15 * s)
    mean_shift:     x + 0.3 * s * separation * u   (u a seeded unit vector)
    rotation:       rotate a seeded random 2-plane by 15 * s degrees

Corruptions never touch labels. Streams chain segments, each with a kind
sampled from a pool and a severity from the schedule: stationary(s) repeats
one severity, "gradual" cycles 1,2,3,4,5,5,4,3,2,1, "sudden" alternates 1,5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset
from .numeric import rng_from_seed

CORRUPTION_KINDS = ("additive_noise", "contrast", "mean_shift", "rotation")
SCHEDULE_MODES = ("stationary", "gradual", "sudden")

NOISE_SCALE = 0.25
CONTRAST_SCALE = 0.15
MEAN_SHIFT_SCALE = 0.3
ROTATION_DEGREES = 15.0

GRADUAL_CYCLE = (1, 2, 3, 4, 5, 5, 4, 3, 2, 1)
SUDDEN_CYCLE = (1, 5)


@dataclass(frozen=True)
class SyntheticSpec:
    """``distribution_seed`` fixes the class means (the population); ``seed``
    drives the per-split sampling noise. Splits of one experiment share the
    former and vary the latter."""

    n_classes: int = 8
    n_features: int = 16
    n_samples: int = 1000
    separation: float = 2.5
    stddev: float = 1.0
    seed: int = 0
    distribution_seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.n_features < 2:
            raise ValueError("need k >= 2 classes and d >= 2 features")
        if self.n_samples < 1:
            raise ValueError("need at least one sample")
        if self.separation <= 0 or self.stddev <= 0:
            raise ValueError("separation and stddev must be positive")


@dataclass(frozen=True)
class Corruption:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0 <= self.severity <= 5:
            raise ValueError("severity must be an integer in 0..5")


@dataclass(frozen=True)
class ShiftSchedule:
    mode: str = "stationary"
    severity: int = 0  # stationary only
    segment_length: int = 500
    pool: tuple[str, ...] = CORRUPTION_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not 0 <= self.severity <= 5:
            raise ValueError("severity must be in 0..5")
        if self.segment_length < 1:
            raise ValueError("segment length must be positive")
        if not self.pool or any(k not in CORRUPTION_KINDS for k in self.pool):
            raise ValueError("corruption pool must name known kinds")

    def severity_at(self, segment_index: int) -> int:
        if self.mode == "stationary":
            return self.severity
        if self.mode == "gradual":
            return GRADUAL_CYCLE[segment_index % len(GRADUAL_CYCLE)]
        return SUDDEN_CYCLE[segment_index % len(SUDDEN_CYCLE)]


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Mean directions on the separation sphere; orthogonal when k <= d."""
    rng = rng_from_seed(spec.distribution_seed)
    raw = rng.standard_normal((spec.n_features, spec.n_classes))
    if spec.n_classes <= spec.n_features:
        q, _ = np.linalg.qr(raw)
        directions = q[:, : spec.n_classes].T
    else:
        directions = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return spec.separation * directions


def generate(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian blobs with labels balanced to within one."""
    rng = rng_from_seed(spec.seed)
    means = class_means(spec)
    base, extra = divmod(spec.n_samples, spec.n_classes)
    counts = np.full(spec.n_classes, base)
    counts[:extra] += 1
    y = np.repeat(np.arange(spec.n_classes), counts)
    rng.shuffle(y)
    X = means[y] + spec.stddev * rng.standard_normal((spec.n_samples, spec.n_features))
    return Dataset(X, y, n_classes=spec.n_classes)


def corrupt(
    data: Dataset,
    corruption: Corruption,
    seed: int = 0,
    stddev: float = 1.0,
    separation: float = 3.0,
) -> Dataset:
    """Label-preserving covariate corruption; severity 0 returns an exact copy.

    ``stddev`` and ``separation`` are the generating scales the magnitudes are
    relative to (pass the SyntheticSpec values for synthetic data).
    """
    s = corruption.severity
    X = data.X.copy()
    if s == 0:
        return Dataset(X, data.y.copy(), n_classes=data.n_classes)
    rng = rng_from_seed(seed)
    d = X.shape[1]
    if corruption.kind == "additive_noise":
        X = X + NOISE_SCALE * s * stddev * rng.standard_normal(X.shape)
    elif corruption.kind == "contrast":
        X = X * (1.0 - CONTRAST_SCALE * s)
    elif corruption.kind == "mean_shift":
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        X = X + MEAN_SHIFT_SCALE * s * separation * u
    elif corruption.kind == "rotation":
        basis = np.linalg.qr(rng.standard_normal((d, 2)))[0]
        e1, e2 = basis[:, 0], basis[:, 1]
        theta = np.deg2rad(ROTATION_DEGREES * s)
        c1 = X @ e1
        c2 = X @ e2
        X = (
            X
            + np.outer(c1 * (np.cos(theta) - 1) - c2 * np.sin(theta), e1)
            + np.outer(c1 * np.sin(theta) + c2 * (np.cos(theta) - 1), e2)
        )
    return Dataset(X, data.y.copy(), n_classes=data.n_classes)


@dataclass
class ShiftStream:
    """An ordered corrupted sample stream with its severity/kind trace."""

    X: np.ndarray
    y: np.ndarray
    severity: np.ndarray
    kind: list[str]
    n_classes: int
    segment_length: int

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self.X[i], int(self.y[i]), int(self.severity[i]), self.kind[i]


def schedule_stream(
    spec: SyntheticSpec, schedule: ShiftSchedule, total_points: int
) -> ShiftStream:
    """Emit ``total_points`` samples segment by segment.

    Each segment samples one corruption kind from the pool and applies the
    schedule's severity for that segment to freshly generated clean points.
    """
    if total_points < 1:
        raise ValueError("need at least one stream point")
    master = rng_from_seed(schedule.seed)
    xs, ys, sevs, kinds = [], [], [], []
    emitted = 0
    segment = 0
    while emitted < total_points:
        take = min(schedule.segment_length, total_points - emitted)
        kind = schedule.pool[int(master.integers(len(schedule.pool)))]
        gen_seed = int(master.integers(2**63))
        cor_seed = int(master.integers(2**63))
        severity = schedule.severity_at(segment)
        clean = generate(
            SyntheticSpec(
                n_classes=spec.n_classes,
                n_features=spec.n_features,
                n_samples=take,
                separation=spec.separation,
                stddev=spec.stddev,
                seed=gen_seed,
                distribution_seed=spec.distribution_seed,
            )
        )
        shifted = corrupt(
            clean,
            Corruption(kind, severity),
            seed=cor_seed,
            stddev=spec.stddev,
            separation=spec.separation,
        )
        xs.append(shifted.X)
        ys.append(shifted.y)
        sevs.append(np.full(take, severity, dtype=np.int64))
        kinds.extend([kind] * take)
        emitted += take
        segment += 1
    return ShiftStream(
        X=np.vstack(xs),
        y=np.concatenate(ys),
        severity=np.concatenate(sevs),
        kind=kinds,
        n_classes=spec.n_classes,
        segment_length=schedule.segment_length,
    )
