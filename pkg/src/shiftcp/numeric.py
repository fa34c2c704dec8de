"""Deterministic numeric primitives shared across the package.

All functions here are pure and operate on plain numpy arrays. Probability
vectors live on the last axis, so every routine accepts a single vector of
``k`` class probabilities or a batch of ``n`` such vectors as an ``(n, k)``
matrix.

Randomness contract: nothing in this module draws random numbers. Every
stochastic routine in the package takes an explicit integer seed and builds
its own ``numpy.random.default_rng`` (PCG64) generator from it, so any run
is bit-reproducible from its seed.
"""

from __future__ import annotations

import math

import numpy as np

PROB_SUM_TOL = 1e-6


def rng_from_seed(seed: int) -> np.random.Generator:
    """The one generator construction used repo-wide (PCG64 via default_rng)."""
    return np.random.default_rng(int(seed))


def check_prob_vector(p, tol: float = PROB_SUM_TOL) -> np.ndarray:
    """Validate a single probability vector and return it as float64.

    Requires k >= 2, nonnegative entries, and a total within ``tol`` of 1.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError("probability vector must be 1-D with at least 2 classes")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector has non-finite entries")
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    if abs(float(p.sum()) - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum():.8f}, expected 1 +/- {tol}")
    return p


def check_prob_matrix(probs, tol: float = PROB_SUM_TOL) -> np.ndarray:
    """Validate a batch of probability rows; accepts one vector or an (n, k) matrix.

    Always returns a 2-D float64 array.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return check_prob_vector(probs, tol)[None, :]
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ValueError("expected an (n, k) probability matrix with k >= 2")
    if not np.all(np.isfinite(probs)):
        raise ValueError("probability matrix has non-finite entries")
    if np.any(probs < 0):
        raise ValueError("probability matrix has negative entries")
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValueError(
            f"row {bad[0]} sums to {sums[bad[0]]:.8f}, expected 1 +/- {tol}"
        )
    return probs


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, safe against overflow.

    Computes exp(z_j / T) / sum_l exp(z_l / T) after subtracting the row
    maximum. ``temperature=1`` is the plain softmax; the identity
    softmax(z, T) == softmax(z / T, 1) holds bitwise.
    """
    if not (np.isfinite(temperature) and temperature > 0):
        raise ValueError(f"temperature must be a positive finite real, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("softmax needs at least 2 classes on the last axis")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input has non-finite entries")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Log of :func:`softmax`, computed without going through small exponentials."""
    if not (np.isfinite(temperature) and temperature > 0):
        raise ValueError(f"temperature must be a positive finite real, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs) -> np.ndarray | float:
    """Shannon entropy -sum p ln p with the convention 0 * ln 0 = 0.

    Natural log, so the result lies in [0, ln k]. Accepts a vector (returns
    a float) or an (n, k) matrix (returns a length-n array).
    """
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    p = check_prob_matrix(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    h = -plogp.sum(axis=1)
    h = np.maximum(h, 0.0)
    return float(h[0]) if single else h


def empirical_quantile(values, level: float) -> float:
    """Order-statistic quantile: the m-th smallest value with m = ceil(level * n).

    No interpolation, 1-indexed, deterministic under ties. ``level`` must be
    in (0, 1]; ``level=1`` returns the maximum.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("values must be a 1-D vector")
    n = v.shape[0]
    if n == 0:
        raise ValueError("cannot take a quantile of an empty vector")
    if not (0.0 < level <= 1.0):
        raise ValueError(f"quantile level must be in (0, 1], got {level}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values contain non-finite entries")
    m = int(math.ceil(level * n))
    m = min(max(m, 1), n)
    return float(np.sort(v)[m - 1])


def linear_fit_loglog(u, r) -> tuple[float, float]:
    """Ordinary least squares of ln(r) on ln(u); returns (slope, intercept).

    Both coordinate vectors must be strictly positive with at least 2 points.
    """
    u = np.asarray(u, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if u.ndim != 1 or r.ndim != 1 or u.shape != r.shape:
        raise ValueError("u and r must be 1-D vectors of equal length")
    if u.shape[0] < 2:
        raise ValueError("log-log fit needs at least 2 points")
    if np.any(~np.isfinite(u)) or np.any(~np.isfinite(r)) or np.any(u <= 0) or np.any(r <= 0):
        raise ValueError("log-log fit needs strictly positive finite coordinates")
    x = np.log(u)
    y = np.log(r)
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise ValueError("log-log fit is degenerate: all u values identical")
    slope = float(xc @ (y - y.mean())) / denom
    intercept = float(y.mean() - slope * x.mean())
    return slope, intercept
