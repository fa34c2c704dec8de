"""Shared per-seed materials for the acceptance suite.

Twenty independent replications of the headline protocol: per seed, a fresh
synthetic population (class means), a clean-trained base model at the
experiment default temperature, a calibrated threshold, a clean test split,
and additive-noise corruptions of it at severities 1..5.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from shiftcp.conformal import CalibrationResult, calibrate, true_label_scores
from shiftcp.model import ClassifierParams, TrainConfig, predict_proba, train_supervised
from shiftcp.shiftsim import Corruption, SyntheticSpec, corrupt, generate

N_SEEDS = 20
ALPHA = 0.1
K, D = 8, 16
N_TRAIN, N_CAL, N_TEST = 2000, 2000, 5000
SEPARATION, STDDEV = 2.5, 1.0
TEMPERATURE = 3.0
EPOCHS = 25


@dataclass
class SeedRun:
    seed: int
    params: ClassifierParams
    calib: CalibrationResult
    cal_scores: np.ndarray
    test_X: dict  # severity -> covariates (additive_noise)
    test_y: np.ndarray
    probs: dict  # severity -> model outputs on test_X[severity]


@dataclass
class Bundle:
    runs: list
    build_seconds: float


def _build_seed(seed: int) -> SeedRun:
    def spec(n, sample_seed):
        return SyntheticSpec(
            n_classes=K, n_features=D, n_samples=n, separation=SEPARATION,
            stddev=STDDEV, seed=sample_seed, distribution_seed=seed,
        )

    train = generate(spec(N_TRAIN, seed * 101 + 1))
    params = train_supervised(
        train, TrainConfig(epochs=EPOCHS, seed=seed, architecture="mlp", hidden_units=32)
    ).with_temperature(TEMPERATURE)
    cal = generate(spec(N_CAL, seed * 101 + 2))
    cal_scores = true_label_scores(predict_proba(params, cal.X), cal.y)
    calib = calibrate(cal_scores, ALPHA)
    clean = generate(spec(N_TEST, seed * 101 + 3))
    test_X, probs = {}, {}
    for severity in range(6):
        shifted = corrupt(
            clean, Corruption("additive_noise", severity), seed=seed * 101 + 4,
            stddev=STDDEV, separation=SEPARATION,
        )
        test_X[severity] = shifted.X
        probs[severity] = predict_proba(params, shifted.X)
    return SeedRun(
        seed=seed, params=params, calib=calib, cal_scores=cal_scores,
        test_X=test_X, test_y=clean.y, probs=probs,
    )


@pytest.fixture(scope="session")
def bundle() -> Bundle:
    start = time.perf_counter()
    runs = [_build_seed(seed) for seed in range(N_SEEDS)]
    return Bundle(runs=runs, build_seconds=time.perf_counter() - start)
