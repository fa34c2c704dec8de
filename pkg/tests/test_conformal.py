"""Split conformal calibration, threshold sets, and the cumulative-softmax rule."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from shiftcp.conformal import (
    CalibrationResult,
    SplitConformalClassifier,
    calibrate,
    naive_set,
    score,
    set_members,
    set_sizes,
    splitcp_set,
    true_label_scores,
)
from shiftcp.numeric import rng_from_seed, softmax


class TestScore:
    def test_projection(self):
        assert score([0.7, 0.3], 0) == 0.7
        assert score([0.5, 0.3, 0.15, 0.05], 3) == 0.05

    def test_uniform(self):
        assert score([0.2] * 5, 3) == pytest.approx(0.2)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            score([0.5, 0.5], 2)
        with pytest.raises(ValueError):
            score([0.5, 0.5], -1)

    def test_true_label_scores(self):
        P = np.array([[0.9, 0.1], [0.3, 0.7]])
        np.testing.assert_allclose(true_label_scores(P, [1, 1]), [0.1, 0.7])


class TestCalibrate:
    def test_decile_grid(self):
        scores = np.arange(1, 11) / 10.0
        calib = calibrate(scores, alpha=0.1)
        # level 0.1*(1 - 1/10) = 0.09 -> first order statistic
        assert calib.tau == 0.1
        assert calib.n_cal == 10

    def test_constant_scores(self):
        calib = calibrate(np.full(20, 0.5), alpha=0.37)
        assert calib.tau == 0.5

    def test_uniform_monte_carlo(self):
        rng = rng_from_seed(77)
        scores = rng.uniform(size=2000)
        calib = calibrate(scores, alpha=0.1)
        assert calib.tau == pytest.approx(0.1, abs=0.02)

    def test_reproducible(self):
        rng = rng_from_seed(5)
        scores = rng.uniform(size=50)
        assert calibrate(scores, 0.2).tau == calibrate(scores, 0.2).tau

    def test_too_few_scores_rejected(self):
        with pytest.raises(ValueError):
            calibrate([0.5], 0.1)

    def test_bad_alpha_rejected(self):
        with pytest.raises(ValueError):
            calibrate([0.5, 0.6], 0.0)
        with pytest.raises(ValueError):
            CalibrationResult(tau=0.5, alpha=1.0, n_cal=10)

    def test_scores_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            calibrate([0.5, 1.4], 0.1)


class TestSplitCPSet:
    def test_class_enumeration(self):
        calib = CalibrationResult(tau=0.25, alpha=0.1, n_cal=100)
        mask = splitcp_set([0.5, 0.3, 0.15, 0.05], calib)
        np.testing.assert_array_equal(set_members(mask), [0, 1])

    def test_zero_threshold_keeps_everything(self):
        mask = splitcp_set([0.5, 0.3, 0.15, 0.05], 0.0)
        assert mask.all()

    def test_unattainable_threshold_is_empty(self):
        mask = splitcp_set([0.5, 0.3, 0.15, 0.05], 1.01)
        assert not mask.any()

    def test_monotone_in_tau(self):
        rng = rng_from_seed(8)
        P = softmax(rng.normal(size=(100, 6)))
        taus = np.sort(rng.uniform(0, 1, size=10))
        prev = splitcp_set(P, taus[0])
        for tau in taus[1:]:
            cur = splitcp_set(P, tau)
            assert not np.any(cur & ~prev), "set grew as tau increased"
            prev = cur


class TestNaiveSet:
    def test_cumulative_sort_example(self):
        mask = naive_set([0.5, 0.3, 0.15, 0.05], alpha=0.1)
        np.testing.assert_array_equal(set_members(mask), [0, 1, 2])

    def test_uniform_ten_classes(self):
        mask = naive_set(softmax(np.zeros(10)), alpha=0.1)
        assert mask.sum() == 9

    def test_one_hot_is_singleton(self):
        for alpha in (0.05, 0.3, 0.9):
            mask = naive_set([1.0, 0.0, 0.0], alpha=alpha)
            np.testing.assert_array_equal(set_members(mask), [0])

    def test_tie_break_prefers_small_index(self):
        mask = naive_set([0.3, 0.3, 0.4], alpha=0.3)  # target 0.7
        np.testing.assert_array_equal(set_members(mask), [0, 2])

    def test_never_empty(self):
        rng = rng_from_seed(10)
        P = softmax(rng.normal(scale=3, size=(200, 7)))
        for alpha in (0.01, 0.5, 0.99):
            assert set_sizes(naive_set(P, alpha)).min() >= 1

    def test_size_monotone_in_alpha(self):
        rng = rng_from_seed(11)
        P = softmax(rng.normal(size=(50, 8)))
        alphas = np.sort(rng.uniform(0.01, 0.99, size=8))
        prev = set_sizes(naive_set(P, alphas[0]))
        for alpha in alphas[1:]:
            cur = set_sizes(naive_set(P, alpha))
            assert np.all(cur <= prev)
            prev = cur


class TestExchangeableCoverageSmoke:
    def test_coverage_concentrates_at_target(self):
        # scores of the true label under exchangeability: same draw for cal/test
        rng = rng_from_seed(123)
        k, n_cal, n_test = 6, 1000, 4000
        P_cal = softmax(rng.normal(size=(n_cal, k)) * 2)
        y_cal = np.array([rng.choice(k, p=p) for p in P_cal])
        P_test = softmax(rng.normal(size=(n_test, k)) * 2)
        y_test = np.array([rng.choice(k, p=p) for p in P_test])
        calib = calibrate(true_label_scores(P_cal, y_cal), alpha=0.1)
        masks = splitcp_set(P_test, calib)
        covered = masks[np.arange(n_test), y_test]
        assert covered.mean() >= 0.87


class TestEstimator:
    def test_fit_then_predict(self):
        rng = rng_from_seed(21)
        P_cal = softmax(rng.normal(size=(300, 4)))
        y_cal = rng.integers(0, 4, size=300)
        est = SplitConformalClassifier(alpha=0.2).fit(P_cal, y_cal)
        masks = est.predict_set(softmax(rng.normal(size=(10, 4))))
        assert masks.shape == (10, 4)
        assert est.tau_ == est.result_.tau

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            SplitConformalClassifier().predict_set([[0.5, 0.5]])
