"""Numeric primitives: exact oracles and invariants.

The quantile oracle is an independent sort-then-index implementation; the
entropy oracle is a direct python-loop summation. Frozen expected values in
this file were computed with those oracles.
"""

import math

import numpy as np
import pytest

from shiftcp.numeric import (
    check_prob_matrix,
    check_prob_vector,
    empirical_quantile,
    entropy,
    linear_fit_loglog,
    log_softmax,
    rng_from_seed,
    softmax,
)


def quantile_oracle(values, level):
    """Brute-force order statistic: sort a python list, index m = ceil(level*n)."""
    ordered = sorted(float(v) for v in values)
    m = int(math.ceil(level * len(ordered)))
    m = min(max(m, 1), len(ordered))
    return ordered[m - 1]


def entropy_oracle(p):
    return -sum(pi * math.log(pi) for pi in p if pi > 0)


class TestSoftmax:
    def test_symmetric_two_class(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-12)

    def test_constant_logits_are_temperature_invariant(self):
        np.testing.assert_allclose(
            softmax([1.0, 1.0, 1.0, 1.0], temperature=0.5), [0.25] * 4, atol=1e-12
        )

    def test_two_class_value(self):
        # exp(2)/(exp(2)+1) = 0.880797...
        np.testing.assert_allclose(softmax([2.0, 0.0]), [0.8808, 0.1192], atol=1e-4)

    def test_temperature_identity(self):
        rng = rng_from_seed(7)
        z = rng.normal(size=(50, 6))
        for t in (0.5, 1.0, 2.5):
            np.testing.assert_array_equal(softmax(z, t), softmax(z / t, 1.0))

    def test_output_is_valid_prob_matrix(self):
        rng = rng_from_seed(3)
        z = rng.normal(scale=50.0, size=(200, 8))
        p = softmax(z)
        check_prob_matrix(p)
        assert np.all(p > 0)

    def test_overflow_safety(self):
        p = softmax([1000.0, 0.0])
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        rng = rng_from_seed(11)
        z = rng.normal(size=(20, 5))
        np.testing.assert_allclose(log_softmax(z, 0.7), np.log(softmax(z, 0.7)), atol=1e-12)

    @pytest.mark.parametrize("temp", [0.0, -1.0, np.inf, np.nan])
    def test_bad_temperature_rejected(self, temp):
        with pytest.raises(ValueError):
            softmax([1.0, 2.0], temperature=temp)

    def test_non_finite_logits_rejected(self):
        with pytest.raises(ValueError):
            softmax([np.nan, 0.0])


class TestEntropy:
    def test_uniform_is_log_k(self):
        assert entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)

    def test_one_hot_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_direct_summation_value(self):
        p = [0.5, 0.3, 0.15, 0.05]
        # oracle: 1.14212004...
        assert entropy_oracle(p) == pytest.approx(1.1421200429883351, abs=1e-9)
        assert entropy(p) == pytest.approx(entropy_oracle(p), abs=1e-12)

    def test_bounds_and_permutation_invariance(self):
        rng = rng_from_seed(5)
        for _ in range(200):
            k = int(rng.integers(2, 12))
            p = rng.dirichlet(np.ones(k))
            h = entropy(p)
            assert 0.0 <= h <= math.log(k) + 1e-12
            assert entropy(p[rng.permutation(k)]) == pytest.approx(h, abs=1e-12)

    def test_matrix_form(self):
        P = np.array([[0.5, 0.5], [1.0, 0.0]])
        np.testing.assert_allclose(entropy(P), [math.log(2), 0.0], atol=1e-12)

    def test_invalid_vector_rejected(self):
        with pytest.raises(ValueError):
            entropy([0.5, 0.4])  # sums to 0.9
        with pytest.raises(ValueError):
            check_prob_vector([1.5, -0.5])


class TestEmpiricalQuantile:
    def test_decile_grid_low_level(self):
        values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        # m = ceil(0.09 * 10) = 1
        assert empirical_quantile(values, 0.09) == pytest.approx(quantile_oracle(values, 0.09))
        assert empirical_quantile(values, 0.09) == 0.1

    def test_singleton(self):
        assert empirical_quantile([5.0], 0.3) == 5.0
        assert empirical_quantile([5.0], 1.0) == 5.0

    def test_level_one_is_max(self):
        assert empirical_quantile([3.0, 1.0, 2.0], 1.0) == 3.0

    def test_matches_oracle_on_random_instances(self):
        rng = rng_from_seed(123)
        for _ in range(500):
            n = int(rng.integers(1, 200))
            values = rng.normal(size=n)
            if rng.random() < 0.3:  # force ties
                values = np.round(values, 1)
            level = float(rng.uniform(1e-6, 1.0))
            assert empirical_quantile(values, level) == quantile_oracle(values, level)

    def test_monotone_in_level(self):
        rng = rng_from_seed(9)
        values = rng.normal(size=57)
        levels = np.sort(rng.uniform(0.01, 1.0, size=20))
        qs = [empirical_quantile(values, lv) for lv in levels]
        assert all(a <= b for a, b in zip(qs, qs[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_quantile([], 0.5)

    @pytest.mark.parametrize("level", [0.0, -0.1, 1.2])
    def test_bad_level_rejected(self, level):
        with pytest.raises(ValueError):
            empirical_quantile([1.0, 2.0], level)


class TestLinearFitLogLog:
    def test_exact_quadratic_law(self):
        slope, intercept = linear_fit_loglog([1.0, 2.0, 4.0], [1.0, 4.0, 16.0])
        assert slope == pytest.approx(2.0, abs=1e-9)
        assert intercept == pytest.approx(0.0, abs=1e-9)

    def test_exact_linear_law(self):
        slope, intercept = linear_fit_loglog([1.0, 10.0], [2.0, 20.0])
        assert slope == pytest.approx(1.0, abs=1e-9)
        assert intercept == pytest.approx(math.log(2), abs=1e-9)

    def test_noisy_power_law_recovered(self):
        rng = rng_from_seed(42)
        u = np.exp(rng.uniform(np.log(0.2), np.log(8.0), size=50))
        r = u**1.5 * np.exp(rng.normal(scale=0.05, size=50))
        slope, _ = linear_fit_loglog(u, r)
        assert slope == pytest.approx(1.5, abs=0.1)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            linear_fit_loglog([1.0], [1.0])

    def test_nonpositive_coordinate_rejected(self):
        with pytest.raises(ValueError):
            linear_fit_loglog([1.0, -2.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            linear_fit_loglog([1.0, 2.0], [0.0, 2.0])

    def test_degenerate_u_rejected(self):
        with pytest.raises(ValueError):
            linear_fit_loglog([2.0, 2.0], [1.0, 3.0])
