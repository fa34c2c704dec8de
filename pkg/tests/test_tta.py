"""Entropy-minimization updates, filtering rules, and the adapted-set drivers."""

import math

import numpy as np
import pytest

from shiftcp.conformal import calibrate, splitcp_set, true_label_scores
from shiftcp.model import (
    ClassifierParams,
    TrainConfig,
    init_params,
    predict_proba,
    train_supervised,
)
from shiftcp.numeric import entropy, rng_from_seed
from shiftcp.scaling import ScalingSpec, ecp_set, profile
from shiftcp.shiftsim import Corruption, SyntheticSpec, corrupt, generate
from shiftcp.tta import (
    AdaptationState,
    TTAConfig,
    adapt,
    eacp_offline,
    eacp_streaming,
    eta_batch_update,
    eta_filter_weights,
    tent_batch_update,
)


def binary_vector_with_entropy(target, lo=0.5, hi=1.0 - 1e-12):
    """Oracle: bisect the top probability q of (q, 1-q) to hit a binary entropy."""
    def h(q):
        return -(q * math.log(q) + (1 - q) * math.log(1 - q))

    for _ in range(200):
        mid = (lo + hi) / 2
        if h(mid) > target:
            lo = mid
        else:
            hi = mid
    q = (lo + hi) / 2
    return np.array([q, 1 - q])


@pytest.fixture(scope="module")
def shifted_setup():
    spec = SyntheticSpec(n_samples=2000, seed=50, distribution_seed=7)
    train = generate(spec)
    params = train_supervised(train, TrainConfig(epochs=25, seed=50)).with_temperature(2.0)
    test = generate(
        SyntheticSpec(n_samples=2000, seed=51, distribution_seed=7)
    )
    shifted = corrupt(test, Corruption("additive_noise", 4), seed=52,
                      stddev=spec.stddev, separation=spec.separation)
    cal = generate(SyntheticSpec(n_samples=2000, seed=53, distribution_seed=7))
    calib = calibrate(true_label_scores(predict_proba(params, cal.X), cal.y), 0.1)
    return params, shifted, calib


class TestTentUpdate:
    def test_saturated_model_is_fixed_point(self):
        big = 60.0
        params = ClassifierParams("linear", (big * np.eye(3),), (np.zeros(3),), 1.0)
        cfg = TTAConfig(method="tent", learning_rate=0.01)
        out, _ = tent_batch_update(params, np.eye(3), cfg, AdaptationState.fresh(params))
        assert np.abs(out.weights[0] - params.weights[0]).max() < 1e-8

    def test_zero_lr_is_noop(self):
        params = init_params("linear", 4, 3, seed=1)
        X = rng_from_seed(2).normal(size=(8, 4))
        cfg = TTAConfig(method="tent", learning_rate=0.0)
        out, _ = tent_batch_update(params, X, cfg, AdaptationState.fresh(params))
        np.testing.assert_array_equal(out.weights[0], params.weights[0])

    def test_single_step_reduces_batch_entropy(self):
        rng = rng_from_seed(3)
        params = init_params("linear", 5, 4, seed=3)
        X = rng.normal(size=(32, 5))
        cfg = TTAConfig(method="tent", learning_rate=1e-3)
        out, _ = tent_batch_update(params, X, cfg, AdaptationState.fresh(params))
        before = entropy(predict_proba(params, X)).mean()
        after = entropy(predict_proba(out, X)).mean()
        assert after <= before

    def test_exactly_one_step_per_batch(self):
        params = init_params("linear", 3, 2, seed=4)
        state = AdaptationState.fresh(params)
        X = rng_from_seed(5).normal(size=(150, 3))
        cfg = TTAConfig(method="tent", learning_rate=1e-3, batch_size=50)
        _, state = adapt(params, X, cfg, state)
        assert state.batches_seen == 3
        assert state.steps_taken == 3


class TestEtaFilter:
    def test_entropy_margin_filters(self):
        p_low = binary_vector_with_entropy(0.1)
        p_high = binary_vector_with_entropy(0.5)
        probs = np.vstack([p_low, p_high])
        keep, weights = eta_filter_weights(probs, None, margin=0.4, epsilon=0.05)
        np.testing.assert_array_equal(keep, [True, False])
        assert weights[0] == pytest.approx(math.exp(0.4 - 0.1), rel=1e-6)

    def test_all_filtered_means_no_step(self):
        params = init_params("linear", 4, 3, seed=6)
        X = rng_from_seed(7).normal(scale=0.01, size=(16, 4))  # near-uniform outputs
        cfg = TTAConfig(method="eta", learning_rate=0.01, entropy_margin=1e-6)
        state = AdaptationState.fresh(params)
        out, state, retained = eta_batch_update(params, X, cfg, state)
        assert retained == 0
        assert state.steps_taken == 0
        np.testing.assert_array_equal(out.weights[0], params.weights[0])

    def test_redundancy_filter_drops_similar_outputs(self):
        p = np.array([[0.97, 0.02, 0.01]])
        keep, _ = eta_filter_weights(p, moving_avg=p[0], margin=10.0, epsilon=0.05)
        assert not keep[0]  # cosine similarity 1 > 0.95
        keep2, _ = eta_filter_weights(p, moving_avg=np.array([0.01, 0.97, 0.02]),
                                      margin=10.0, epsilon=0.05)
        assert keep2[0]

    def test_epsilon_zero_disables_redundancy_filter(self):
        p = np.array([[0.97, 0.02, 0.01]])
        keep, _ = eta_filter_weights(p, moving_avg=p[0], margin=10.0, epsilon=0.0)
        assert keep[0]

    def test_infinite_margin_matches_tent_direction(self):
        params = init_params("linear", 4, 3, seed=8)
        X = rng_from_seed(9).normal(size=(20, 4))
        cfg_eta = TTAConfig(method="eta", learning_rate=1e-3,
                            entropy_margin=math.inf, redundancy_epsilon=0.0)
        cfg_tent = TTAConfig(method="tent", learning_rate=1e-3)
        out_eta, _, retained = eta_batch_update(
            params, X, cfg_eta, AdaptationState.fresh(params)
        )
        out_tent, _ = tent_batch_update(params, X, cfg_tent, AdaptationState.fresh(params))
        assert retained == X.shape[0]
        step_eta = out_eta.weights[0] - params.weights[0]
        step_tent = out_tent.weights[0] - params.weights[0]
        cosine = (step_eta * step_tent).sum() / (
            np.linalg.norm(step_eta) * np.linalg.norm(step_tent)
        )
        assert cosine > 0.9

    def test_weights_strictly_positive(self):
        rng = rng_from_seed(10)
        from shiftcp.numeric import softmax

        probs = softmax(rng.normal(size=(64, 5)) * 2)
        keep, weights = eta_filter_weights(probs, None, margin=1.2, epsilon=0.05)
        assert np.all(weights > 0)
        assert np.all(entropy(probs)[keep] < 1.2)


class TestFinalLayerRestriction:
    def test_final_layer_only_touches_last_layer(self):
        params = init_params("mlp", 4, 3, hidden_units=6, seed=11)
        X = rng_from_seed(12).normal(size=(32, 4))
        cfg = TTAConfig(method="tent", learning_rate=0.05, parameter_subset="final_layer")
        out, _ = tent_batch_update(params, X, cfg, AdaptationState.fresh(params))
        np.testing.assert_array_equal(out.weights[0], params.weights[0])
        assert not np.array_equal(out.weights[1], params.weights[1])

    def test_all_subset_touches_every_layer(self):
        params = init_params("mlp", 4, 3, hidden_units=6, seed=13)
        X = rng_from_seed(14).normal(size=(32, 4))
        cfg = TTAConfig(method="tent", learning_rate=0.05, parameter_subset="all")
        out, _ = tent_batch_update(params, X, cfg, AdaptationState.fresh(params))
        assert not np.array_equal(out.weights[0], params.weights[0])


class TestEacpOffline:
    def test_zero_lr_matches_unadapted_scaled_sets(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        cfg = TTAConfig(method="eta", learning_rate=0.0)
        _, masks, prof = eacp_offline(params, shifted.X, calib, spec, cfg)
        probs = predict_proba(params, shifted.X)
        ref = ecp_set(probs, calib, profile(probs, spec).factor)
        np.testing.assert_array_equal(masks, ref)

    def test_deterministic(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        cfg = TTAConfig(method="eta", learning_rate=0.01)
        _, m1, _ = eacp_offline(params, shifted.X, calib, spec, cfg)
        _, m2, _ = eacp_offline(params, shifted.X, calib, spec, cfg)
        np.testing.assert_array_equal(m1, m2)

    def test_adaptation_reduces_entropy_on_shift(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        cfg = TTAConfig(method="eta", learning_rate=0.05)
        adapted, _, prof = eacp_offline(params, shifted.X, calib, spec, cfg)
        before = entropy(predict_proba(params, shifted.X)).mean()
        after = entropy(predict_proba(adapted, shifted.X)).mean()
        assert after < before

    def test_superset_of_threshold_sets(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        cfg = TTAConfig(method="eta", learning_rate=0.01)
        adapted, masks, _ = eacp_offline(params, shifted.X, calib, spec, cfg)
        plain = splitcp_set(predict_proba(adapted, shifted.X), calib)
        assert not np.any(plain & ~masks)


class TestEacpStreaming:
    def test_single_batch_equals_initial_model_prediction(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        cfg = TTAConfig(method="eta", learning_rate=0.05)
        X = shifted.X[:64]
        result = eacp_streaming(params, [X], calib, spec, cfg)
        probs = predict_proba(params, X)
        prof = profile(probs, spec)
        np.testing.assert_array_equal(result.masks, ecp_set(probs, calib, prof.factor))
        assert result.u_test[0] == prof.u_test

    def test_prediction_precedes_update(self, shifted_setup):
        # first batch's sets must not depend on the learning rate at all
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=2.0)
        X = shifted.X[:128]
        r1 = eacp_streaming(params, [X[:64], X[64:]], calib, spec,
                            TTAConfig(method="eta", learning_rate=0.0))
        r2 = eacp_streaming(params, [X[:64], X[64:]], calib, spec,
                            TTAConfig(method="eta", learning_rate=0.5))
        np.testing.assert_array_equal(r1.masks[:64], r2.masks[:64])

    def test_running_quantile_converges_on_stationary_stream(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=1.0)
        cfg = TTAConfig(method="eta", learning_rate=0.0, batch_size=64)
        batches = [shifted.X[i : i + 64] for i in range(0, 1920, 64)]
        result = eacp_streaming(params, batches, calib, spec, cfg)
        u = result.u_test
        early = abs(u[64 * 2] - u[64 * 1])
        late = abs(u[64 * 29] - u[64 * 28])
        assert late <= early + 1e-9
        assert abs(u[-1] - u[64 * 20]) < 0.1

    def test_window_mode_uses_recent_values_only(self, shifted_setup):
        params, shifted, calib = shifted_setup
        spec = ScalingSpec.for_alpha(0.1, order=1.0)
        cfg = TTAConfig(method="eta", learning_rate=0.0)
        batches = [shifted.X[i : i + 64] for i in range(0, 640, 64)]
        result = eacp_streaming(params, batches, calib, spec, cfg,
                                quantile_mode="window", window=64)
        # with a one-batch window, each batch's u is its own quantile
        probs = predict_proba(params, shifted.X[256:320])
        expected = profile(probs, spec).u_test
        assert result.u_test[300] == expected

    def test_spec_none_gives_plain_threshold_sets(self, shifted_setup):
        params, shifted, calib = shifted_setup
        cfg = TTAConfig(method="eta", learning_rate=0.0)
        result = eacp_streaming(params, [shifted.X[:64]], calib, None, cfg)
        probs = predict_proba(params, shifted.X[:64])
        np.testing.assert_array_equal(result.masks, splitcp_set(probs, calib))
        assert result.factors[0] == 1.0

    def test_empty_stream_rejected(self, shifted_setup):
        params, _, calib = shifted_setup
        cfg = TTAConfig(method="eta")
        with pytest.raises(ValueError):
            eacp_streaming(params, [], calib, None, cfg)


class TestEntropyAdaptedEstimator:
    def test_fit_predict_roundtrip(self, shifted_setup):
        from sklearn.exceptions import NotFittedError

        from shiftcp.tta import EntropyAdaptedConformal

        params, shifted, calib = shifted_setup

        class FittedModel:
            params_ = params

            def predict_proba(self, X):
                return predict_proba(params, X)

        cal = generate(SyntheticSpec(n_samples=800, seed=60, distribution_seed=7))
        est = EntropyAdaptedConformal(FittedModel(), alpha=0.1, order=2.0)
        with pytest.raises(NotFittedError):
            est.predict_set(shifted.X[:10])
        est.fit(cal.X, cal.y)
        masks = est.predict_set(shifted.X)
        assert masks.shape == (len(shifted.y), 8)
        # wrapped model untouched; adapted copy exposed separately
        np.testing.assert_array_equal(
            FittedModel.params_.weights[-1], params.weights[-1]
        )
        assert hasattr(est, "adapted_params_")
        plain = splitcp_set(predict_proba(est.adapted_params_, shifted.X), est.result_)
        assert not np.any(plain & ~masks)

    def test_get_params_exposes_configuration(self, shifted_setup):
        from shiftcp.tta import EntropyAdaptedConformal

        params, _, _ = shifted_setup

        class FittedModel:
            params_ = params

        est = EntropyAdaptedConformal(FittedModel(), alpha=0.2, order=1.0)
        got = est.get_params()
        assert got["alpha"] == 0.2 and got["order"] == 1.0


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            TTAConfig(method="memo")
        with pytest.raises(ValueError):
            TTAConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TTAConfig(redundancy_epsilon=1.5)
        with pytest.raises(ValueError):
            TTAConfig(parameter_subset="first_layer")

    def test_margin_resolves_to_fraction_of_log_k(self):
        cfg = TTAConfig()
        assert cfg.resolve_margin(8) == pytest.approx(0.4 * math.log(8))
        assert TTAConfig(entropy_margin=1.7).resolve_margin(8) == 1.7
