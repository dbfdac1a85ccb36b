import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skidest.gmm import (
    VARIANCE_FLOOR,
    EmTrace,
    GmmParams,
    em_step,
    extract_models,
    gmm_fit,
    log_likelihood,
    read_gmm_params,
    responsibilities,
    write_gmm_params,
)

from conftest import cloud_from_array


def diag_density(point, mean, variances):
    """Reference diagonal Gaussian density, written out longhand."""
    value = 1.0
    for d in range(3):
        value *= math.exp(-((point[d] - mean[d]) ** 2) / (2.0 * variances[d])) / math.sqrt(
            2.0 * math.pi * variances[d]
        )
    return value


def two_component_params(weights=(0.5, 0.5), means=((0.0, 0.0, 0.0), (2.0, 0.0, 0.0))):
    return GmmParams(
        weights=np.array(weights),
        means=np.array(means),
        variances=np.ones((2, 3)),
    )


def blob_cloud(rng, centers, per_axis_std=0.1, count=500):
    points = np.concatenate(
        [rng.normal(loc=c, scale=per_axis_std, size=(count, 3)) for c in centers]
    )
    return cloud_from_array(points)


class TestResponsibilities:
    def test_single_component_is_certain(self):
        params = GmmParams(
            weights=np.array([1.0]), means=np.zeros((1, 3)), variances=np.ones((1, 3))
        )
        np.testing.assert_array_equal(responsibilities(params, (5.0, -1.0, 0.3)), [1.0])

    def test_symmetric_midpoint_splits_evenly(self):
        params = two_component_params()
        np.testing.assert_allclose(responsibilities(params, (1.0, 0.0, 0.0)), [0.5, 0.5], atol=1e-14)

    def test_matches_direct_density_formula(self):
        params = two_component_params(weights=(0.3, 0.7), means=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)))
        point = (0.0, 0.0, 0.0)
        numerators = [
            w * diag_density(point, mean, var)
            for w, mean, var in zip(params.weights, params.means, params.variances)
        ]
        expected = np.array(numerators) / sum(numerators)
        np.testing.assert_allclose(responsibilities(params, point), expected, atol=1e-14)

    def test_total_underflow_falls_back_to_uniform(self):
        params = two_component_params(means=((1e200, 0.0, 0.0), (-1e200, 0.0, 0.0)))
        np.testing.assert_array_equal(responsibilities(params, (0.0, 0.0, 0.0)), [0.5, 0.5])

    @settings(max_examples=60, deadline=None)
    @given(
        point=st.tuples(*[st.floats(-50, 50) for _ in range(3)]),
        weight=st.floats(1e-6, 1.0 - 1e-6),
        spread=st.floats(0.01, 10.0),
    )
    def test_simplex_property(self, point, weight, spread):
        params = GmmParams(
            weights=np.array([weight, 1.0 - weight]),
            means=np.array([[0.0, 0.0, 0.0], [3.0, -2.0, 1.0]]),
            variances=np.full((2, 3), spread),
        )
        resp = responsibilities(params, point)
        assert np.all(resp >= 0)
        assert abs(resp.sum() - 1.0) <= 1e-12


class TestEmStep:
    def test_single_component_closed_form_in_one_step(self, rng):
        cloud = cloud_from_array(rng.normal(size=(200, 3)))
        points = cloud.as_array()
        start = GmmParams(
            weights=np.array([1.0]),
            means=np.array([[5.0, 5.0, 5.0]]),
            variances=np.ones((1, 3)),
        )
        updated, _, rescued = em_step(start, cloud)
        assert rescued == ()
        np.testing.assert_allclose(updated.means[0], points.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(updated.variances[0], points.var(axis=0), atol=1e-12)
        assert updated.weights[0] == 1.0

    def test_closed_form_is_a_fixed_point(self, rng):
        cloud = cloud_from_array(rng.normal(size=(100, 3)))
        start = GmmParams(
            weights=np.array([1.0]), means=np.zeros((1, 3)), variances=np.ones((1, 3))
        )
        once, _, _ = em_step(start, cloud)
        twice, _, _ = em_step(once, cloud)
        np.testing.assert_allclose(twice.means, once.means, atol=1e-12)
        np.testing.assert_allclose(twice.variances, once.variances, atol=1e-12)
        np.testing.assert_allclose(twice.weights, once.weights, atol=1e-12)

    def test_reported_likelihood_is_of_input_params(self, rng):
        cloud = cloud_from_array(rng.normal(size=(50, 3)))
        params = GmmParams(
            weights=np.array([1.0]), means=np.zeros((1, 3)), variances=np.ones((1, 3))
        )
        _, reported, _ = em_step(params, cloud)
        assert reported == pytest.approx(log_likelihood(params, cloud), abs=1e-9)

    def test_two_blob_recovery(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (10.0, 10.0, 10.0)])
        params, trace = gmm_fit(cloud, 2, seed=0)
        assert trace.converged
        order = np.argsort(params.means[:, 0])
        np.testing.assert_allclose(params.means[order[0]], (0.0, 0.0, 0.0), atol=0.05)
        np.testing.assert_allclose(params.means[order[1]], (10.0, 10.0, 10.0), atol=0.05)
        np.testing.assert_allclose(params.weights, [0.5, 0.5], atol=0.02)

    def test_empty_component_is_rescued(self, rng):
        cloud = cloud_from_array(rng.normal(size=(80, 3)))
        params = GmmParams(
            weights=np.array([0.5, 0.5]),
            means=np.array([[0.0, 0.0, 0.0], [1e6, 1e6, 1e6]]),
            variances=np.vstack([np.ones(3), np.full(3, VARIANCE_FLOOR)]),
        )
        updated, _, rescued = em_step(params, cloud, rng=np.random.default_rng(0))
        assert rescued == (1,)
        assert abs(updated.weights.sum() - 1.0) <= 1e-12
        assert np.all(np.abs(updated.means[1]) < 100)  # re-seeded at a cloud point

    def test_weight_simplex_preserved(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (3.0, 0.0, 0.0)], count=100)
        params = two_component_params(weights=(0.2, 0.8))
        for _ in range(5):
            params, _, _ = em_step(params, cloud)
            assert np.all(params.weights >= 0)
            assert abs(params.weights.sum() - 1.0) <= 1e-12

    def test_label_symmetry(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (4.0, 1.0, -1.0)], count=60)
        params = two_component_params(weights=(0.3, 0.7), means=((0.1, 0.0, 0.0), (3.9, 1.0, -1.0)))
        swapped = GmmParams(
            weights=params.weights[::-1].copy(),
            means=params.means[::-1].copy(),
            variances=params.variances[::-1].copy(),
        )
        updated, ll, _ = em_step(params, cloud)
        updated_swapped, ll_swapped, _ = em_step(swapped, cloud)
        assert ll == pytest.approx(ll_swapped, abs=1e-10)
        np.testing.assert_allclose(updated_swapped.means, updated.means[::-1], atol=1e-12)
        np.testing.assert_allclose(updated_swapped.variances, updated.variances[::-1], atol=1e-12)
        np.testing.assert_allclose(updated_swapped.weights, updated.weights[::-1], atol=1e-12)

    def test_variance_floor_enforced(self):
        cloud = cloud_from_array(np.tile([[0.5, 0.1, 0.1]], (20, 1)))
        params = GmmParams(
            weights=np.array([1.0]), means=np.array([[0.5, 0.1, 0.1]]), variances=np.ones((1, 3))
        )
        updated, _, _ = em_step(params, cloud)
        assert np.all(updated.variances >= VARIANCE_FLOOR)


class TestGmmFit:
    def test_single_component_converges_immediately(self, rng):
        cloud = cloud_from_array(rng.normal(size=(120, 3)))
        params, trace = gmm_fit(cloud, 1, seed=0)
        points = cloud.as_array()
        np.testing.assert_allclose(params.means[0], points.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(params.variances[0], points.var(axis=0), atol=1e-12)
        assert trace.converged
        assert trace.iterations <= 2

    def test_monotone_log_likelihood(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (2.0, 1.0, 0.0)], count=150)
        _, trace = gmm_fit(cloud, 3, seed=1)
        lls = trace.log_likelihoods
        for i in range(len(lls) - 1):
            if (i + 1) in trace.rescued_iterations:
                continue
            assert lls[i + 1] >= lls[i] - 1e-8

    def test_component_sweep_runs(self, rng):
        cloud = cloud_from_array(rng.normal(size=(200, 3)))
        for m in range(3, 26):
            params, _ = gmm_fit(cloud, m, seed=0, max_iter=30)
            assert params.n_components == m

    def test_same_seed_is_bit_identical(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (5.0, 5.0, 5.0)], count=200)
        first, _ = gmm_fit(cloud, 4, seed=42)
        second, _ = gmm_fit(cloud, 4, seed=42)
        assert np.array_equal(first.weights, second.weights)
        assert np.array_equal(first.means, second.means)
        assert np.array_equal(first.variances, second.variances)

    def test_random_init_mode(self, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (5.0, 5.0, 5.0)], count=100)
        params, _ = gmm_fit(cloud, 2, seed=0, init="random")
        assert params.n_components == 2

    def test_unknown_init_mode_rejected(self, rng):
        cloud = cloud_from_array(rng.normal(size=(10, 3)))
        with pytest.raises(ValueError, match="init"):
            gmm_fit(cloud, 2, seed=0, init="plaid")

    def test_too_many_components_rejected(self, rng):
        cloud = cloud_from_array(rng.normal(size=(3, 3)))
        with pytest.raises(ValueError, match="cannot support"):
            gmm_fit(cloud, 5)

    def test_invalid_component_count_rejected(self, rng):
        cloud = cloud_from_array(rng.normal(size=(10, 3)))
        with pytest.raises(ValueError, match="component"):
            gmm_fit(cloud, 0)


class TestExtractModels:
    def test_single_mean_passes_through(self):
        params = GmmParams(
            weights=np.array([1.0]),
            means=np.array([[0.9, 0.05, 0.05]]),
            variances=np.ones((1, 3)),
        )
        (model,) = extract_models(params, q=1e-3, r=1e-2)
        assert (model.a, model.b1, model.b2) == (0.9, 0.05, 0.05)
        assert (model.q, model.r) == (1e-3, 1e-2)

    def test_weights_do_not_affect_extraction(self):
        means = np.array([[0.9, 0.05, 0.05], [0.5, -0.1, 0.1]])
        for weights in ([0.5, 0.5], [0.9, 0.1]):
            params = GmmParams(weights=np.array(weights), means=means, variances=np.ones((2, 3)))
            models = extract_models(params, q=1e-3, r=1e-2)
            assert [(m.a, m.b1, m.b2) for m in models] == [tuple(row) for row in means]

    def test_three_regime_recovery_after_matching(self, rng):
        centers = np.array([(0.9, 0.05, 0.05), (0.5, -0.1, 0.1), (0.2, 0.3, -0.3)])
        cloud = blob_cloud(rng, centers=centers, per_axis_std=0.01, count=300)
        params, _ = gmm_fit(cloud, 3, seed=0)
        models = extract_models(params, q=1e-3, r=1e-2)
        fitted = np.array([(m.a, m.b1, m.b2) for m in models])
        for center in centers:
            nearest = fitted[np.argmin(np.linalg.norm(fitted - center, axis=1))]
            np.testing.assert_allclose(nearest, center, atol=0.05)


class TestValidationAndSerialization:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="simplex"):
            GmmParams(weights=np.array([0.5, 0.6]), means=np.zeros((2, 3)), variances=np.ones((2, 3)))

    def test_variances_below_floor_rejected(self):
        with pytest.raises(ValueError, match="variances"):
            GmmParams(weights=np.array([1.0]), means=np.zeros((1, 3)), variances=np.zeros((1, 3)))

    def test_json_round_trip(self, tmp_path, rng):
        cloud = blob_cloud(rng, centers=[(0.0, 0.0, 0.0), (5.0, 5.0, 5.0)], count=100)
        params, trace = gmm_fit(cloud, 2, seed=7)
        path = tmp_path / "gmm_2.json"
        write_gmm_params(params, path, seed=7, trace=trace)
        payload = json.loads(path.read_text())
        assert payload["M"] == 2
        assert payload["seed"] == 7
        assert payload["iterations"] == trace.iterations
        reloaded = read_gmm_params(path)
        np.testing.assert_array_equal(reloaded.weights, params.weights)
        np.testing.assert_array_equal(reloaded.means, params.means)
        np.testing.assert_array_equal(reloaded.variances, params.variances)
