"""Fisher encoding: analytic score blocks vs finite differences, invariances."""

import numpy as np
import pytest

from ensvis.codebook import GmmParams
from ensvis.errors import DimensionError, EmptySampleError, NumericalFailureError
from ensvis.fisher import FisherVector, FisherVectorEncoder, encode_fv, normalize_fv


def naive_mean_ll(weights, means, sigmas, data):
    """(1/T) log p(X) via direct density sums, parametrized by std devs."""
    total = 0.0
    for x in data:
        p = 0.0
        for w, mu, sd in zip(weights, means, sigmas):
            norm = np.prod(1.0 / (np.sqrt(2.0 * np.pi) * sd))
            p += w * norm * np.exp(-0.5 * np.sum(((x - mu) / sd) ** 2))
        total += np.log(p)
    return total / data.shape[0]


def finite_difference_blocks(params, data, h=1e-5):
    """Central differences of the mean log-likelihood in (mu, sigma),
    scaled by the closed-form information-matrix diagonal."""
    k, d = params.means.shape
    sigmas = np.sqrt(params.variances)
    grad_mu = np.zeros((k, d))
    grad_sd = np.zeros((k, d))
    for i in range(k):
        for j in range(d):
            mp, mm = params.means.copy(), params.means.copy()
            mp[i, j] += h
            mm[i, j] -= h
            grad_mu[i, j] = (
                naive_mean_ll(params.weights, mp, sigmas, data)
                - naive_mean_ll(params.weights, mm, sigmas, data)
            ) / (2 * h)
            sp, sm = sigmas.copy(), sigmas.copy()
            sp[i, j] += h
            sm[i, j] -= h
            grad_sd[i, j] = (
                naive_mean_ll(params.weights, params.means, sp, data)
                - naive_mean_ll(params.weights, params.means, sm, data)
            ) / (2 * h)
    mean_block = grad_mu * sigmas / np.sqrt(params.weights)[:, None]
    var_block = grad_sd * sigmas / np.sqrt(2.0 * params.weights)[:, None]
    return np.concatenate([mean_block.ravel(), var_block.ravel()])


def random_instance(rng, k_max=4, d_max=8, t_max=32):
    k = int(rng.integers(1, k_max + 1))
    d = int(rng.integers(1, d_max + 1))
    t = int(rng.integers(1, t_max + 1))
    w = rng.uniform(0.5, 1.5, size=k)
    params = GmmParams(
        weights=w / w.sum(),
        means=rng.normal(0, 1.5, size=(k, d)),
        variances=rng.uniform(0.4, 2.0, size=(k, d)),
    )
    data = rng.normal(0, 1.5, size=(t, d))
    return params, data


class TestGradientOracle:
    def test_matches_finite_differences(self, rng):
        for _ in range(10):
            params, data = random_instance(rng)
            analytic = encode_fv(params, data).values
            expected = finite_difference_blocks(params, data)
            np.testing.assert_allclose(analytic, expected, rtol=1e-4, atol=1e-7)

    def test_descriptor_at_single_component_mean_zeroes_mean_block(self, rng):
        d = 5
        params = GmmParams(
            weights=np.ones(1),
            means=rng.normal(size=(1, d)),
            variances=rng.uniform(0.5, 1.5, size=(1, d)),
        )
        fv = encode_fv(params, params.means.copy())
        np.testing.assert_allclose(fv.values[:d], 0.0, atol=1e-15)

    def test_output_length(self, rng):
        params, _ = random_instance(rng)
        k, d = params.means.shape
        fv = encode_fv(params, rng.normal(size=(7, d)))
        assert fv.values.shape == (2 * k * d,)

    def test_full_size_configuration_length(self):
        k, d = 64, 128
        rng = np.random.default_rng(0)
        w = np.full(k, 1.0 / k)
        params = GmmParams(
            weights=w,
            means=rng.normal(size=(k, d)),
            variances=np.ones((k, d)),
        )
        fv = encode_fv(params, rng.normal(size=(3, d)))
        assert fv.values.shape == (16_384,)


class TestInvariances:
    def test_duplication_leaves_fv_unchanged(self, rng):
        params, data = random_instance(rng)
        a = encode_fv(params, data).values
        b = encode_fv(params, np.vstack([data, data])).values
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-15)

    def test_descriptor_order_is_irrelevant_bitwise(self, rng):
        params, data = random_instance(rng, t_max=32)
        a = encode_fv(params, data).values
        b = encode_fv(params, data[::-1].copy()).values
        assert np.array_equal(a, b)

    def test_empty_sample_rejected(self, rng):
        params, _ = random_instance(rng)
        with pytest.raises(EmptySampleError):
            encode_fv(params, np.zeros((0, params.n_features)))

    def test_dim_mismatch_rejected(self, rng):
        params, _ = random_instance(rng)
        with pytest.raises(DimensionError):
            encode_fv(params, np.zeros((3, params.n_features + 1)))


class TestNormalization:
    def test_zero_stays_zero(self):
        fv = FisherVector(values=np.zeros(6), gmm_id="x", normalized=False)
        out = normalize_fv(fv)
        assert np.array_equal(out.values, np.zeros(6))
        assert out.normalized

    def test_unit_norm_for_nonzero(self, rng):
        for _ in range(20):
            v = rng.normal(size=rng.integers(2, 40))
            out = normalize_fv(FisherVector(values=v, gmm_id="x", normalized=False))
            np.testing.assert_allclose(np.linalg.norm(out.values), 1.0, atol=1e-9)

    def test_hand_computed_example(self):
        fv = FisherVector(values=np.array([4.0, -4.0]), gmm_id="x", normalized=False)
        out = normalize_fv(fv)
        np.testing.assert_allclose(
            out.values, [1 / np.sqrt(2), -1 / np.sqrt(2)], rtol=1e-12
        )

    def test_nonfinite_rejected(self):
        fv = FisherVector(values=np.array([1.0, np.nan]), gmm_id="x", normalized=False)
        with pytest.raises(NumericalFailureError):
            normalize_fv(fv)


class TestEncoderEstimator:
    def test_fit_transform_produces_unit_rows(self, rng):
        sets = [rng.normal(size=(rng.integers(5, 20), 6)) for _ in range(8)]
        enc = FisherVectorEncoder(n_components=3, seed=0).fit(sets)
        out = enc.transform(sets)
        assert out.shape == (8, 2 * 3 * 6)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_prefitted_vocabulary_accepted(self, rng):
        params, data = random_instance(rng)
        enc = FisherVectorEncoder(gmm=params).fit([])
        out = enc.transform([data])
        assert out.shape[0] == 1
