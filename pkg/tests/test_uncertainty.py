"""Dirichlet variance, normalization, and uncertainty-weighted prediction."""

import numpy as np
import pytest

from avtk import autodiff as ad, uncertainty
from avtk.autodiff import Tensor
from avtk.rng import make_rng


def test_uniform_two_class_variance_is_one_twelfth():
    alpha = Tensor(np.ones((1, 2, 1, 1), dtype=np.float64))
    delta = uncertainty.pixel_uncertainty(alpha).data
    np.testing.assert_allclose(delta, np.full((1, 2, 1, 1), 1.0 / 12.0), atol=1e-9)


def test_variance_decreases_with_evidence():
    prev = None
    for scale in (1.0, 2.0, 5.0, 20.0, 100.0):
        alpha = Tensor(np.full((1, 3, 1, 1), scale, dtype=np.float64))
        d = float(uncertainty.pixel_uncertainty(alpha).data[0, 0, 0, 0])
        if prev is not None:
            assert d < prev
        prev = d


def test_variance_matches_monte_carlo():
    rng = make_rng(0)
    for _ in range(50):
        c = int(rng.integers(2, 6))
        alpha = rng.uniform(0.2, 8.0, size=c)
        delta = uncertainty.pixel_uncertainty(
            Tensor(alpha.reshape(1, c, 1, 1).astype(np.float64))).data.reshape(c)
        n = 1_000_000
        draws = rng.dirichlet(alpha, size=n)
        mc_var = draws.var(axis=0)
        # standard error of a variance estimate: var * sqrt(2 / (n - 1)) is a
        # normal-theory approximation; the Dirichlet kurtosis correction stays
        # within a small factor, so 3 of these is a safe band at n = 1e6
        se = mc_var * np.sqrt(2.0 / (n - 1)) * 3.0 + 1e-9
        assert (np.abs(delta - mc_var) < 3.0 * se + 5e-7).all()


def test_variance_is_bounded_by_quarter():
    rng = make_rng(1)
    alpha = Tensor(rng.uniform(0.01, 50.0, size=(2, 4, 3, 3)))
    assert float(uncertainty.pixel_uncertainty(alpha).data.max()) <= 0.25


def test_single_class_warns_and_returns_zero():
    with pytest.warns(RuntimeWarning):
        d = uncertainty.pixel_uncertainty(Tensor(np.ones((1, 1, 2, 2)))).data
    np.testing.assert_array_equal(d, np.zeros((1, 1, 2, 2)))


def test_normalization_range_and_degenerate_frame():
    rng = make_rng(2)
    delta = rng.uniform(0.0, 0.2, size=(3, 2, 4, 4))
    delta[1] = 0.07  # constant frame
    out = uncertainty.normalize_uncertainty(Tensor(delta.astype(np.float64))).data
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-12
    np.testing.assert_allclose(out[0].min(), 0.0, atol=1e-12)
    np.testing.assert_allclose(out[0].max(), 1.0, atol=1e-12)
    np.testing.assert_array_equal(out[1], np.zeros((2, 4, 4)))


def test_normalization_is_per_frame():
    delta = np.zeros((2, 1, 1, 2))
    delta[0, 0, 0] = [0.0, 0.1]
    delta[1, 0, 0] = [0.0, 0.0001]
    out = uncertainty.normalize_uncertainty(Tensor(np.asarray(delta, dtype=np.float64))).data
    np.testing.assert_allclose(out[0, 0, 0], [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(out[1, 0, 0], [0.0, 1.0], atol=1e-9)


def test_weighted_prediction_argmax_invariance_under_constant_delta():
    # a class-constant delta_norm rescales every class equally per pixel,
    # so the arg-max class never changes
    rng = make_rng(3)
    m = rng.standard_normal((2, 4, 5, 5))
    delta = np.broadcast_to(rng.uniform(0.0, 1.0, size=(2, 1, 5, 5)),
                            (2, 4, 5, 5)).copy()
    base = np.argmax(ad.softmax(Tensor(m), axis=1).data, axis=1)
    weighted = uncertainty.weighted_prediction(Tensor(m), Tensor(delta)).data
    np.testing.assert_array_equal(np.argmax(weighted, axis=1), base)


def test_weighted_prediction_downweights_uncertain_pixels():
    m = np.zeros((1, 2, 1, 2))
    delta = np.zeros((1, 2, 1, 2))
    delta[0, :, 0, 1] = 1.0
    out = uncertainty.weighted_prediction(Tensor(m), Tensor(delta)).data
    assert out[0, 0, 0, 0] > out[0, 0, 0, 1]


def test_weighted_prediction_binary_uses_sigmoid():
    m = np.zeros((1, 1, 2, 2))
    out = uncertainty.weighted_prediction(Tensor(m), Tensor(np.zeros_like(m)),
                                          binary=True).data
    np.testing.assert_allclose(out, 0.5 / uncertainty.EPSILON, rtol=1e-6)


def test_uncertainty_image_takes_class_max():
    v = np.zeros((3, 2, 2))
    v[1, 0, 0] = 0.9
    img = uncertainty.uncertainty_image(v)
    assert img.shape == (2, 2)
    assert img[0, 0] == 0.9
