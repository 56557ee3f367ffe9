import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsplaplace.errors import ConfigError
from fsplaplace.likelihoods import Categorical, Gaussian, curvature, nll


def test_gaussian_zero_residual():
    for O in (1, 3):
        f = np.arange(O, dtype=float)
        assert nll(Gaussian(0.1), f, f) == pytest.approx(0.5 * O * math.log(2 * math.pi * 0.01), abs=1e-14)


def test_gaussian_closed_form():
    assert nll(Gaussian(1.0), [2.0], [0.0]) == pytest.approx(2 + 0.5 * math.log(2 * math.pi), abs=1e-14)


def test_categorical_uniform_logits():
    assert nll(Categorical(2), 0, [0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)


def test_categorical_large_logits_stable():
    assert nll(Categorical(3), 2, [1000.0, -1000.0, 0.0]) == pytest.approx(1000.0)


def test_invalid_labels_and_parameters():
    with pytest.raises(ValueError):
        nll(Categorical(2), 2, [0.0, 0.0])
    with pytest.raises(ValueError):
        nll(Categorical(2), 0.5, [0.0, 0.0])
    with pytest.raises(ConfigError):
        Gaussian(0.0)
    with pytest.raises(ConfigError):
        Categorical(1)


def test_gaussian_curvature():
    np.testing.assert_allclose(curvature(Gaussian(0.1), [0.0, 0.0], [1.0, 2.0]), 100 * np.eye(2), rtol=1e-12)


def test_categorical_curvature_uniform():
    np.testing.assert_allclose(curvature(Categorical(2), 0, [0.0, 0.0]), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_categorical_curvature_saturated():
    assert np.linalg.norm(curvature(Categorical(2), 0, [50.0, -50.0])) <= 1e-10


def test_curvature_independent_of_label(rng):
    f = rng.standard_normal(4)
    lik = Categorical(4)
    np.testing.assert_array_equal(curvature(lik, 0, f), curvature(lik, 3, f))


def _fd_hessian(fun, f, h=1e-4):
    O = f.size
    H = np.zeros((O, O))
    for a in range(O):
        for b in range(O):
            ea, eb = np.eye(O)[a] * h, np.eye(O)[b] * h
            H[a, b] = (fun(f + ea + eb) - fun(f + ea - eb) - fun(f - ea + eb) + fun(f - ea - eb)) / (4 * h * h)
    return H


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_categorical_curvature_properties(O, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(O) * 3
    y = int(rng.integers(O))
    lik = Categorical(O)
    H = curvature(lik, y, f)
    np.testing.assert_allclose(H, H.T, atol=1e-15)
    assert np.linalg.eigvalsh(H).min() >= -1e-10
    np.testing.assert_allclose(H.sum(axis=1), 0.0, atol=1e-12)
    fd = _fd_hessian(lambda g: nll(lik, y, g), f)
    assert np.max(np.abs(fd - H)) <= 1e-5 * max(1.0, np.max(np.abs(H)))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_gaussian_curvature_fd_and_psd(sigma, seed):
    rng = np.random.default_rng(seed)
    f, y = rng.standard_normal(2), rng.standard_normal(2)
    lik = Gaussian(sigma)
    H = curvature(lik, y, f)
    assert np.linalg.eigvalsh(H).min() > 0
    fd = _fd_hessian(lambda g: nll(lik, y, g), f, h=0.5 * sigma)
    np.testing.assert_allclose(fd, H, rtol=1e-5, atol=1e-5 * H.max())


def test_gradients_match_finite_differences(rng):
    h = 1e-6
    for lik, y in ((Gaussian(0.3), rng.standard_normal((1, 2))), (Categorical(3), np.array([1]))):
        F = rng.standard_normal((1, lik.num_classes if hasattr(lik, "num_classes") else 2))
        g = lik.grad_f(y, F)
        fd = np.array([(lik.nll_batch(y, F + h * e) - lik.nll_batch(y, F - h * e))[0] / (2 * h)
                       for e in np.eye(F.shape[1])[:, None, :]])
        np.testing.assert_allclose(g[0], fd, rtol=1e-6, atol=1e-8)
    lik, y, F = Gaussian(0.3), rng.standard_normal((1, 1)), rng.standard_normal((1, 1))
    fd = (Gaussian(0.3 * math.exp(h)).nll_batch(y, F) - Gaussian(0.3 * math.exp(-h)).nll_batch(y, F)) / (2 * h)
    assert lik.grad_log_sigma(y, F)[0] == pytest.approx(fd[0], rel=1e-6)
