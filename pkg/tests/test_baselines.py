import numpy as np
import pytest

from fsplaplace.baselines import IsotropicPrior, ggn, laplace_ws, map_objective_ws, train_map_ws
from fsplaplace.data import Dataset
from fsplaplace.errors import ConfigError
from fsplaplace.likelihoods import Categorical, Gaussian
from fsplaplace.nn import MlpSpec, forward
from fsplaplace.predict import lin_predict

from conftest import random_spec


def test_zero_params_pure_nll(rng):
    spec = MlpSpec((2, 4, 1))
    X, y = rng.standard_normal((5, 2)), rng.standard_normal((5, 1))
    lik = Gaussian(0.3)
    value, _ = map_objective_ws(spec, np.zeros(spec.n_params), IsotropicPrior(1.0), lik, X, y)
    assert value == pytest.approx(np.sum(lik.nll_batch(y, np.zeros((5, 1)))), rel=1e-15)


def test_flat_prior_limit(rng):
    spec = MlpSpec((2, 4, 1))
    w = rng.standard_normal(spec.n_params)
    X, y = rng.standard_normal((5, 2)), rng.standard_normal((5, 1))
    lik = Gaussian(0.3)
    value, _ = map_objective_ws(spec, w, IsotropicPrior(1e8), lik, X, y)
    assert abs(value - np.sum(lik.nll_batch(y, forward(spec, w, X)))) <= 1e-8


@pytest.mark.parametrize("classify", [False, True])
def test_gradient_finite_differences(classify, rng):
    for _ in range(5):
        spec = random_spec(rng, max_in=2)
        if classify:
            spec = MlpSpec(spec.layer_widths[:-1] + (2,))
            lik, y = Categorical(2), rng.integers(0, 2, 6)
        else:
            lik, y = Gaussian(0.5), rng.standard_normal((6, spec.output_dim))
        X = rng.standard_normal((6, spec.input_dim))
        w = rng.standard_normal(spec.n_params)
        prior = IsotropicPrior(0.8)
        _, g = map_objective_ws(spec, w, prior, lik, X, y)
        h = 1e-5
        fd = np.array([(map_objective_ws(spec, w + h * e, prior, lik, X, y)[0]
                        - map_objective_ws(spec, w - h * e, prior, lik, X, y)[0]) / (2 * h)
                       for e in np.eye(spec.n_params)])
        assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_conjugate_precision_and_predictive(rng):
    d, n, sn, sp = 3, 10, 0.2, 1.5
    X = rng.standard_normal((n, d))
    Phi = np.hstack([X, np.ones((n, 1))])
    y = Phi @ rng.standard_normal(d + 1) + sn * rng.standard_normal(n)
    prec = np.eye(d + 1) / sp ** 2 + Phi.T @ Phi / sn ** 2
    mu = np.linalg.solve(prec, Phi.T @ y / sn ** 2)
    spec = MlpSpec((d, 1), "identity")
    post = laplace_ws(spec, mu, IsotropicPrior(sp), X, Gaussian(sn))
    np.testing.assert_allclose(post.precision, prec, rtol=1e-8, atol=1e-8)
    Q = rng.standard_normal((4, d))
    Pq = np.hstack([Q, np.ones((4, 1))])
    pred = lin_predict(spec, post, Q)
    np.testing.assert_allclose(pred.mean[:, 0], Pq @ mu, rtol=1e-8)
    np.testing.assert_allclose(pred.var[:, 0], np.einsum("ij,jk,ik->i", Pq, np.linalg.inv(prec), Pq), rtol=1e-8)


def test_no_data_is_prior_precision():
    spec = MlpSpec((2, 3, 1))
    post = laplace_ws(spec, np.zeros(spec.n_params), IsotropicPrior(2.0), np.zeros((0, 2)), Gaussian(1.0))
    np.testing.assert_array_equal(post.precision, np.eye(spec.n_params) / 4.0)


def test_ggn_psd_and_precision_pd(rng):
    for _ in range(10):
        spec = MlpSpec((2, int(rng.integers(2, 6)), 3))
        w = rng.standard_normal(spec.n_params)
        X = rng.standard_normal((int(rng.integers(1, 8)), 2))
        G = ggn(spec, w, X, Categorical(3))
        assert np.linalg.eigvalsh(G).min() >= -1e-8
        laplace_ws(spec, w, IsotropicPrior(1.0), X, Categorical(3))


def test_dense_cap_and_prior_validation():
    spec = MlpSpec((1, 50, 1))
    with pytest.raises(MemoryError):
        ggn(spec, np.zeros(spec.n_params), np.zeros((2, 1)), Gaussian(1.0), max_entries=100)
    with pytest.raises(ConfigError):
        IsotropicPrior(0.0)


def test_training_reduces_objective(rng):
    X = rng.uniform(-1, 1, (30, 1))
    data = Dataset(X, np.sin(3 * X), "regression")
    spec = MlpSpec((1, 10, 1))
    w0 = rng.standard_normal(spec.n_params) * 0.3
    res = train_map_ws(spec, w0, IsotropicPrior(1.0), Gaussian(0.1), data, learning_rate=1e-2, steps=300)
    before = map_objective_ws(spec, w0, IsotropicPrior(1.0), Gaussian(0.1), data.X, data.y)[0]
    after = map_objective_ws(spec, res.params, IsotropicPrior(1.0), Gaussian(0.1), data.X, data.y)[0]
    assert after < 0.5 * before
