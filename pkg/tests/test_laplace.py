import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsplaplace.errors import NumericalError
from fsplaplace.gp import GpPrior
from fsplaplace.kernels import RBF, Linear, Matern12, Matern52, Periodic, RationalQuadratic
from fsplaplace.laplace import (
    LanczosConfig, ProjectedCurvature, assemble_projected_curvature, context_variance_terms, fsp_laplace,
    initial_lanczos_vector, lanczos_pinv_factor, load_posterior, null_space_diagnostic, project_jacobian,
    save_posterior, truncate_and_factor,
)
from fsplaplace.likelihoods import Categorical, Gaussian
from fsplaplace.nn import MlpSpec, jacobian

from conftest import random_spec


def pinv_of(K, v0=None, **kw):
    v0 = np.ones(K.shape[0]) if v0 is None else v0
    return lanczos_pinv_factor(lambda v: K @ v, v0, LanczosConfig(**kw))


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    B = rng.standard_normal((n, rank)) * rng.uniform(0.1, 3.0, rank)
    return B @ B.T


def test_identity():
    f = pinv_of(np.eye(6), np.arange(1.0, 7.0))
    np.testing.assert_allclose(f.L @ f.L.T, np.eye(6), atol=1e-10)


def test_diagonal():
    f = pinv_of(np.diag([4.0, 1.0]), np.array([0.6, 0.8]))
    np.testing.assert_allclose(f.L @ f.L.T, np.diag([0.25, 1.0]), atol=1e-8)


def test_rank_one(rng):
    q = rng.standard_normal(5)
    f = pinv_of(np.outer(q, q), rng.standard_normal(5))
    assert f.L.shape[1] == 1
    np.testing.assert_allclose(f.L @ f.L.T, np.outer(q, q) / (q @ q) ** 2, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.floats(0.1, 1.0), st.integers(0, 100_000))
def test_factor_quality_against_dense_pinv(n, frac, seed):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, n, max(1, int(frac * n)))
    f = pinv_of(K, rng.standard_normal(n))
    assert np.all(np.isfinite(f.L))
    err = np.linalg.norm(K @ f.L @ f.L.T @ K - K) / np.linalg.norm(K)
    assert err <= 1e-6


def test_both_routes_agree(rng):
    K = random_psd(rng, 8)
    v0 = rng.standard_normal(8)
    ldl = pinv_of(K, v0)
    assert ldl.method == "ldl"
    eig = pinv_of(K, v0, eps_rel=0.5)  # forces the eigen route, dropping the small Ritz values
    assert eig.method == "eigh"
    np.testing.assert_allclose(ldl.L @ ldl.L.T, np.linalg.inv(K), rtol=1e-8, atol=1e-10)


def test_non_finite_matvec():
    with pytest.raises(NumericalError):
        lanczos_pinv_factor(lambda v: v * np.nan, np.ones(3))


def test_breakdown_restarts_until_range_is_exhausted():
    # start vector in a 2-d invariant subspace, range of dimension 3
    K = np.diag([1.0, 2.0, 3.0, 0.0])
    f = pinv_of(K, np.array([1.0, 1.0, 0.0, 0.0]))
    assert f.L.shape[1] == 3
    np.testing.assert_allclose(f.L @ f.L.T, np.diag([1.0, 0.5, 1 / 3, 0.0]), atol=1e-10)


def test_max_rank_limits_iterations(rng):
    K = random_psd(rng, 10)
    f = pinv_of(K, rng.standard_normal(10), max_rank=4)
    assert f.n_iter == 4 and f.L.shape[1] <= 4


def test_initial_vector_linear_model(rng):
    spec = MlpSpec((3, 1), "identity")
    C = rng.standard_normal((4, 3))
    v = initial_lanczos_vector(spec, rng.standard_normal(4), C)
    expect = C.sum(axis=1) + 1.0
    np.testing.assert_allclose(v, expect / np.linalg.norm(expect), atol=1e-14)
    assert abs(np.linalg.norm(v) - 1) <= 1e-12


def test_initial_vector_zero_weights():
    spec = MlpSpec((1, 4, 4, 2))
    v = initial_lanczos_vector(spec, np.zeros(spec.n_params), np.array([[0.3], [-1.0]]))
    # only output biases move the output at zero weights: J 1 = 1 for every row
    np.testing.assert_allclose(v, np.full(4, 0.5), atol=1e-14)


def test_initial_vector_fallback(caplog):
    spec = MlpSpec((1, 1), "identity")
    w = np.zeros(2)
    # J(C) 1 = x + 1 vanishes at x = -1
    v = initial_lanczos_vector(spec, w, np.array([[-1.0]]), seed=3)
    assert abs(np.linalg.norm(v) - 1) <= 1e-12
    assert "random start vector" in caplog.text


def test_project_jacobian(rng):
    spec = MlpSpec((2, 5, 2))
    w = rng.standard_normal(spec.n_params)
    C = rng.standard_normal((6, 2))
    assert np.all(project_jacobian(spec, w, C, np.zeros((12, 3))) == 0)
    L = rng.standard_normal((12, 7))
    J = jacobian(spec, w, C)
    np.testing.assert_allclose(project_jacobian(spec, w, C, L, chunk=3), J.T @ L, atol=1e-10)


def test_projected_prior_precision(rng):
    spec = MlpSpec((1, 4, 1))
    w = rng.standard_normal(spec.n_params)
    C = np.linspace(-2, 2, 8)[:, None]
    prior = GpPrior.from_kernel(Matern52(1.0, 0.5), 1)
    K = prior.gram(C)
    f = lanczos_pinv_factor(prior.kernel.operator(C), initial_lanczos_vector(spec, w, C))
    M = project_jacobian(spec, w, C, f.L)
    J = jacobian(spec, w, C)
    dense = J.T @ np.linalg.pinv(K) @ J
    assert np.linalg.norm(M @ M.T - dense) <= 1e-6 * np.linalg.norm(dense)


def test_no_data_curvature_is_singular_values(rng):
    spec = MlpSpec((1, 3, 1))
    M = rng.standard_normal((spec.n_params, 4))
    pc = assemble_projected_curvature(M, spec, rng.standard_normal(spec.n_params), np.zeros((0, 1)), Gaussian(1.0))
    np.testing.assert_array_equal(pc.A, np.diag(pc.D_M ** 2))
    assert np.all(np.diff(pc.D_M) <= 0)
    np.testing.assert_allclose(pc.U_M.T @ pc.U_M, np.eye(pc.U_M.shape[1]), atol=1e-8)


def _scalar_case(sp2, sn):
    # f(x) = w x + b evaluated at x = 0 is the scalar model f = b
    spec = MlpSpec((1, 1), "identity")
    prior = GpPrior.from_kernel(RBF(sp2, 1.0), 1, jitter=1e-14)
    zero = np.zeros((1, 1))
    return fsp_laplace(spec, np.zeros(2), prior, zero, zero, Gaussian(sn))


def test_scalar_conjugate_case():
    sp2, sn = 2.0, 0.5
    pf = _scalar_case(sp2, sn)
    np.testing.assert_allclose(pf.projected.A, [[1 / sp2 + 1 / sn ** 2]], rtol=1e-10)
    assert pf.k == 0 and pf.rank == 1
    np.testing.assert_allclose(pf.S @ pf.S.T, np.diag([0.0, 1 / (1 / sp2 + 1 / sn ** 2)]), atol=1e-12)


def test_random_curvature_symmetric(rng):
    spec = MlpSpec((2, 6, 3))
    w = rng.standard_normal(spec.n_params)
    M = rng.standard_normal((spec.n_params, 10))
    X = rng.standard_normal((7, 2))
    pc = assemble_projected_curvature(M, spec, w, X, Categorical(3))
    assert np.max(np.abs(pc.A - pc.A.T)) <= 1e-10


def test_no_data_equals_projected_prior(rng):
    spec = MlpSpec((1, 6, 1))
    w = rng.standard_normal(spec.n_params)
    C = np.array([[-1.5], [-0.2], [0.9], [2.0]])
    prior = GpPrior.from_kernel(RBF(1.0, 0.7), 1)
    pf = fsp_laplace(spec, w, prior, C, np.zeros((0, 1)), Gaussian(1.0))
    J = jacobian(spec, w, C)
    K = prior.gram(C)
    dense = J @ np.linalg.pinv(J.T @ np.linalg.pinv(K) @ J) @ J.T
    got = J @ pf.S @ pf.S.T @ J.T
    np.testing.assert_allclose(got, dense, atol=1e-7)
    # J(C) has full row rank here, so the projected prior is the prior itself
    np.testing.assert_allclose(np.diag(got), np.diag(K), atol=1e-7)
    assert pf.k == 0


def test_tiny_eigenvalue_is_dropped(rng):
    spec = MlpSpec((1, 3, 1))
    w = rng.standard_normal(spec.n_params)
    U, _ = np.linalg.qr(rng.standard_normal((spec.n_params, 3)))
    pc = ProjectedCurvature(np.diag([1e-300, 2.0, 5.0]), U, np.ones(3))
    pf = truncate_and_factor(pc, GpPrior.from_kernel(RBF(100.0), 1), spec, w, np.zeros((2, 1)))
    assert pf.k >= 1 and np.all(np.isfinite(pf.S))
    assert np.all(pf.eigenvalues > 1e-300)


def test_degenerate_bound_returns_rank_zero(rng):
    spec = MlpSpec((1, 1), "identity")
    pc = ProjectedCurvature(np.array([[1e-6]]), np.array([[0.0], [1.0]]), np.ones(1))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pf = truncate_and_factor(pc, GpPrior.from_kernel(RBF(1.0), 1), spec, np.zeros(2), np.zeros((1, 1)))
    assert pf.rank == 0 and pf.k == 1
    assert any("rank-0" in str(c.message) for c in caught)


KERNELS = [RBF(1.0, 0.5), Matern12(2.0, 1.0), RationalQuadratic(1.0, 0.7, alpha=2.0), Periodic(1.0, 1.0, period=3.0)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.booleans(), st.integers(0, 100_000))
def test_output_variance_bound(kidx, classify, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, max_in=2, max_hidden=8, depth=int(rng.integers(1, 3)))
    if classify:
        spec = MlpSpec(spec.layer_widths[:-1] + (2,))
        lik, n_out = Categorical(2), 2
    else:
        lik, n_out = Gaussian(float(rng.uniform(0.05, 1.0))), spec.output_dim
    w = rng.standard_normal(spec.n_params)
    C = rng.uniform(-3, 3, (int(rng.integers(1, 15)), spec.input_dim))
    X = rng.uniform(-1, 1, (int(rng.integers(0, 10)), spec.input_dim))
    prior = GpPrior.from_kernel(KERNELS[kidx], n_out)
    pf = fsp_laplace(spec, w, prior, C, X, lik)
    var = context_variance_terms(spec, w, C, pf.S).sum(axis=0) if pf.rank else np.zeros(C.shape[0] * n_out)
    assert np.all(var <= prior.kernel.diag(C) + 1e-8)


def _blr(Phi, y, cov, sn):
    prec = np.linalg.inv(cov) + Phi.T @ Phi / sn ** 2
    post = np.linalg.inv(prec)
    return post @ Phi.T @ y / sn ** 2, post


def _oracle_instance(rng, d=3, n=12, M=8):
    P = d + 1
    A = rng.standard_normal((P, P))
    Sigma = A @ A.T / P + 0.5 * np.eye(P)
    X = rng.standard_normal((n, d))
    Phi = np.hstack([X, np.ones((n, 1))])
    y = Phi @ rng.standard_normal(P) + 0.2 * rng.standard_normal(n)
    C = rng.standard_normal((M, d))
    return Sigma, X, Phi, y, C


def test_blr_oracle_covariance(rng):
    Sigma, X, Phi, y, C = _oracle_instance(rng)
    mu, cov = _blr(Phi, y, Sigma, 0.2)
    spec = MlpSpec((3, 1), "identity")
    prior = GpPrior.from_kernel(Linear(Sigma), 1)
    pf = fsp_laplace(spec, mu, prior, C, X, Gaussian(0.2))
    U = pf.projected.U_M
    restricted = U @ U.T @ cov @ U @ U.T
    assert np.linalg.norm(pf.S @ pf.S.T - restricted) <= 1e-4 * np.linalg.norm(restricted)


def test_blr_oracle_monotone_in_data(rng):
    Sigma, X, Phi, y, C = _oracle_instance(rng)
    spec = MlpSpec((3, 1), "identity")
    prior = GpPrior.from_kernel(Linear(Sigma), 1)
    Q = rng.standard_normal((5, 3))
    Pq = np.hstack([Q, np.ones((5, 1))])
    prev = None
    for n in range(0, 13, 3):
        mu, _ = _blr(Phi[:n], y[:n], Sigma, 0.2) if n else (np.zeros(4), None)
        pf = fsp_laplace(spec, mu, prior, C, X[:n], Gaussian(0.2))
        var = np.sum((Pq @ pf.S) ** 2, axis=1)
        if prev is not None:
            assert np.all(var <= prev + 1e-8)
        prev = var


def test_null_space_empty_for_spanning_linear_model(rng):
    Sigma, X, Phi, y, C = _oracle_instance(rng)
    spec = MlpSpec((3, 1), "identity")
    ratio = null_space_diagnostic(spec, np.zeros(4), X, GpPrior.from_kernel(Linear(Sigma), 1), C, Gaussian(0.2))
    assert ratio <= 1e-10


def test_null_space_refuses_large_models():
    spec = MlpSpec((1, 100, 100, 1))
    with pytest.raises(MemoryError):
        null_space_diagnostic(spec, np.zeros(spec.n_params), np.zeros((1, 1)), GpPrior.from_kernel(RBF(), 1),
                              np.zeros((1, 1)), Gaussian(1.0))


def test_deterministic_and_serializable(tmp_path, rng):
    spec = MlpSpec((1, 6, 1))
    w = rng.standard_normal(spec.n_params)
    C = rng.uniform(-2, 2, (10, 1))
    X = rng.uniform(-1, 1, (5, 1))
    prior = GpPrior.from_kernel(RBF(1.0, 0.5), 1)
    a = fsp_laplace(spec, w, prior, C, X, Gaussian(0.1))
    b = fsp_laplace(spec, w, prior, C, X, Gaussian(0.1))
    assert a.S.tobytes() == b.S.tobytes()
    save_posterior(tmp_path / "post.bin", a)
    c = load_posterior(tmp_path / "post.bin")
    assert c.S.tobytes() == a.S.tobytes() and c.map.tobytes() == a.map.tobytes()
    assert c.k == a.k and np.array_equal(c.eigenvalues, a.eigenvalues)


def test_config_validation():
    from fsplaplace.errors import ConfigError
    for kw in ({"max_rank": 0}, {"eps_rel": 0.0}, {"eps_rel": 1.0}, {"reorth": "none"}):
        with pytest.raises(ConfigError):
            LanczosConfig(**kw)
