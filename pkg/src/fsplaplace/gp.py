"""Gaussian-process prior object, prior sampling and exact GP regression."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError
from .kernels import Kernel, MultiOutputKernel, _as_points, cholesky_solve, jittered_cholesky


@dataclass(frozen=True)
class GpPrior:
    """Constant-mean GP prior over ``O`` independent outputs.

    ``mean`` is a scalar or a length-O vector of per-output constants.
    """

    kernel: MultiOutputKernel
    mean: object = 0.0
    jitter: float = 1e-8
    max_jitter: float = 1e-4

    @classmethod
    def from_kernel(cls, kernel: Kernel, n_outputs: int = 1, mean=0.0, **kw) -> "GpPrior":
        return cls(MultiOutputKernel.shared(kernel, n_outputs), mean, **kw)

    @property
    def n_outputs(self) -> int:
        return self.kernel.n_outputs

    def mean_at(self, X) -> np.ndarray:
        X = _as_points(X)
        m = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (self.n_outputs,))
        return np.broadcast_to(m, (X.shape[0], self.n_outputs)).copy()

    def gram(self, X, Y=None) -> np.ndarray:
        return self.kernel.gram(X, Y)

    def cholesky(self, K):
        return jittered_cholesky(K, self.jitter, self.max_jitter)


def sample_prior(prior: GpPrior, X, n_samples: int, seed: int) -> np.ndarray:
    """Draw prior function values at ``X``; rows are flattened with index ``i*O + o``."""
    X = _as_points(X)
    K = prior.gram(X)
    L, _ = prior.cholesky(K)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_samples, K.shape[0]))
    return prior.mean_at(X).reshape(-1) + eps @ L.T


@dataclass(frozen=True)
class GpPosterior:
    X: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    prior: GpPrior
    noise: float

    def predict(self, Xq):
        """Posterior mean and marginal variance of the latent function at ``Xq``."""
        Xq = _as_points(Xq)
        k = self.prior.kernel.kernels[0]
        m = self.prior.mean_at(Xq)[:, 0]
        prior_var = k.diag(Xq)
        if self.X.shape[0] == 0:
            return m, prior_var
        Kqx = k(Xq, self.X)
        mean = m + Kqx @ self.alpha
        V = solve_triangular(self.chol, Kqx.T, lower=True)
        var = prior_var - np.sum(V * V, axis=0)
        if np.any(var < -1e-10 * np.maximum(prior_var, 1.0)):
            raise NumericalError("negative posterior variance beyond tolerance")
        return mean, np.maximum(var, 0.0)


def _noisy_cholesky(prior, K):
    # the noise term already regularizes K; jitter only if it is not enough
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return prior.cholesky(K)[0]


def _regression_targets(prior, X, y):
    if prior.n_outputs != 1:
        raise ValueError("GP regression supports a single output")
    X = _as_points(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    return X, y - prior.mean_at(X)[:, 0]


def gp_regress(prior: GpPrior, X, y, noise: float) -> GpPosterior:
    X, r = _regression_targets(prior, X, y)
    k = prior.kernel.kernels[0]
    if X.shape[0] == 0:
        return GpPosterior(X, np.zeros((0, 0)), np.zeros(0), prior, noise)
    K = k(X) + noise ** 2 * np.eye(X.shape[0])
    L = _noisy_cholesky(prior, K)
    alpha = cholesky_solve(L, r)
    return GpPosterior(X, L, alpha, prior, noise)


def lml_terms(prior: GpPrior, X, y, noise: float):
    """Return ``(fit, complexity, constant)`` with ``sum == log marginal likelihood``."""
    X, r = _regression_targets(prior, X, y)
    n = X.shape[0]
    if n == 0:
        return 0.0, 0.0, 0.0
    K = prior.kernel.kernels[0](X) + noise ** 2 * np.eye(n)
    L = _noisy_cholesky(prior, K)
    fit = -0.5 * float(r @ cholesky_solve(L, r))
    complexity = -float(np.sum(np.log(np.diag(L))))
    const = -0.5 * n * np.log(2 * np.pi)
    return fit, complexity, const


def log_marginal_likelihood(prior: GpPrior, X, y, noise: float) -> float:
    return float(sum(lml_terms(prior, X, y, noise)))


@dataclass
class GridSearchResult:
    params: dict
    lml: float
    table: list = field(default_factory=list)


def grid_search(make_kernel, X, y, grid: dict, noise=None, mean=0.0) -> GridSearchResult:
    """Exhaustive search maximizing the log marginal likelihood.

    ``make_kernel(**params)`` builds a kernel from one grid point. ``grid``
    maps parameter names to candidate values; the special key ``"noise"`` is
    routed to the likelihood instead of the kernel when ``noise`` is None.
    Ties are broken by grid order.
    """
    names = list(grid)
    best = None
    table = []
    for values in itertools.product(*(grid[n] for n in names)):
        params = dict(zip(names, values))
        kparams = {k: v for k, v in params.items() if k != "noise"}
        sn = params.get("noise", noise)
        prior = GpPrior.from_kernel(make_kernel(**kparams), 1, mean)
        try:
            value = log_marginal_likelihood(prior, X, y, sn)
        except NumericalError:
            value = -np.inf
        table.append((params, value))
        if best is None or value > best[1]:
            best = (params, value)
    return GridSearchResult(best[0], best[1], table)
