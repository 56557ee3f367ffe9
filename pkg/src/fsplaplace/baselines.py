"""Weight-space MAP and full-GGN linearized Laplace with an isotropic prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .nn import DENSE_CAP, MlpSpec, forward, jacobian, vjp_batch
from .train import Adam, TrainResult


@dataclass(frozen=True)
class IsotropicPrior:
    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ConfigError("prior scale must be finite and positive")


@dataclass
class DensePosterior:
    map: np.ndarray
    precision: np.ndarray
    chol: np.ndarray  # lower factor of the precision


def map_objective_ws(spec, params, prior: IsotropicPrior, likelihood, X, y):
    """Summed NLL plus ``|theta|^2 / (2 sigma_p^2)``; returns ``(value, grad)``."""
    params = np.asarray(params, dtype=np.float64)
    value = 0.5 * float(params @ params) / prior.scale ** 2
    grad = params / prior.scale ** 2
    if X.shape[0]:
        F = forward(spec, params, X)
        value += float(np.sum(likelihood.nll_batch(y, F)))
        grad = grad + vjp_batch(spec, params, X, likelihood.grad_f(y, F))
    return value, grad


def train_map_ws(spec, params, prior, likelihood, dataset, learning_rate=1e-3, steps=2000,
                 batch_size=None, seed=0) -> TrainResult:
    """Adam on the weight-space MAP objective, minibatch NLL rescaled to the full set."""
    params = np.array(params, dtype=np.float64)
    N = len(dataset)
    b = batch_size or max(N, 1)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    opt = Adam(learning_rate)
    log = []
    order, pos = rng.permutation(N), 0
    for step in range(steps):
        if pos >= N:
            order, pos = rng.permutation(N), 0
        idx = order[pos:pos + b]
        pos += b
        Xb, yb = dataset.X[idx], dataset.y[idx]
        # rescale so the minibatch term is an unbiased estimate of the full NLL
        scale = N / len(idx) if len(idx) else 0.0
        reg = 0.5 * float(params @ params) / prior.scale ** 2
        grad = params / prior.scale ** 2
        nll = 0.0
        if len(idx):
            F = forward(spec, params, Xb)
            nll = scale * float(np.sum(likelihood.nll_batch(yb, F)))
            grad = grad + vjp_batch(spec, params, Xb, scale * likelihood.grad_f(yb, F))
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at step {step}")
        log.append((step, nll, reg, nll + reg))
        params = opt.step(params, grad)
    return TrainResult(params, likelihood, log, steps)


def ggn(spec: MlpSpec, params, X, likelihood, max_entries=DENSE_CAP) -> np.ndarray:
    """Dense ``sum_i J_i^T Lambda_i J_i``."""
    P = spec.n_params
    if P * P > max_entries:
        raise MemoryError(f"dense GGN needs {P * P} entries, cap is {max_entries}")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros((P, P))
    J = jacobian(spec, params, X, max_entries).reshape(X.shape[0], spec.output_dim, P)
    Lam = likelihood.curvature_batch(forward(spec, params, X))
    G = np.einsum("nop,noq,nqr->pr", J, Lam, J)
    return 0.5 * (G + G.T)


def laplace_ws(spec: MlpSpec, params, prior: IsotropicPrior, X, likelihood, max_entries=DENSE_CAP) -> DensePosterior:
    params = np.asarray(params, dtype=np.float64)
    H = ggn(spec, params, X, likelihood, max_entries) + np.eye(spec.n_params) / prior.scale ** 2
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NumericalError("weight-space precision is not positive definite") from None
    return DensePosterior(params.copy(), H, L)
