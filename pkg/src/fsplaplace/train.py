"""MAP training under the context-point RKHS-norm regularizer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, TrainingError
from .gp import GpPrior
from .kernels import cholesky_solve
from .likelihoods import Gaussian
from .nn import MlpSpec, forward, vjp_batch


def _residual(prior: GpPrior, spec: MlpSpec, params, C):
    F = forward(spec, params, C)
    if F.shape[1] != prior.n_outputs:
        raise ConfigError(f"prior has {prior.n_outputs} outputs, network has {F.shape[1]}")
    return F - prior.mean_at(C)


def _reg_and_dual(prior, spec, params, C):
    R = _residual(prior, spec, params, C)
    K = prior.gram(C)
    L, _ = prior.cholesky(K)
    alpha = cholesky_solve(L, R.reshape(-1))
    return float(R.reshape(-1) @ alpha), alpha.reshape(R.shape)


def rkhs_norm_estimate(prior: GpPrior, spec: MlpSpec, params, C) -> float:
    """Squared RKHS norm of the minimum-norm interpolant of ``f - m`` at ``C``."""
    value, _ = _reg_and_dual(prior, spec, params, C)
    return value


def fsp_objective_and_grad(spec, params, prior, likelihood, X, y, C, N):
    """Scaled minibatch NLL plus half the RKHS-norm estimate, with its gradient.

    Returns ``(objective, grad, nll_term, reg_term)``.
    """
    params = np.asarray(params, dtype=np.float64)
    b = X.shape[0]
    grad = np.zeros_like(params)
    nll_term = 0.0
    if b > 0:
        F = forward(spec, params, X)
        scale = N / b
        nll_term = scale * float(np.sum(likelihood.nll_batch(y, F)))
        grad += vjp_batch(spec, params, X, scale * likelihood.grad_f(y, F))
    reg, dual = _reg_and_dual(prior, spec, params, C)
    grad += vjp_batch(spec, params, C, dual)
    reg_term = 0.5 * reg
    return nll_term + reg_term, grad, nll_term, reg_term


def fsp_objective(spec, params, prior, likelihood, X, y, C, N) -> float:
    return fsp_objective_and_grad(spec, params, prior, likelihood, X, y, C, N)[0]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    context_count: int = 100
    learning_rate: float = 1e-3
    max_epochs: int = 1000
    patience: int = 50
    eval_every: int = 0  # steps between validation checks; 0 means once per epoch
    jitter: float = 1e-8
    seed: int = 0
    learn_noise: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.context_count < 1:
            raise ConfigError("batch_size and context_count must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class TrainResult:
    params: np.ndarray
    likelihood: object
    log: list = field(default_factory=list)
    best_step: int = -1
    stopped_early: bool = False


def _context_seed(seed, step):
    # independent per-step stream, reproducible regardless of evaluation order
    return np.random.SeedSequence([seed, 1, step])


def train_map(spec, params, prior, likelihood, dataset, sampler, config: TrainConfig, val=None) -> TrainResult:
    """Adam on the regularized objective, resampling context points every step.

    With a non-empty ``val`` dataset, training stops once the validation NLL
    has not improved for ``config.patience`` evaluations and the best
    parameters are returned.
    """
    if prior.jitter != config.jitter:
        prior = replace(prior, jitter=config.jitter)
    params = np.array(params, dtype=np.float64)
    N = len(dataset)
    learn_noise = config.learn_noise and isinstance(likelihood, Gaussian)
    log_sigma = np.log(likelihood.sigma) if learn_noise else None
    opt = Adam(config.learning_rate)
    noise_opt = Adam(config.learning_rate) if learn_noise else None
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))

    steps_per_epoch = max(1, -(-N // config.batch_size))
    eval_every = config.eval_every or steps_per_epoch
    use_val = val is not None and len(val) > 0
    best = (np.inf, params.copy(), log_sigma, -1)
    bad_evals = 0
    log = []
    step = 0
    stopped = False
    for _ in range(config.max_epochs):
        order = shuffle_rng.permutation(N)
        for start in range(0, max(N, 1), config.batch_size):
            idx = order[start:start + config.batch_size]
            lik = Gaussian(np.exp(log_sigma)) if learn_noise else likelihood
            C = sampler.sample(config.context_count, _context_seed(config.seed, step))
            Xb, yb = dataset.X[idx], dataset.y[idx]
            obj, grad, nll_term, reg_term = fsp_objective_and_grad(spec, params, prior, lik, Xb, yb, C, N)
            for name, value in (("nll_term", nll_term), ("reg_term", reg_term), ("gradient", grad)):
                if not np.all(np.isfinite(value)):
                    raise TrainingError(step, name, value if np.ndim(value) == 0 else "non-finite entries")
            log.append((step, nll_term, reg_term, obj))
            if learn_noise and len(idx):
                F = forward(spec, params, Xb)
                g_sigma = N / len(idx) * float(np.sum(lik.grad_log_sigma(yb, F)))
                log_sigma = float(noise_opt.step(np.array([log_sigma]), np.array([g_sigma]))[0])
            params = opt.step(params, grad)
            step += 1
            if use_val and step % eval_every == 0:
                lik = Gaussian(np.exp(log_sigma)) if learn_noise else likelihood
                v = float(np.mean(lik.nll_batch(val.y, forward(spec, params, val.X))))
                if not np.isfinite(v):
                    raise TrainingError(step, "validation nll", v)
                if v < best[0]:
                    best = (v, params.copy(), log_sigma, step)
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= config.patience:
                        stopped = True
                        break
        if stopped:
            break

    best_step = step
    if use_val and best[3] >= 0:
        _, params, log_sigma, best_step = best
    final_lik = Gaussian(np.exp(log_sigma)) if learn_noise else likelihood
    return TrainResult(params, final_lik, log, best_step, stopped)


def write_train_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "nll_term", "reg_term", "objective"])
        for step, a, b, c in log:
            w.writerow([step, f"{a:.17g}", f"{b:.17g}", f"{c:.17g}"])
