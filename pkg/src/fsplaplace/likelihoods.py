"""Observation models: negative log-likelihoods, gradients and GGN blocks.

Curvature blocks are returned as the positive semidefinite Hessian of the
negative log-likelihood in output space, ``-d^2/df^2 log p(y | f)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigError, ShapeError


class Gaussian:
    """Homoskedastic Gaussian noise with standard deviation ``sigma``."""

    task = "regression"

    def __init__(self, sigma: float):
        if not np.isfinite(sigma) or sigma <= 0:
            raise ConfigError(f"noise scale must be positive, got {sigma!r}")
        self.sigma = float(sigma)

    def nll_batch(self, Y, F):
        Y = np.asarray(Y, dtype=np.float64).reshape(np.shape(F))
        O = F.shape[-1]
        r2 = np.sum((Y - F) ** 2, axis=-1)
        return 0.5 * r2 / self.sigma ** 2 + 0.5 * O * np.log(2 * np.pi * self.sigma ** 2)

    def grad_f(self, Y, F):
        """Gradient of the per-point NLL with respect to the outputs."""
        Y = np.asarray(Y, dtype=np.float64).reshape(np.shape(F))
        return (F - Y) / self.sigma ** 2

    def grad_log_sigma(self, Y, F):
        Y = np.asarray(Y, dtype=np.float64).reshape(np.shape(F))
        return -np.sum((Y - F) ** 2, axis=-1) / self.sigma ** 2 + F.shape[-1]

    def curvature_batch(self, F):
        F = np.atleast_2d(F)
        n, O = F.shape
        return np.broadcast_to(np.eye(O) / self.sigma ** 2, (n, O, O)).copy()

    def __repr__(self):
        return f"Gaussian(sigma={self.sigma!r})"


class Categorical:
    """Softmax likelihood over ``num_classes`` logits."""

    task = "classification"

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ConfigError("categorical likelihood needs at least two classes")
        self.num_classes = int(num_classes)

    def _labels(self, Y, n):
        y = np.asarray(Y).reshape(-1)
        if y.shape[0] != n:
            raise ShapeError("one label per output row is required")
        if np.any(y != np.round(y)) or np.any(y < 0) or np.any(y >= self.num_classes):
            raise ValueError(f"class labels must lie in 0..{self.num_classes - 1}")
        return y.astype(int)

    def nll_batch(self, Y, F):
        F = np.atleast_2d(F)
        y = self._labels(Y, F.shape[0])
        return logsumexp(F, axis=-1) - F[np.arange(F.shape[0]), y]

    def grad_f(self, Y, F):
        F = np.atleast_2d(F)
        y = self._labels(Y, F.shape[0])
        g = softmax(F, axis=-1)
        g[np.arange(F.shape[0]), y] -= 1.0
        return g

    def curvature_batch(self, F):
        p = softmax(np.atleast_2d(F), axis=-1)
        return np.einsum("ni,ij->nij", p, np.eye(p.shape[1])) - p[:, :, None] * p[:, None, :]

    def __repr__(self):
        return f"Categorical(num_classes={self.num_classes})"


def nll(lik, y, f) -> float:
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    return float(lik.nll_batch(np.reshape(y, (1, -1)), f)[0])


def curvature(lik, y, f) -> np.ndarray:
    """Output-space GGN block at ``f``; ``y`` is accepted but unused."""
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    return lik.curvature_batch(f)[0]
