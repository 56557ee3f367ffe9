"""Linearized predictive distributions and evaluation metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import softmax

from .baselines import DensePosterior
from .kernels import _as_points
from .laplace import PosteriorFactors, _jvp_columns
from .likelihoods import Categorical, Gaussian
from .nn import forward, jacobian, jvp_batch


@dataclass
class PredictiveSummary:
    mean: np.ndarray  # (n, O)
    cov: np.ndarray  # (n, O, O)
    samples: np.ndarray | None = None

    @property
    def var(self) -> np.ndarray:
        return np.einsum("noo->no", self.cov)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))


def _dense_factor(spec, post: DensePosterior, Xq):
    # rows of J(x) L^{-T}: covariance J H^{-1} J^T = V^T V with V = L^{-1} J^T
    J = jacobian(spec, post.map, Xq)
    return solve_triangular(post.chol, J.T, lower=True)


def lin_predict(spec, posterior, Xq) -> PredictiveSummary:
    """Mean ``f(x, map)`` and marginal output covariance ``J Cov J^T`` per query."""
    Xq = _as_points(Xq)
    n, O = Xq.shape[0], spec.output_dim
    mean = forward(spec, posterior.map, Xq)
    if isinstance(posterior, PosteriorFactors):
        if posterior.rank == 0:
            return PredictiveSummary(mean, np.zeros((n, O, O)))
        B = _jvp_columns(spec, posterior.map, Xq, posterior.S, 64)
        cov = np.einsum("rno,rnp->nop", B, B)
    elif isinstance(posterior, DensePosterior):
        V = _dense_factor(spec, posterior, Xq).reshape(-1, n, O)
        cov = np.einsum("pno,pnq->noq", V, V)
    else:
        raise TypeError(f"unsupported posterior type {type(posterior).__name__}")
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return PredictiveSummary(mean, cov)


def sample_posterior(posterior, spec, Xq, n_samples, seed, eps=None) -> np.ndarray:
    """Linearized function samples ``f(x, map) + J(x)(w - map)``; shape (s, n, O).

    ``eps`` overrides the standard-normal draws (shape (s, rank) or (s, P)).
    """
    Xq = _as_points(Xq)
    mean = forward(spec, posterior.map, Xq)
    if isinstance(posterior, PosteriorFactors):
        dim = posterior.rank
    else:
        dim = spec.n_params
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal((n_samples, dim))
    eps = np.atleast_2d(eps)
    if dim == 0:
        return np.broadcast_to(mean, (eps.shape[0],) + mean.shape).copy()
    if isinstance(posterior, PosteriorFactors):
        delta = eps @ posterior.S.T
    else:
        # H = L L^T, so w - map = L^{-T} eps has covariance H^{-1}
        delta = solve_triangular(posterior.chol, eps.T, lower=True, trans="T").T
    return mean[None] + jvp_batch(spec, posterior.map, Xq, delta)


def _log_lik(likelihood, y, F):
    return -likelihood.nll_batch(y, F)


def expected_log_likelihood(posterior, spec, likelihood, X, y, n_samples=10, seed=0) -> float:
    """Average over data of the Monte Carlo mean of ``log p(y | f_sample(x))``."""
    F = sample_posterior(posterior, spec, X, n_samples, seed)
    ll = np.stack([_log_lik(likelihood, y, Fs) for Fs in F])
    return float(np.mean(ll))


def predictive_probs(posterior, spec, Xq, n_samples=100, seed=0) -> np.ndarray:
    """Monte Carlo average of softmax over linearized logit samples; (n, O)."""
    F = sample_posterior(posterior, spec, Xq, n_samples, seed)
    return softmax(F, axis=-1).mean(axis=0)


def predictive_entropy(probs) -> np.ndarray:
    p = np.clip(probs, 1e-300, 1.0)
    return -np.sum(probs * np.log(p), axis=-1)


def ece(probs, labels, n_bins=10) -> float:
    """Top-label expected calibration error with equal-width confidence bins."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if probs.shape[0] == 0:
        raise ValueError("ECE of an empty dataset is undefined")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to one")
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    # bin b holds confidences in (b/n, (b+1)/n]; confidence 0 joins the first bin
    bins = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        if mask.any():
            total += mask.mean() * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def ood_stump(scores_id, scores_ood):
    """Best single threshold separating ID (low score) from OOD (high score).

    Candidate thresholds are midpoints between consecutive sorted unique
    scores plus both ends. Returns ``(threshold, balanced_accuracy)``.
    """
    a = np.asarray(scores_id, dtype=np.float64).reshape(-1)
    b = np.asarray(scores_ood, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("both score sets must be nonempty")
    u = np.unique(np.concatenate([a, b]))
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])
    a_sorted, b_sorted = np.sort(a), np.sort(b)
    # predict OOD when score > t
    tnr = np.searchsorted(a_sorted, cands, side="right") / a.size
    tpr = 1.0 - np.searchsorted(b_sorted, cands, side="right") / b.size
    bal = 0.5 * (tnr + tpr)
    i = int(np.argmax(bal))
    return float(cands[i]), float(bal[i])


@dataclass
class MetricReport:
    expected_log_likelihood: float | None = None
    mse: float | None = None
    accuracy: float | None = None
    ece: float | None = None
    ood_accuracy: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "extra" and v is not None}
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def write_csv(self, path, label=""):
        d = self.as_dict()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method"] + sorted(d))
            w.writerow([label] + [f"{d[k]:.17g}" if isinstance(d[k], float) else d[k] for k in sorted(d)])


def evaluate(posterior, spec, likelihood, test, n_samples=10, seed=0, ood_X=None) -> MetricReport:
    """Metrics on a held-out set; OOD accuracy from entropy (classification) or variance."""
    report = MetricReport()
    report.expected_log_likelihood = expected_log_likelihood(posterior, spec, likelihood, test.X, test.y, n_samples, seed)
    if isinstance(likelihood, Gaussian):
        mean = forward(spec, posterior.map, test.X)
        report.mse = float(np.mean((mean - test.y) ** 2))
        if ood_X is not None:
            s_id = lin_predict(spec, posterior, test.X).var.sum(axis=1)
            s_ood = lin_predict(spec, posterior, ood_X).var.sum(axis=1)
            report.ood_accuracy = ood_stump(s_id, s_ood)[1]
    elif isinstance(likelihood, Categorical):
        probs = predictive_probs(posterior, spec, test.X, n_samples, seed)
        report.accuracy = float(np.mean(probs.argmax(axis=1) == test.y))
        report.ece = ece(probs, test.y)
        if ood_X is not None:
            s_id = predictive_entropy(probs)
            s_ood = predictive_entropy(predictive_probs(posterior, spec, ood_X, n_samples, seed))
            report.ood_accuracy = ood_stump(s_id, s_ood)[1]
    return report
