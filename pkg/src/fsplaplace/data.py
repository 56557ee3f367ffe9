"""Datasets and the two synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class Dataset:
    """Inputs (n, d) with regression targets (n, O) or integer class labels (n,)."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    split: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.task == "regression":
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.ndim == 1:
                self.y = self.y.reshape(-1, 1)
        elif self.task == "classification":
            self.y = np.asarray(self.y).astype(int).reshape(-1)
        else:
            raise ValueError(f"unknown task {self.task!r}")
        if self.y.shape[0] != self.X.shape[0]:
            raise ShapeError("inputs and targets have different lengths")
        if np.any(~np.isfinite(self.X)) or (self.task == "regression" and np.any(~np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")
        if self.split is not None:
            self.split = np.asarray(self.split)

    def __len__(self):
        return self.X.shape[0]

    @classmethod
    def empty(cls, dim=1, task="regression", n_outputs=1):
        y = np.zeros((0, n_outputs)) if task == "regression" else np.zeros(0, dtype=int)
        return cls(np.zeros((0, dim)), y, task)

    def subset(self, index) -> "Dataset":
        split = None if self.split is None else self.split[index]
        return Dataset(self.X[index], self.y[index], self.task, split)

    def part(self, tag: str) -> "Dataset":
        if self.split is None:
            raise ValueError("dataset has no split tags")
        return self.subset(self.split == tag)

    def with_split(self, fractions=(0.8, 0.1, 0.1), seed=0) -> "Dataset":
        """Tag points as train/val/test by a seeded permutation."""
        n = len(self)
        order = np.random.default_rng(seed).permutation(n)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        tags = np.empty(n, dtype=object)
        tags[order[:n_train]] = "train"
        tags[order[n_train:n_train + n_val]] = "val"
        tags[order[n_train + n_val:]] = "test"
        return Dataset(self.X, self.y, self.task, tags.astype(str))


def gen_sine(n: int, seed: int, noise: float = 0.1) -> Dataset:
    """``y = sin(2 pi x) + eps`` with ``x ~ U([-1, -0.5] U [0.5, 1])``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.5, 1.0, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    x = sign * u
    y = np.sin(2 * np.pi * x) + noise * rng.standard_normal(n)
    return Dataset(x.reshape(-1, 1), y.reshape(-1, 1), "regression")


def gen_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved unit half-circles with Gaussian jitter.

    Class 0 lies on ``(cos t, sin t)`` and class 1 on
    ``(1 - cos t, 0.5 - sin t)`` for ``t`` evenly spaced in ``[0, pi]``; the
    point order is shuffled.
    """
    if n < 2:
        raise ValueError("need at least two points")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0, np.pi, n0)
    t1 = np.linspace(0, np.pi, n1)
    X = np.concatenate([
        np.stack([np.cos(t0), np.sin(t0)], axis=1),
        np.stack([1 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
    ])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    X, y = X[order], y[order]
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return Dataset(X, y, "classification")
