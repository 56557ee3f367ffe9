"""Covariance functions, multi-output Gram matrices and jittered solves.

Kernel expressions
------------------
Kernels can be written as nested calls, parsed with :func:`parse_kernel`::

    scaled(0.5, product(rbf(l=1.0), periodic(l=0.5, T=1.0)))

Base kernels take keyword hyperparameters ``var`` (signal variance, default
1) and ``l`` (lengthscale, scalar or list for per-dimension scales):

    rbf, matern12, matern32, matern52, rq (extra ``alpha``), periodic (extra ``T``)

Combinators: ``sum(k1, k2)``, ``product(k1, k2)``, ``scaled(c, k)`` where
``c`` is an amplitude, i.e. the covariance is multiplied by ``c**2``.
"""

from __future__ import annotations

import ast

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConfigError, NumericalError, ShapeError

#: Largest (n*O)^2 for which gram_matvec materializes the full matrix.
MATVEC_DENSE_CAP = 4_000_000


def _as_points(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def _positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ConfigError(f"{name} must be strictly positive, got {value!r}")
    return arr if arr.ndim else float(arr)


class Kernel:
    """Scalar covariance function; subclasses implement ``__call__``."""

    stationary = False

    def __call__(self, X, Y=None) -> np.ndarray:
        raise NotImplementedError

    def eval(self, x, y) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if x.shape != y.shape:
            raise ShapeError("kernel arguments must have the same dimension")
        return float(self(x[None, :], y[None, :])[0, 0])

    def diag(self, X) -> np.ndarray:
        X = _as_points(X)
        return np.array([self(x[None], x[None])[0, 0] for x in X])

    def __add__(self, other):
        return Sum(self, other)

    def __mul__(self, other):
        return Product(self, other)


class Stationary(Kernel):
    """Kernels of the form ``var * g(r)`` with ``r`` the scaled distance."""

    stationary = True

    def __init__(self, var=1.0, lengthscale=1.0):
        self.var = _positive("signal variance", var)
        self.lengthscale = _positive("lengthscale", lengthscale)

    def _scaled_diff(self, X, Y):
        X = _as_points(X)
        Y = X if Y is None else _as_points(Y)
        if X.shape[1] != Y.shape[1]:
            raise ShapeError(f"point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
        ls = np.broadcast_to(self.lengthscale, (X.shape[1],))
        return (X[:, None, :] - Y[None, :, :]) / ls

    def _r(self, X, Y):
        return np.sqrt(np.sum(self._scaled_diff(X, Y) ** 2, axis=-1))

    def diag(self, X):
        return np.full(_as_points(X).shape[0], self.var)

    def __repr__(self):
        return f"{type(self).__name__}(var={self.var!r}, lengthscale={self.lengthscale!r})"


class RBF(Stationary):
    def __call__(self, X, Y=None):
        d = self._scaled_diff(X, Y)
        return self.var * np.exp(-0.5 * np.sum(d * d, axis=-1))


class Matern12(Stationary):
    def __call__(self, X, Y=None):
        return self.var * np.exp(-self._r(X, Y))


class Matern32(Stationary):
    def __call__(self, X, Y=None):
        s = np.sqrt(3.0) * self._r(X, Y)
        return self.var * (1.0 + s) * np.exp(-s)


class Matern52(Stationary):
    def __call__(self, X, Y=None):
        r = self._r(X, Y)
        s = np.sqrt(5.0) * r
        return self.var * (1.0 + s + 5.0 * r * r / 3.0) * np.exp(-s)


class RationalQuadratic(Stationary):
    def __init__(self, var=1.0, lengthscale=1.0, alpha=1.0):
        super().__init__(var, lengthscale)
        self.alpha = _positive("shape alpha", alpha)

    def __call__(self, X, Y=None):
        d = self._scaled_diff(X, Y)
        r2 = np.sum(d * d, axis=-1)
        return self.var * (1.0 + r2 / (2.0 * self.alpha)) ** (-self.alpha)


class Periodic(Stationary):
    """Exp-sine-squared kernel, summed over input dimensions."""

    def __init__(self, var=1.0, lengthscale=1.0, period=1.0):
        super().__init__(var, lengthscale)
        self.period = _positive("period", period)

    def __call__(self, X, Y=None):
        X = _as_points(X)
        Y = X if Y is None else _as_points(Y)
        if X.shape[1] != Y.shape[1]:
            raise ShapeError(f"point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
        diff = X[:, None, :] - Y[None, :, :]
        s = np.sin(np.pi * diff / self.period)
        ls = np.broadcast_to(self.lengthscale, (X.shape[1],))
        return self.var * np.exp(-2.0 * np.sum((s / ls) ** 2, axis=-1))


class Linear(Kernel):
    """Feature kernel ``phi(x)^T C phi(x')`` with ``phi(x) = (x, 1)``.

    This is the function-space image of a Gaussian prior ``N(0, C)`` on the
    weights and bias of an affine model.
    """

    def __init__(self, weight_cov):
        C = np.atleast_2d(np.asarray(weight_cov, dtype=np.float64))
        if C.shape[0] != C.shape[1] or not np.allclose(C, C.T):
            raise ConfigError("weight covariance must be a symmetric matrix")
        if np.linalg.eigvalsh(C).min() <= 0:
            raise ConfigError("weight covariance must be positive definite")
        self.weight_cov = C

    def features(self, X):
        X = _as_points(X)
        if X.shape[1] + 1 != self.weight_cov.shape[0]:
            raise ShapeError("input dimension does not match weight covariance")
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def __call__(self, X, Y=None):
        FX = self.features(X)
        FY = FX if Y is None else self.features(Y)
        return FX @ self.weight_cov @ FY.T


class Sum(Kernel):
    def __init__(self, k1, k2):
        self.k1, self.k2 = k1, k2
        self.stationary = k1.stationary and k2.stationary

    def __call__(self, X, Y=None):
        return self.k1(X, Y) + self.k2(X, Y)

    def diag(self, X):
        return self.k1.diag(X) + self.k2.diag(X)


class Product(Kernel):
    def __init__(self, k1, k2):
        self.k1, self.k2 = k1, k2
        self.stationary = k1.stationary and k2.stationary

    def __call__(self, X, Y=None):
        return self.k1(X, Y) * self.k2(X, Y)

    def diag(self, X):
        return self.k1.diag(X) * self.k2.diag(X)


class Scaled(Kernel):
    """Amplitude scaling: covariance ``c**2 * k``."""

    def __init__(self, c, k):
        self.c = _positive("scale", c)
        self.k = k
        self.stationary = k.stationary

    def __call__(self, X, Y=None):
        return self.c ** 2 * self.k(X, Y)

    def diag(self, X):
        return self.c ** 2 * self.k.diag(X)


class MultiOutputKernel:
    """Independent outputs; row ``i*O + o`` indexes output ``o`` at point ``i``."""

    def __init__(self, kernels):
        kernels = list(kernels)
        if not kernels:
            raise ConfigError("need at least one output kernel")
        self.kernels = kernels

    @classmethod
    def shared(cls, kernel: Kernel, n_outputs: int) -> "MultiOutputKernel":
        return cls([kernel] * n_outputs)

    @property
    def n_outputs(self) -> int:
        return len(self.kernels)

    def gram(self, X, Y=None) -> np.ndarray:
        X = _as_points(X)
        Y = X if Y is None else _as_points(Y)
        O = self.n_outputs
        G = np.zeros((X.shape[0] * O, Y.shape[0] * O))
        if len(X) and len(Y):
            for o, k in enumerate(self.kernels):
                G[o::O, o::O] = k(X, Y)
        if Y is X:
            G = 0.5 * (G + G.T)
        return G

    def diag(self, X) -> np.ndarray:
        X = _as_points(X)
        return np.stack([k.diag(X) for k in self.kernels], axis=1).reshape(-1)

    def matvec(self, X, v, dense_cap: int = MATVEC_DENSE_CAP, chunk: int = 512) -> np.ndarray:
        """``gram(X) @ v`` without forming the full matrix above ``dense_cap``."""
        X = _as_points(X)
        n, O = X.shape[0], self.n_outputs
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != n * O:
            raise ShapeError(f"vector length {v.shape[0]} does not match {n} points x {O} outputs")
        if (n * O) ** 2 <= dense_cap:
            return self.gram(X) @ v
        V = v.reshape((n, O) + v.shape[1:])
        out = np.empty_like(V)
        for o, k in enumerate(self.kernels):
            for start in range(0, n, chunk):
                out[start:start + chunk, o] = k(X[start:start + chunk], X) @ V[:, o]
        return out.reshape(v.shape)

    def operator(self, X, dense_cap: int = MATVEC_DENSE_CAP):
        """Return a callable ``v -> gram(X) @ v`` bound to ``X``."""
        X = _as_points(X)
        if (X.shape[0] * self.n_outputs) ** 2 <= dense_cap:
            G = self.gram(X)
            return lambda v: G @ v
        return lambda v: self.matvec(X, v, dense_cap=dense_cap)


def gram(kernel, X, Y=None) -> np.ndarray:
    if isinstance(kernel, Kernel):
        kernel = MultiOutputKernel([kernel])
    return kernel.gram(X, Y)


def gram_matvec(kernel, X, v, dense_cap: int = MATVEC_DENSE_CAP) -> np.ndarray:
    if isinstance(kernel, Kernel):
        kernel = MultiOutputKernel([kernel])
    return kernel.matvec(X, v, dense_cap=dense_cap)


def jittered_cholesky(K, tau=1e-8, max_tau=1e-4):
    """Lower Cholesky factor of ``K + jitter*I``, escalating jitter tenfold on failure.

    Jitter is ``tau * mean(diag(K))``. Returns ``(L, jitter)``.
    """
    if not 0 < tau <= max_tau:
        raise ValueError("need 0 < tau <= max_tau")
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if not np.all(np.isfinite(K)):
        raise NumericalError("Gram matrix has non-finite entries")
    scale = float(np.mean(np.diag(K)))
    if scale <= 0:
        scale = 1.0
    t = tau
    while t <= max_tau * (1 + 1e-12):
        jitter = t * scale
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            t *= 10.0
    raise NumericalError(f"Cholesky failed with jitter up to {max_tau:g} * mean(diag)")


def cholesky_solve(L, b):
    return cho_solve((L, True), b)


# kernel expression language

_BASE = {
    "rbf": RBF,
    "matern12": Matern12,
    "matern32": Matern32,
    "matern52": Matern52,
    "rq": RationalQuadratic,
    "periodic": Periodic,
}
_KWARG_NAMES = {"var": "var", "l": "lengthscale", "T": "period", "alpha": "alpha"}


def literal(node, text):
    """Evaluate a numeric literal or list of numeric literals from an AST node."""
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = literal(node.operand, text)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, (ast.List, ast.Tuple)):
        return [literal(e, text) for e in node.elts]
    raise ConfigError(f"expected a number at column {node.col_offset + 1} in {text!r}")


def parse_call(text: str):
    """Parse ``name(args...)`` into an AST call node, with column diagnostics."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"syntax error at column {exc.offset} in {text!r}: {exc.msg}") from None
    node = tree.body
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ConfigError(f"expected name(...) at column {node.col_offset + 1} in {text!r}")
    return node


def _build(node, text):
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ConfigError(f"expected a kernel call at column {node.col_offset + 1} in {text!r}")
    name = node.func.id.lower()
    col = node.col_offset + 1
    if name in ("sum", "product"):
        if len(node.args) != 2 or node.keywords:
            raise ConfigError(f"{name} takes exactly two kernels (column {col})")
        k1, k2 = (_build(a, text) for a in node.args)
        return Sum(k1, k2) if name == "sum" else Product(k1, k2)
    if name == "scaled":
        if len(node.args) != 2 or node.keywords:
            raise ConfigError(f"scaled takes (c, kernel) (column {col})")
        return Scaled(literal(node.args[0], text), _build(node.args[1], text))
    if name not in _BASE:
        raise ConfigError(f"unknown kernel {name!r} at column {col} in {text!r}")
    if node.args:
        raise ConfigError(f"{name} takes keyword arguments only (column {col})")
    kwargs = {}
    for kw in node.keywords:
        if kw.arg not in _KWARG_NAMES:
            raise ConfigError(f"unknown hyperparameter {kw.arg!r} for {name} at column {kw.value.col_offset + 1}")
        kwargs[_KWARG_NAMES[kw.arg]] = literal(kw.value, text)
    try:
        return _BASE[name](**kwargs)
    except TypeError:
        raise ConfigError(f"invalid hyperparameters {sorted(kwargs)} for {name} (column {col})") from None


def parse_kernel(text: str) -> Kernel:
    """Build a :class:`Kernel` from an expression such as ``rbf(l=0.5, var=2)``."""
    return _build(parse_call(text), text)
