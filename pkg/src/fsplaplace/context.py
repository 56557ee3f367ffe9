"""Context-point samplers used by the regularizer and the covariance step."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError
from .kernels import literal, parse_call


def _bounds(lower, upper, dim):
    lo = np.broadcast_to(np.asarray(lower, dtype=np.float64), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=np.float64), (dim,)).copy()
    if np.any(hi < lo):
        raise ConfigError(f"upper bound {hi} below lower bound {lo}")
    return lo, hi


class UniformBox:
    def __init__(self, lower, upper, dim=1):
        self.lower, self.upper = _bounds(lower, upper, dim)

    @property
    def dim(self):
        return self.lower.size

    def sample(self, M, seed):
        if M < 1:
            raise ConfigError("need at least one context point")
        rng = np.random.default_rng(seed)
        return rng.uniform(self.lower, self.upper, size=(M, self.dim))


class Grid:
    """Regular grid including the bounds.

    With ``counts`` unset, each dimension gets ``round(M ** (1/d))`` points and
    ``M`` must be a perfect power.
    """

    def __init__(self, lower, upper, dim=1, counts=None):
        self.lower, self.upper = _bounds(lower, upper, dim)
        self.counts = None if counts is None else tuple(int(c) for c in np.broadcast_to(counts, (dim,)))

    @property
    def dim(self):
        return self.lower.size

    def sample(self, M=None, seed=None):
        counts = self.counts
        if counts is None:
            if M is None or M < 1:
                raise ConfigError("need at least one context point")
            c = int(round(M ** (1.0 / self.dim)))
            if c ** self.dim != M:
                raise ConfigError(f"{M} points do not form a {self.dim}-D grid")
            counts = (c,) * self.dim
        elif M is not None and int(np.prod(counts)) != M:
            raise ConfigError(f"grid with counts {counts} has {int(np.prod(counts))} points, not {M}")
        axes = [
            np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2])
            for lo, hi, c in zip(self.lower, self.upper, counts)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


class Halton:
    """Unscrambled Halton sequence, starting at index ``skip + 1``.

    Index 0 of the radical-inverse sequence is the origin, so it is never
    emitted; ``skip=0`` in 1-D gives 1/2, 1/4, 3/4, ...
    """

    def __init__(self, lower, upper, dim=1, skip=0):
        self.lower, self.upper = _bounds(lower, upper, dim)
        self.skip = int(skip)

    @property
    def dim(self):
        return self.lower.size

    def sample(self, M, seed=None):
        if M < 1:
            raise ConfigError("need at least one context point")
        engine = qmc.Halton(d=self.dim, scramble=False)
        engine.fast_forward(self.skip + 1)
        unit = engine.random(M)
        return self.lower + unit * (self.upper - self.lower)


class FromDataset:
    """Resample context points from a fixed pool with replacement."""

    def __init__(self, pool):
        self.pool = np.asarray(pool, dtype=np.float64)
        if self.pool.ndim == 1:
            self.pool = self.pool.reshape(-1, 1)

    @property
    def dim(self):
        return self.pool.shape[1]

    def sample(self, M, seed):
        if self.pool.shape[0] == 0:
            raise ConfigError("context pool is empty")
        if M < 1:
            raise ConfigError("need at least one context point")
        rng = np.random.default_rng(seed)
        return self.pool[rng.integers(0, self.pool.shape[0], size=M)]


def sample_context(sampler, M, seed):
    return sampler.sample(M, seed)


_SAMPLERS = {"uniform": UniformBox, "grid": Grid, "halton": Halton}


def parse_sampler(text: str, dim: int, pool=None):
    """Build a sampler from e.g. ``uniform(lower=-2, upper=2)`` or ``dataset()``."""
    node = parse_call(text)
    name = node.func.id.lower()
    if node.args:
        raise ConfigError(f"{name} takes keyword arguments only")
    kwargs = {kw.arg: literal(kw.value, text) for kw in node.keywords}
    if name == "dataset":
        if kwargs:
            raise ConfigError("dataset() takes no arguments")
        if pool is None:
            raise ConfigError("dataset sampler needs training inputs")
        return FromDataset(pool)
    if name not in _SAMPLERS:
        raise ConfigError(f"unknown sampler {name!r} in {text!r}")
    allowed = {"lower", "upper"} | ({"counts"} if name == "grid" else set()) | ({"skip"} if name == "halton" else set())
    extra = set(kwargs) - allowed
    if extra:
        raise ConfigError(f"unknown sampler arguments {sorted(extra)} in {text!r}")
    if "lower" not in kwargs or "upper" not in kwargs:
        raise ConfigError(f"{name} needs lower= and upper= in {text!r}")
    return _SAMPLERS[name](dim=dim, **kwargs)
