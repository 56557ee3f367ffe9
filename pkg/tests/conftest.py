import numpy as np
import pytest

from fsplaplace.nn import MlpSpec


def scalar_mlp(widths, activation, params, x):
    """Plain-loop network evaluation used as an independent oracle."""
    pos = 0
    h = [float(v) for v in x]
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        W = [[params[pos + i * fan_out + j] for j in range(fan_out)] for i in range(fan_in)]
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        z = [sum(h[i] * W[i][j] for i in range(fan_in)) + b[j] for j in range(fan_out)]
        if layer < n_layers - 1 and activation == "tanh":
            z = [np.tanh(v) for v in z]
        h = z
    return np.array(h)


def random_spec(rng, max_in=3, max_hidden=6, max_out=3, depth=None):
    depth = rng.integers(0, 3) if depth is None else depth
    widths = [int(rng.integers(1, max_in + 1))]
    widths += [int(rng.integers(1, max_hidden + 1)) for _ in range(depth)]
    widths.append(int(rng.integers(1, max_out + 1)))
    return MlpSpec(tuple(widths), "tanh")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
