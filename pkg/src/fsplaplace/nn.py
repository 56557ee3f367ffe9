"""Multilayer perceptrons on a flat parameter vector.

Parameters are stored layer by layer; each layer contributes its weight
matrix of shape ``(fan_in, fan_out)`` in row-major order followed by its bias
of length ``fan_out``. A layer maps ``h -> h @ W + b``; hidden layers apply the
activation, the output layer is affine.

Derivative products are exact (hand-written forward and reverse mode) and
batched: tangents/cotangents may carry a leading axis so that several
Jacobian-vector products are evaluated in one sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError

#: Largest number of float64 entries a dense Jacobian may occupy.
DENSE_CAP = 50_000_000

_ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ShapeError("layer_widths needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ShapeError(f"layer widths must be positive, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self):
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def unflatten(self, params):
        """Split ``params`` (..., P) into per-layer ``(W, b)`` views."""
        params = np.asarray(params)
        if params.shape[-1] != self.n_params:
            raise ShapeError(
                f"parameter vector has length {params.shape[-1]}, spec needs {self.n_params}"
            )
        lead = params.shape[:-1]
        layers = []
        pos = 0
        for fan_in, fan_out in self.layer_shapes:
            W = params[..., pos:pos + fan_in * fan_out].reshape(lead + (fan_in, fan_out))
            pos += fan_in * fan_out
            b = params[..., pos:pos + fan_out]
            pos += fan_out
            layers.append((W, b))
        return layers

    def to_json(self) -> str:
        return json.dumps({"layer_widths": list(self.layer_widths), "activation": self.activation})

    @classmethod
    def from_json(cls, text: str) -> "MlpSpec":
        d = json.loads(text)
        return cls(tuple(d["layer_widths"]), d.get("activation", "tanh"))


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _check_inputs(spec, params, X):
    params = np.asarray(params, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if spec.input_dim > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"inputs must have shape (n, {spec.input_dim}), got {X.shape}")
    if params.ndim != 1 or params.size != spec.n_params:
        raise ShapeError(f"parameter vector must have length {spec.n_params}")
    return params, X


def _act(spec, z):
    return np.tanh(z) if spec.activation == "tanh" else z


def _act_grad(spec, a):
    # derivative expressed through the activation output
    return 1.0 - a * a if spec.activation == "tanh" else np.ones_like(a)


def forward(spec: MlpSpec, params, X) -> np.ndarray:
    """Evaluate the network on a batch ``X`` of shape (n, d); returns (n, O)."""
    params, X = _check_inputs(spec, params, X)
    layers = spec.unflatten(params)
    h = X
    for idx, (W, b) in enumerate(layers):
        h = h @ W + b
        if idx < len(layers) - 1:
            h = _act(spec, h)
    return h


def _forward_cache(spec, layers, X):
    hs = [X]
    h = X
    for idx, (W, b) in enumerate(layers):
        h = h @ W + b
        if idx < len(layers) - 1:
            h = _act(spec, h)
        hs.append(h)
    return hs


def jvp_batch(spec: MlpSpec, params, X, tangents) -> np.ndarray:
    """Forward-mode products ``J(X) v`` for one or many tangents.

    ``tangents`` has shape (P,) or (k, P); the result has shape (n, O) or
    (k, n, O) respectively.
    """
    params, X = _check_inputs(spec, params, X)
    tangents = np.asarray(tangents, dtype=np.float64)
    single = tangents.ndim == 1
    T = tangents[None] if single else tangents
    if T.ndim != 2 or T.shape[1] != spec.n_params:
        raise ShapeError(f"tangents must have trailing length {spec.n_params}, got {tangents.shape}")
    layers = spec.unflatten(params)
    dlayers = spec.unflatten(T)
    h = X
    dh = np.zeros((T.shape[0],) + X.shape)
    for idx, ((W, b), (dW, db)) in enumerate(zip(layers, dlayers)):
        z = h @ W + b
        dz = dh @ W + np.einsum("ni,kio->kno", h, dW) + db[:, None, :]
        if idx < len(layers) - 1:
            h = _act(spec, z)
            dh = _act_grad(spec, h) * dz
        else:
            h, dh = z, dz
    return dh[0] if single else dh


def vjp_batch(spec: MlpSpec, params, X, cotangents) -> np.ndarray:
    """Reverse-mode products ``J(X)^T u`` summed over the batch.

    ``cotangents`` has shape (n, O) or (k, n, O); the result has shape (P,)
    or (k, P).
    """
    params, X = _check_inputs(spec, params, X)
    U = np.asarray(cotangents, dtype=np.float64)
    single = U.ndim == 2
    G = U[None] if single else U
    if G.ndim != 3 or G.shape[1:] != (X.shape[0], spec.output_dim):
        raise ShapeError(
            f"cotangents must have shape (..., {X.shape[0]}, {spec.output_dim}), got {U.shape}"
        )
    layers = spec.unflatten(params)
    hs = _forward_cache(spec, layers, X)
    grads = []
    g = G
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        h_prev = hs[idx]
        grads.append(g.sum(axis=1))
        grads.append(np.einsum("ni,kno->kio", h_prev, g).reshape(G.shape[0], -1))
        if idx > 0:
            g = (g @ W.T) * _act_grad(spec, h_prev)
    out = np.concatenate(grads[::-1], axis=1)
    return out[0] if single else out


def jvp(spec: MlpSpec, params, x, tangent) -> np.ndarray:
    """``J(x) v`` at a single input; returns a length-O vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    tangent = np.asarray(tangent, dtype=np.float64)
    if tangent.ndim != 1:
        raise ShapeError("tangent must be a flat parameter vector")
    return jvp_batch(spec, params, x, tangent)[0]


def vjp(spec: MlpSpec, params, x, cotangent) -> np.ndarray:
    """``J(x)^T u`` at a single input; returns a parameter-length vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    u = np.asarray(cotangent, dtype=np.float64)
    if u.shape != (spec.output_dim,):
        raise ShapeError(f"cotangent must have length {spec.output_dim}, got shape {u.shape}")
    return vjp_batch(spec, params, x, u[None, :])


def jacobian(spec: MlpSpec, params, X, max_entries: int = DENSE_CAP) -> np.ndarray:
    """Dense Jacobian of shape (n*O, P); row ``i*O + o`` is d f_o(x_i) / d params.

    Built from per-example reverse sweeps with one-hot output cotangents.
    """
    params, X = _check_inputs(spec, params, X)
    n, O, P = X.shape[0], spec.output_dim, spec.n_params
    if n * O * P > max_entries:
        raise MemoryError(f"dense Jacobian needs {n * O * P} entries, cap is {max_entries}")
    if n == 0:
        return np.zeros((0, P))
    layers = spec.unflatten(params)
    hs = _forward_cache(spec, layers, X)
    # g[o, i, :] = d f_o(x_i) / d (layer output), kept per example
    g = np.broadcast_to(np.eye(O)[:, None, :], (O, n, O)).copy()
    blocks = []
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        h_prev = hs[idx]
        blocks.append(g)
        blocks.append(np.einsum("ni,onj->onij", h_prev, g).reshape(O, n, -1))
        if idx > 0:
            g = (g @ W.T) * _act_grad(spec, h_prev)
    J = np.concatenate(blocks[::-1], axis=2)  # (O, n, P)
    return J.transpose(1, 0, 2).reshape(n * O, P)


def save_checkpoint(path, spec: MlpSpec, params) -> None:
    """Write a JSON header line followed by little-endian float64 parameters."""
    params = np.asarray(params, dtype=np.float64)
    if params.size != spec.n_params:
        raise ShapeError("parameter vector does not match spec")
    with open(path, "wb") as fh:
        fh.write(spec.to_json().encode("utf-8") + b"\n")
        fh.write(params.astype("<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    spec = MlpSpec.from_json(header.decode("utf-8"))
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if params.size != spec.n_params:
        raise ShapeError(f"checkpoint holds {params.size} values, spec needs {spec.n_params}")
    return spec, params
