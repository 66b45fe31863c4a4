"""Minimal dense neural-network engine.

Dense layers, four activations, hand-derived backpropagation and Adam, all
in float64 numpy.  A model's parameters travel as a flat, layer-ordered list
``[W0, b0, W1, b1, ...]`` (``ModelParams``); weights are ``(in_dim, out_dim)``
and biases ``(1, out_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ContractViolation

ModelParams = List[np.ndarray]

ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid", "identity")
LEAKY_SLOPE = 0.4
ADAM_EPS = 1e-8


def _as_matrix(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {x.shape}")
    return x


def _require_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ContractViolation(f"non-finite values produced by {what}")
    return x


def matmul(a, b):
    """Matrix product with an explicit shape contract."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _require_finite(a @ b, "matmul")


def leaky_relu(x, alpha=LEAKY_SLOPE):
    if alpha <= 0:
        raise ContractViolation("leaky_relu slope must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_grad(x, alpha=LEAKY_SLOPE):
    # derivative at exactly 0 is taken as 1
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0, alpha)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(kind, z, alpha=LEAKY_SLOPE):
    if kind == "leaky_relu":
        return leaky_relu(z, alpha)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "identity":
        return z
    raise ContractViolation(f"unknown activation {kind!r}")


def activation_grad(kind, z, out, alpha=LEAKY_SLOPE):
    """Elementwise derivative of ``activate`` given pre-activation and output."""
    if kind == "leaky_relu":
        return leaky_relu_grad(z, alpha)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "identity":
        return np.ones_like(z)
    raise ContractViolation(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """Affine map followed by an elementwise activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    alpha: float = LEAKY_SLOPE

    def __post_init__(self):
        self.weights = _as_matrix(self.weights, "weights")
        self.bias = _as_matrix(self.bias, "bias")
        if self.bias.shape != (1, self.weights.shape[1]):
            raise ContractViolation(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if self.alpha <= 0:
            raise ContractViolation("leaky_relu slope must be positive")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]

    def forward(self, x):
        out, _ = forward([self], x)
        return out


def glorot_bound(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(dims: Sequence[int], rng: np.random.Generator) -> ModelParams:
    """Uniform Glorot weights and zero biases for consecutive ``dims``."""
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = glorot_bound(fan_in, fan_out)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros((1, fan_out)))
    return params


def build_layers(params: ModelParams, activations: Sequence[str], alpha=LEAKY_SLOPE):
    """Wrap a flat parameter list as layers; arrays are shared, not copied."""
    if len(params) != 2 * len(activations):
        raise ContractViolation(
            f"{len(params)} parameter arrays for {len(activations)} layers"
        )
    return [
        DenseLayer(params[2 * i], params[2 * i + 1], act, alpha)
        for i, act in enumerate(activations)
    ]


def layer_params(layers) -> ModelParams:
    params = []
    for layer in layers:
        params.extend([layer.weights, layer.bias])
    return params


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    outputs: list
    layer_ids: tuple


def forward(layers, x) -> Tuple[np.ndarray, ForwardCache]:
    """Run ``x`` through ``layers``; the cache feeds :func:`backward`."""
    x = _as_matrix(x)
    if not layers:
        raise ContractViolation("forward needs at least one layer")
    if x.shape[1] != layers[0].in_dim:
        raise ContractViolation(
            f"input has {x.shape[1]} columns, first layer expects {layers[0].in_dim}"
        )
    inputs, pre, outputs = [], [], []
    h = x
    for layer in layers:
        if h.shape[1] != layer.in_dim:
            raise ContractViolation(f"layer expects {layer.in_dim} inputs, got {h.shape[1]}")
        z = h @ layer.weights + layer.bias
        a = activate(layer.activation, z, layer.alpha)
        inputs.append(h)
        pre.append(z)
        outputs.append(a)
        h = a
    _require_finite(h, "forward")
    ids = tuple((id(layer.weights), id(layer.bias)) for layer in layers)
    return h, ForwardCache(inputs, pre, outputs, ids)


def backward(layers, cache: ForwardCache, loss_grad, return_input_grad=False):
    """Gradients of the loss w.r.t. every weight and bias.

    ``loss_grad`` is dLoss/dOutput for the batch the cache was built from.
    Returns a list aligned with ``layer_params(layers)``; with
    ``return_input_grad`` also returns dLoss/dInput.
    """
    ids = tuple((id(layer.weights), id(layer.bias)) for layer in layers)
    if ids != cache.layer_ids:
        raise ContractViolation("forward cache does not belong to these layers")
    delta = _as_matrix(loss_grad, "loss_grad")
    if delta.shape != cache.outputs[-1].shape:
        raise ContractViolation(
            f"loss_grad shape {delta.shape} != output shape {cache.outputs[-1].shape}"
        )
    grads = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        delta = delta * activation_grad(
            layer.activation, cache.pre[i], cache.outputs[i], layer.alpha
        )
        grads[2 * i] = cache.inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0, keepdims=True)
        delta = delta @ layer.weights.T
    if return_input_grad:
        return grads, delta
    return grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = ADAM_EPS
    lr: float = 1e-3

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=ADAM_EPS):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState) -> ModelParams:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractViolation("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractViolation(
                f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}, state {m.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        new.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    for p in new:
        _require_finite(p, "adam_step")
    return new
