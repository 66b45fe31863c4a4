"""Symmetric autoencoder with a mixed-type reconstruction loss.

Categorical columns arrive one-hot encoded and are reconstructed through an
elementwise sigmoid head scored with binary cross-entropy; numerical columns
are reconstructed through an identity (or tanh, for pixels) head scored with
squared error.  Per-row losses are summed over columns and averaged over the
rows of a batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractViolation, DataFormatError
from .nn import (
    AdamState,
    ModelParams,
    adam_step,
    backward,
    build_layers,
    forward,
    init_params,
    sigmoid,
)

PROB_CLIP = 1e-7
PARAMS_FORMAT = "fedod-params"


@dataclass(frozen=True)
class ColumnLayout:
    """Which encoded columns are numerical and which form one-hot groups.

    ``categorical_groups`` holds ``(start, stop, column_name)`` half-open
    ranges.  ``numeric_head`` is ``"identity"`` for standardized features or
    ``"tanh"`` for pixels scaled to [-1, 1].
    """

    numerical: Tuple[int, ...] = ()
    categorical_groups: Tuple[Tuple[int, int, str], ...] = ()
    numeric_head: str = "identity"

    @property
    def n_columns(self):
        return len(self.numerical) + sum(b - a for a, b, _ in self.categorical_groups)

    @property
    def categorical_columns(self):
        cols = []
        for a, b, _ in self.categorical_groups:
            cols.extend(range(a, b))
        return np.array(cols, dtype=np.intp)

    @property
    def numerical_columns(self):
        return np.array(self.numerical, dtype=np.intp)

    def validate(self, input_dim):
        covered = np.zeros(input_dim, dtype=int)
        for j in self.numerical:
            if not 0 <= j < input_dim:
                raise ContractViolation(f"numerical slot {j} outside [0, {input_dim})")
            covered[j] += 1
        for a, b, name in self.categorical_groups:
            if not 0 <= a < b <= input_dim:
                raise ContractViolation(f"categorical group {name!r} range [{a}, {b}) invalid")
            covered[a:b] += 1
        if np.any(covered > 1):
            raise ContractViolation(f"layout overlap at columns {np.flatnonzero(covered > 1).tolist()}")
        if np.any(covered == 0):
            raise ContractViolation(f"layout gap at columns {np.flatnonzero(covered == 0).tolist()}")
        if self.numeric_head not in ("identity", "tanh"):
            raise ContractViolation(f"unknown numeric head {self.numeric_head!r}")

    def to_dict(self):
        return {
            "numerical": list(self.numerical),
            "categorical_groups": [list(g) for g in self.categorical_groups],
            "numeric_head": self.numeric_head,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            numerical=tuple(int(j) for j in d["numerical"]),
            categorical_groups=tuple((int(a), int(b), str(n)) for a, b, n in d["categorical_groups"]),
            numeric_head=d.get("numeric_head", "identity"),
        )

    @classmethod
    def all_numerical(cls, n, numeric_head="identity"):
        return cls(numerical=tuple(range(n)), numeric_head=numeric_head)


@dataclass(frozen=True)
class AutoencoderSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...] = (128,)
    latent_dim: int = 64
    hidden_activation: str = "leaky_relu"
    alpha: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.latent_dim >= self.input_dim:
            raise ContractViolation(
                f"latent_dim {self.latent_dim} must be smaller than input_dim {self.input_dim}"
            )
        if self.latent_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ContractViolation("layer widths must be positive")

    @property
    def encoder_dims(self):
        return [self.input_dim, *self.hidden_dims, self.latent_dim]

    @property
    def decoder_dims(self):
        return self.encoder_dims[::-1]

    @property
    def n_encoder_layers(self):
        return len(self.encoder_dims) - 1

    @property
    def activations(self):
        enc = [self.hidden_activation] * self.n_encoder_layers
        dec = [self.hidden_activation] * (self.n_encoder_layers - 1) + ["identity"]
        return enc + dec

    @property
    def layer_dims(self):
        return self.encoder_dims + self.decoder_dims[1:]

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "hidden_dims": tuple(d["hidden_dims"])})


def apply_heads(z, layout: ColumnLayout):
    out = np.array(z, dtype=np.float64, copy=True)
    cat = layout.categorical_columns
    if cat.size:
        out[:, cat] = sigmoid(z[:, cat])
    if layout.numeric_head == "tanh":
        num = layout.numerical_columns
        out[:, num] = np.tanh(z[:, num])
    return out


def _head_grad(out, layout: ColumnLayout):
    d = np.ones_like(out)
    cat = layout.categorical_columns
    if cat.size:
        s = out[:, cat]
        d[:, cat] = s * (1.0 - s)
    if layout.numeric_head == "tanh":
        num = layout.numerical_columns
        t = out[:, num]
        d[:, num] = 1.0 - t * t
    return d


def reconstruction_loss(x, x_hat, layout: ColumnLayout, cat_weight=1.0, num_weight=1.0):
    """Mixed BCE + squared-error loss and its gradient w.r.t. ``x_hat``.

    ``x_hat`` is the reconstruction after the output heads.  The total is
    summed over columns and averaged over rows.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 2:
        raise ContractViolation(f"x {x.shape} and x_hat {x_hat.shape} must be equal 2-D shapes")
    layout.validate(x.shape[1])
    n = x.shape[0]
    grad = np.zeros_like(x)
    total = 0.0

    num = layout.numerical_columns
    if num.size:
        diff = x_hat[:, num] - x[:, num]
        total += num_weight * float(np.sum(diff * diff))
        grad[:, num] = num_weight * 2.0 * diff

    cat = layout.categorical_columns
    if cat.size:
        p = np.clip(x_hat[:, cat], PROB_CLIP, 1.0 - PROB_CLIP)
        t = x[:, cat]
        total += cat_weight * float(-np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))
        grad[:, cat] = cat_weight * (p - t) / (p * (1.0 - p))

    return total / n, grad / n


def loss_and_grads(params: ModelParams, spec: AutoencoderSpec, layout: ColumnLayout, x,
                   cat_weight=1.0, num_weight=1.0):
    """Reconstruction loss of a batch and its gradient w.r.t. every parameter."""
    layers = build_layers(params, spec.activations, spec.alpha)
    z, cache = forward(layers, x)
    x_hat = apply_heads(z, layout)
    loss, g_hat = reconstruction_loss(x, x_hat, layout, cat_weight, num_weight)
    grads = backward(layers, cache, g_hat * _head_grad(x_hat, layout))
    return loss, grads


def init_autoencoder(spec: AutoencoderSpec, seed) -> ModelParams:
    return init_params(spec.layer_dims, np.random.default_rng(seed))


def encode(params: ModelParams, spec: AutoencoderSpec, data):
    """Latent codes of ``data`` under the encoder half of ``params``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != spec.input_dim:
        raise ContractViolation(
            f"data shape {data.shape} does not match input_dim {spec.input_dim}"
        )
    k = spec.n_encoder_layers
    layers = build_layers(params[: 2 * k], spec.activations[:k], spec.alpha)
    h, _ = forward(layers, data)
    return h


def reconstruct(params: ModelParams, spec: AutoencoderSpec, layout: ColumnLayout, data):
    layers = build_layers(params, spec.activations, spec.alpha)
    z, _ = forward(layers, np.asarray(data, dtype=np.float64))
    return apply_heads(z, layout)


def train_local(params: ModelParams, data, spec: AutoencoderSpec, layout: ColumnLayout,
                epochs: int, batch_size: int, lr: float, seed,
                prox_center: Optional[ModelParams] = None, mu: float = 0.0,
                cat_weight=1.0, num_weight=1.0, beta1=0.9, beta2=0.999):
    """Mini-batch Adam on the reconstruction loss.

    With ``prox_center`` set, the proximal term ``mu/2 * ||w - prox_center||^2``
    is added to the objective (its gradient to every step).  Returns the new
    parameters and the mean reconstruction loss of each epoch.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ContractViolation("train_local needs a nonempty 2-D data matrix")
    if data.shape[1] != spec.input_dim:
        raise ContractViolation(f"data has {data.shape[1]} columns, spec expects {spec.input_dim}")
    if epochs < 1 or batch_size < 1:
        raise ContractViolation("epochs and batch_size must be >= 1")
    if mu < 0:
        raise ContractViolation("proximal mu must be nonnegative")
    layout.validate(spec.input_dim)

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    state = AdamState.for_params(params, lr=lr, beta1=beta1, beta2=beta2)
    n = data.shape[0]
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = data[order[start:start + batch_size]]
            loss, grads = loss_and_grads(params, spec, layout, batch, cat_weight, num_weight)
            if prox_center is not None and mu > 0:
                grads = [g + mu * (p - c) for g, p, c in zip(grads, params, prox_center)]
            params = adam_step(params, grads, state)
            epoch_loss += loss * batch.shape[0]
        trace.append(epoch_loss / n)
    return params, trace


def params_to_dict(params: ModelParams, spec: AutoencoderSpec, layout: Optional[ColumnLayout] = None):
    return {
        "format": PARAMS_FORMAT,
        "version": 1,
        "spec": spec.to_dict(),
        "layout": layout.to_dict() if layout is not None else None,
        "arrays": [{"shape": list(p.shape), "data": p.ravel().tolist()} for p in params],
    }


def params_from_dict(d):
    if d.get("format") != PARAMS_FORMAT:
        raise DataFormatError(f"not a {PARAMS_FORMAT} document")
    spec = AutoencoderSpec.from_dict(d["spec"])
    params = [np.array(a["data"], dtype=np.float64).reshape(a["shape"]) for a in d["arrays"]]
    expected = spec.layer_dims
    shapes = [p.shape for p in params]
    want = []
    for fi, fo in zip(expected[:-1], expected[1:]):
        want.extend([(fi, fo), (1, fo)])
    if shapes != want:
        raise DataFormatError(f"parameter shapes {shapes} do not match spec {want}")
    layout = ColumnLayout.from_dict(d["layout"]) if d.get("layout") else None
    return params, spec, layout


def save_params(path, params, spec, layout=None):
    Path(path).write_text(json.dumps(params_to_dict(params, spec, layout)))


def load_params(path):
    return params_from_dict(json.loads(Path(path).read_text()))


class Autoencoder(TransformerMixin, BaseEstimator):
    """Mixed-type autoencoder as a scikit-learn transformer.

    ``transform`` returns latent codes.  ``layout`` describes the encoded
    columns; if omitted every column is treated as numerical.

    Parameters
    ----------
    hidden_dims : tuple of int
        Encoder hidden widths; the decoder mirrors them.
    latent_dim : int
    hidden_activation : {"leaky_relu", "tanh", "sigmoid", "identity"}
    alpha : float
        Leaky-ReLU slope.
    epochs, batch_size, learning_rate :
        Adam training schedule.
    layout : ColumnLayout, optional
    init_params : list of ndarray, optional
        Starting parameters; drawn from ``random_state`` when omitted.
    random_state : int
    """

    def __init__(self, hidden_dims=(128,), latent_dim=64, hidden_activation="leaky_relu",
                 alpha=0.4, epochs=20, batch_size=128, learning_rate=1e-3, layout=None,
                 init_params=None, random_state=0):
        self.hidden_dims = hidden_dims
        self.latent_dim = latent_dim
        self.hidden_activation = hidden_activation
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.layout = layout
        self.init_params = init_params
        self.random_state = random_state

    def _layout(self, n_features):
        layout = self.layout or ColumnLayout.all_numerical(n_features)
        layout.validate(n_features)
        return layout

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.spec_ = AutoencoderSpec(X.shape[1], tuple(self.hidden_dims), self.latent_dim,
                                     self.hidden_activation, self.alpha)
        self.layout_ = self._layout(X.shape[1])
        init_seed, train_seed = np.random.SeedSequence(self.random_state).spawn(2)
        params = self.init_params
        if params is None:
            params = init_autoencoder(self.spec_, init_seed)
        self.params_, self.loss_curve_ = train_local(
            params, X, self.spec_, self.layout_, self.epochs, self.batch_size,
            self.learning_rate, np.random.default_rng(train_seed),
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode(self.params_, self.spec_, X)

    def reconstruct(self, X):
        check_is_fitted(self, "params_")
        return reconstruct(self.params_, self.spec_, self.layout_, X)

    def score_samples(self, X):
        """Per-row reconstruction loss (higher means more anomalous)."""
        X = np.asarray(X, dtype=np.float64)
        x_hat = self.reconstruct(X)
        return np.array([
            reconstruction_loss(X[i:i + 1], x_hat[i:i + 1], self.layout_)[0]
            for i in range(X.shape[0])
        ])
