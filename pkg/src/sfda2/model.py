"""Dense feature extractor + linear classifier with exact reverse-mode
gradients and a central finite-difference checker.

The extractor is a stack of affine layers with relu or identity
activations; features are the last extractor output, logits come from a
linear classifier (weights shaped classes x feature_dim, rows are the
per-class weight vectors).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError
from .numerics import RngState, row_softmax

_ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str


@dataclass
class Model:
    layers: list[Layer]
    clf_weights: np.ndarray  # (n_classes, feature_dim)
    clf_bias: np.ndarray  # (n_classes,)

    @property
    def input_dim(self) -> int:
        if self.layers:
            return self.layers[0].weights.shape[1]
        return self.clf_weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.clf_weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.clf_weights.shape[0]


@dataclass
class GradientSet:
    """One array per parameter array, shape-congruent with the model."""

    layer_weights: list[np.ndarray] = field(default_factory=list)
    layer_biases: list[np.ndarray] = field(default_factory=list)
    clf_weights: np.ndarray = None
    clf_bias: np.ndarray = None


@dataclass
class OptimizerState:
    momentum: float
    lr: float
    buffers: GradientSet


def validate_model(model: Model) -> None:
    prev = None
    for i, layer in enumerate(model.layers):
        w, b = layer.weights, layer.bias
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise InvalidInputError(f"layer {i} weight/bias shapes disagree")
        if prev is not None and w.shape[1] != prev:
            raise InvalidInputError(f"layer {i} input width breaks the chain")
        if layer.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"layer {i} has unknown activation {layer.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidInputError(f"layer {i} has non-finite parameters")
        prev = w.shape[0]
    cw, cb = model.clf_weights, model.clf_bias
    if cw.ndim != 2 or cb.ndim != 1 or cb.shape[0] != cw.shape[0]:
        raise InvalidInputError("classifier weight/bias shapes disagree")
    if prev is not None and cw.shape[1] != prev:
        raise InvalidInputError("classifier input width must equal the feature dimension")
    if not (np.all(np.isfinite(cw)) and np.all(np.isfinite(cb))):
        raise InvalidInputError("classifier has non-finite parameters")


def init_model(
    input_dim: int,
    hidden_dims: tuple[int, ...],
    feature_dim: int,
    n_classes: int,
    rng: RngState,
) -> Model:
    """Random model: relu hidden layers, identity feature layer, zero biases.

    Weight scales follow the usual fan-in heuristics (sqrt(2/fan_in) before
    relu, sqrt(1/fan_in) elsewhere) so forward magnitudes stay O(1).
    """
    if input_dim < 1 or feature_dim < 1 or n_classes < 2:
        raise InvalidInputError("model dimensions out of range")
    gen = rng.generator
    layers: list[Layer] = []
    fan_in = input_dim
    for width in hidden_dims:
        scale = np.sqrt(2.0 / fan_in)
        layers.append(Layer(scale * gen.standard_normal((width, fan_in)), np.zeros(width), "relu"))
        fan_in = width
    scale = np.sqrt(1.0 / fan_in)
    layers.append(Layer(scale * gen.standard_normal((feature_dim, fan_in)), np.zeros(feature_dim), "identity"))
    clf_w = np.sqrt(1.0 / feature_dim) * gen.standard_normal((n_classes, feature_dim))
    return Model(layers, clf_w, np.zeros(n_classes))


def _check_inputs(model: Model, inputs) -> np.ndarray:
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError("inputs must be a 2-D batch")
    if arr.shape[1] != model.input_dim:
        raise InvalidInputError(
            f"input width {arr.shape[1]} does not match model input dim {model.input_dim}"
        )
    return arr


def _forward_cache(model: Model, inputs: np.ndarray):
    """Returns (post-activation list starting at inputs, pre-activation list)."""
    posts = [inputs]
    pres = []
    h = inputs
    for layer in model.layers:
        a = h @ layer.weights.T + layer.bias
        pres.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
        posts.append(h)
    return posts, pres


def forward(model: Model, inputs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, logits, probs) for a batch of input rows."""
    arr = _check_inputs(model, inputs)
    posts, _ = _forward_cache(model, arr)
    features = posts[-1]
    logits = features @ model.clf_weights.T + model.clf_bias
    probs = row_softmax(logits)
    return features, logits, probs


def zero_gradients(model: Model) -> GradientSet:
    return GradientSet(
        layer_weights=[np.zeros_like(l.weights) for l in model.layers],
        layer_biases=[np.zeros_like(l.bias) for l in model.layers],
        clf_weights=np.zeros_like(model.clf_weights),
        clf_bias=np.zeros_like(model.clf_bias),
    )


def gradient_arrays(grads: GradientSet) -> list[np.ndarray]:
    """Canonical flat ordering: (W, b) per layer, then classifier W, b."""
    arrays: list[np.ndarray] = []
    for w, b in zip(grads.layer_weights, grads.layer_biases):
        arrays.extend((w, b))
    arrays.extend((grads.clf_weights, grads.clf_bias))
    return arrays


def parameter_arrays(model: Model) -> list[np.ndarray]:
    """Live parameter references in the same canonical ordering as gradients."""
    arrays: list[np.ndarray] = []
    for layer in model.layers:
        arrays.extend((layer.weights, layer.bias))
    arrays.extend((model.clf_weights, model.clf_bias))
    return arrays


def clone_model(model: Model) -> Model:
    return Model(
        [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in model.layers],
        model.clf_weights.copy(),
        model.clf_bias.copy(),
    )


def grad_params(model: Model, inputs, dL_dlogits, dL_dfeatures) -> GradientSet:
    """Exact parameter gradients for a loss entering at the logits and/or
    directly at the features; either upstream may be all-zero."""
    arr = _check_inputs(model, inputs)
    dlog = np.asarray(dL_dlogits, dtype=np.float64)
    dfeat = np.asarray(dL_dfeatures, dtype=np.float64)
    b = arr.shape[0]
    if dlog.shape != (b, model.n_classes):
        raise InvalidInputError("dL_dlogits shape mismatch")
    if dfeat.shape != (b, model.feature_dim):
        raise InvalidInputError("dL_dfeatures shape mismatch")

    posts, pres = _forward_cache(model, arr)
    features = posts[-1]
    grads = zero_gradients(model)
    grads.clf_weights = dlog.T @ features
    grads.clf_bias = dlog.sum(axis=0)

    # Sensitivity entering the extractor: the logits path plus the direct
    # feature path (used by losses defined on features themselves).
    dh = dlog @ model.clf_weights + dfeat
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        da = dh * (pres[idx] > 0.0) if layer.activation == "relu" else dh
        grads.layer_weights[idx] = da.T @ posts[idx]
        grads.layer_biases[idx] = da.sum(axis=0)
        dh = da @ layer.weights
    return grads


def init_optimizer(model: Model, momentum: float, lr: float) -> OptimizerState:
    if not (0.0 <= momentum < 1.0):
        raise InvalidInputError("momentum must be in [0, 1)")
    if lr < 0.0:
        raise InvalidInputError("learning rate must be >= 0")
    return OptimizerState(momentum=momentum, lr=lr, buffers=zero_gradients(model))


def sgd_step(model: Model, grads: GradientSet, state: OptimizerState) -> tuple[Model, OptimizerState]:
    """buffer <- momentum*buffer + grad; param <- param - lr*buffer.

    Returns fresh Model/OptimizerState; refuses the step on non-finite
    gradients.
    """
    grad_list = gradient_arrays(grads)
    param_list = parameter_arrays(model)
    buffer_list = gradient_arrays(state.buffers)
    if len(grad_list) != len(param_list):
        raise InvalidInputError("gradient set does not match model parameters")
    for g, p in zip(grad_list, param_list):
        if g.shape != p.shape:
            raise InvalidInputError("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient entry; step refused")

    new_model = clone_model(model)
    new_state = OptimizerState(state.momentum, state.lr, zero_gradients(model))
    new_params = parameter_arrays(new_model)
    new_buffers = gradient_arrays(new_state.buffers)
    for p, g, buf_old, buf_new in zip(new_params, grad_list, buffer_list, new_buffers):
        buf_new[...] = state.momentum * buf_old + g
        p -= state.lr * buf_new
    return new_model, new_state


def finite_diff_check(model: Model, loss_and_grad, h: float) -> float:
    """Max over parameters of |analytic - central difference| relative error.

    loss_and_grad maps a Model to (scalar value, GradientSet). The relative
    error denominator is max(1e-8, |central difference|).
    """
    if h <= 0.0:
        raise InvalidInputError("step size must be positive")
    value, grads = loss_and_grad(model)
    if not np.isfinite(value):
        raise NumericalError("loss is non-finite at the base point")

    probe = clone_model(model)
    probe_params = parameter_arrays(probe)
    grad_list = gradient_arrays(grads)
    worst = 0.0
    for p_arr, g_arr in zip(probe_params, grad_list):
        flat_p = p_arr.reshape(-1)
        flat_g = g_arr.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            up, _ = loss_and_grad(probe)
            flat_p[j] = orig - h
            down, _ = loss_and_grad(probe)
            flat_p[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError("loss is non-finite at a perturbed point")
            numeric = (up - down) / (2.0 * h)
            rel = abs(flat_g[j] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, rel)
    return worst
