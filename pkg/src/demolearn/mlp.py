"""Fixed-topology fully connected network with hand-derived backprop.

The backward pass returns gradients for every parameter *and* for the input
vector; the input-slice gradient is what drives online embedding updates
downstream. Batched variants operate on (N, dim) matrices and are used by the
training loops; the vector API is the single-example case of the same code.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UsageError
from .numerics import softmax

ACTIVATIONS = ("tanh", "relu", "identity")
HEADS = ("softmax", "identity")

_serial = itertools.count()


@dataclass
class LayerParams:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise UsageError("layer weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise UsageError("bias length must equal the layer's output size")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    output_head: str = "softmax"
    serial: int = field(default_factory=lambda: next(_serial), compare=False)

    def __post_init__(self):
        if not self.layers:
            raise UsageError("network needs at least one layer")
        if self.output_head not in HEADS:
            raise UsageError(f"unknown output head {self.output_head!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise UsageError("consecutive layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def copy(self) -> "NetworkParams":
        layers = [
            LayerParams(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers
        ]
        return NetworkParams(layers, self.output_head)


@dataclass
class ForwardCache:
    """Pre-activations and activations per layer for one forward call."""

    params_serial: int
    inputs: np.ndarray  # (N, in)
    pre_activations: list[np.ndarray]  # per layer, (N, out_l)
    activations: list[np.ndarray]  # per layer, (N, out_l)
    outputs: np.ndarray  # (N, out) after head


def init_network(
    layer_dims: Sequence[int],
    seed: int,
    hidden_activation: str = "tanh",
    output_head: str = "softmax",
) -> NetworkParams:
    """Fan-scaled uniform init: W ~ U[-sqrt(6/(in+out)), +sqrt(6/(in+out))],
    biases zero. The last layer gets an identity activation; the head does
    any squashing.
    """
    if len(layer_dims) < 2:
        raise UsageError("layer_dims needs an input and an output size")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(layer_dims, layer_dims[1:])):
        bound = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        act = "identity" if i == len(layer_dims) - 2 else hidden_activation
        layers.append(LayerParams(w, np.zeros(n_out), act))
    return NetworkParams(layers, output_head)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward_batch(params: NetworkParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass over a (N, in) batch. Returns (N, out) and the cache."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise UsageError(
            f"input width {x.shape[-1] if x.ndim else 0} does not match "
            f"network input size {params.input_dim}"
        )
    pre, act = [], []
    a = x
    for layer in params.layers:
        z = a @ layer.weights.T + layer.biases
        a = _apply_activation(layer.activation, z)
        pre.append(z)
        act.append(a)
    out = softmax(a) if params.output_head == "softmax" else a
    return out, ForwardCache(params.serial, x, pre, act, out)


def forward(params: NetworkParams, input_vec: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single-vector forward pass. With a softmax head the output is a
    probability vector."""
    v = np.asarray(input_vec, dtype=np.float64)
    if v.ndim != 1:
        raise UsageError("forward expects a 1-D input; use forward_batch for matrices")
    out, cache = forward_batch(params, v[None, :])
    return out[0], cache


def backward_batch(
    params: NetworkParams, cache: ForwardCache, output_grads: np.ndarray
) -> tuple[NetworkParams, np.ndarray]:
    """Backprop a batch of output-side gradients through the cached pass.

    Returns (param_grads summed over the batch, input grads of shape (N, in)).
    The parameter gradients come back as a NetworkParams-shaped container so
    sgd_step can consume them directly.
    """
    if cache.params_serial != params.serial:
        raise UsageError("cache was produced by a different parameter set")
    g = np.asarray(output_grads, dtype=np.float64)
    if g.shape != cache.outputs.shape:
        raise UsageError("output gradient shape does not match cached outputs")

    if params.output_head == "softmax":
        p = cache.outputs
        # dL/dz = p * (g - <g, p>) per row
        inner = np.sum(g * p, axis=1, keepdims=True)
        delta = p * (g - inner)
    else:
        delta = g

    grad_layers: list[LayerParams] = [None] * len(params.layers)  # type: ignore[list-item]
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        z = cache.pre_activations[idx]
        a = cache.activations[idx]
        delta = delta * _activation_deriv(layer.activation, z, a)
        below = cache.inputs if idx == 0 else cache.activations[idx - 1]
        gw = delta.T @ below
        gb = delta.sum(axis=0)
        grad_layers[idx] = LayerParams(gw, gb, layer.activation)
        delta = delta @ layer.weights
    input_grads = delta
    return NetworkParams(grad_layers, params.output_head), input_grads


def backward(
    params: NetworkParams, cache: ForwardCache, loss_grad_at_output: np.ndarray
) -> tuple[NetworkParams, np.ndarray]:
    """Single-example backward pass; see backward_batch."""
    g = np.asarray(loss_grad_at_output, dtype=np.float64)
    if g.ndim != 1:
        raise UsageError("backward expects a 1-D output gradient")
    grads, input_grads = backward_batch(params, cache, g[None, :])
    return grads, input_grads[0]


def sgd_step(params: NetworkParams, grads: NetworkParams, learning_rate: float) -> NetworkParams:
    """Plain gradient descent: params - lr * grads, as a new value."""
    if learning_rate <= 0.0:
        raise UsageError("learning rate must be positive")
    if len(grads.layers) != len(params.layers):
        raise UsageError("gradient layer count does not match params")
    layers = []
    for layer, grad in zip(params.layers, grads.layers):
        if layer.weights.shape != grad.weights.shape:
            raise UsageError("gradient shapes do not match params")
        layers.append(
            LayerParams(
                layer.weights - learning_rate * grad.weights,
                layer.biases - learning_rate * grad.biases,
                layer.activation,
            )
        )
    return NetworkParams(layers, params.output_head)


def sgd_step_inplace(params: NetworkParams, grads: NetworkParams, learning_rate: float) -> None:
    """In-place variant for hot training loops; bumps the params serial."""
    if learning_rate <= 0.0:
        raise UsageError("learning rate must be positive")
    for layer, grad in zip(params.layers, grads.layers):
        layer.weights -= learning_rate * grad.weights
        layer.biases -= learning_rate * grad.biases
    params.serial = next(_serial)


def flatten_params(params: NetworkParams) -> np.ndarray:
    """All weights then biases, layer by layer, as one flat vector."""
    parts = []
    for layer in params.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases.ravel())
    return np.concatenate(parts)


def unflatten_params(template: NetworkParams, flat: np.ndarray) -> NetworkParams:
    """Inverse of flatten_params against a shape template."""
    flat = np.asarray(flat, dtype=np.float64)
    layers = []
    pos = 0
    for layer in template.layers:
        n_w = layer.weights.size
        w = flat[pos : pos + n_w].reshape(layer.weights.shape)
        pos += n_w
        n_b = layer.biases.size
        b = flat[pos : pos + n_b].copy()
        pos += n_b
        layers.append(LayerParams(w.copy(), b, layer.activation))
    if pos != flat.size:
        raise UsageError("flat vector length does not match the template")
    return NetworkParams(layers, template.output_head)
