"""Fully connected layers, activations, softmax/cross-entropy and the network container.

Every layer follows the same small protocol so dense and convolutional layers
can be stacked in one :class:`Network`:

``forward(x) -> (z, a)``
    pre-activation and activation for a batch.
``backward(x, z, a, grad_a) -> (grad_x, grads)``
    gradient with respect to the layer input plus a dict of parameter
    gradients keyed like :meth:`params`.

Dropout masks multiply the *input* of a layer, so ``masks[i]`` removes units
feeding layer ``i``. ``masks[0]`` is input dropout; the output layer's
activations are never masked.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .numeric import RandomSource, ShapeError, gauss_sample

ACTIVATIONS = ("relu", "logistic", "linear", "softmax")


class ConsistencyError(ValueError):
    """A trace or mask list does not belong to the network it is used with."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "linear":
        return z
    if kind == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z: np.ndarray, a: np.ndarray, grad_a: np.ndarray, kind: str) -> np.ndarray:
    """Map dL/da to dL/dz.

    Softmax is the exception: its incoming gradient is taken to be dL/dz
    already, which is what :func:`softmax_xent` returns.
    """
    if kind == "relu":
        return grad_a * (z > 0)
    if kind == "logistic":
        return grad_a * a * (1.0 - a)
    if kind in ("linear", "softmax"):
        return grad_a
    raise ValueError(f"unknown activation {kind!r}")


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns the loss and its gradient with respect to the logits,
    ``(softmax(logits) - onehot) / batch``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


class Layer:
    """Base for parametrised and parameter-free layers."""

    activation = "linear"

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            setattr(self, name, np.array(value, dtype=np.float64))

    def has_weights(self) -> bool:
        return bool(self.params())

    def output_shape(self, input_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, z, a, grad_a):
        raise NotImplementedError

    def scaled(self, factor: float) -> "Layer":
        """Copy with the weight tensor multiplied by ``factor`` (biases untouched)."""
        raise ConsistencyError(f"{type(self).__name__} has no weights to rescale")

    def incoming(self) -> np.ndarray | None:
        """View with one row per unit holding that unit's incoming weights."""
        return None

    def set_incoming(self, rows: np.ndarray) -> None:
        raise ConsistencyError(f"{type(self).__name__} has no incoming weights")

    def copy(self) -> "Layer":
        return copy.deepcopy(self)


class DenseLayer(Layer):
    """Fully connected layer; ``weights`` is ``[n_in, n_out]``."""

    def __init__(self, weights, biases, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = np.array(weights, dtype=np.float64)
        self.biases = np.array(biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ShapeError(f"weights {self.weights.shape} and biases {self.biases.shape} disagree")
        self.activation = activation

    @classmethod
    def init(cls, rng: RandomSource, n_in: int, n_out: int, activation: str = "relu",
             sd: float = 0.01, bias: float = 0.0) -> "DenseLayer":
        return cls(gauss_sample(rng, 0.0, sd, (n_in, n_out)), np.full(n_out, float(bias)), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def params(self):
        return {"weights": self.weights, "biases": self.biases}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got shape {input_shape}")
        return (self.n_out,)

    def forward(self, x):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got {x2.shape[1]}")
        z = x2 @ self.weights + self.biases
        return z, activate(z, self.activation)

    def backward(self, x, z, a, grad_a):
        dz = activation_grad(z, a, grad_a, self.activation)
        x2 = x.reshape(x.shape[0], -1)
        grads = {"weights": x2.T @ dz, "biases": dz.sum(axis=0)}
        grad_x = (dz @ self.weights.T).reshape(x.shape)
        return grad_x, grads

    def scaled(self, factor):
        return DenseLayer(self.weights * factor, self.biases.copy(), self.activation)

    def incoming(self):
        return self.weights.T

    def set_incoming(self, rows):
        self.weights = np.ascontiguousarray(rows.T)

    def describe(self) -> str:
        return f"dense:{self.n_out}:{self.activation}"


def dense_forward(layer: DenseLayer, x, mask=None):
    """One dense layer, optionally masking its output units (``mask`` is ``[batch, n_out]``)."""
    z, a = layer.forward(np.asarray(x, dtype=np.float64))
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != a.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match output {a.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("dropout masks must be binary")
        a = a * mask
    return z, a


@dataclass
class ForwardTrace:
    """Everything a backward pass needs: per-layer inputs, z, a and the masks used."""

    inputs: list = field(default_factory=list)  # masked input fed to each layer
    zs: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    network_id: int = 0


class Network:
    """An ordered stack of layers acting on inputs of shape ``input_shape``."""

    def __init__(self, layers: list, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in np.atleast_1d(input_shape))
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ConsistencyError("softmax is only allowed on the output layer")

    @classmethod
    def dense(cls, sizes, rng: RandomSource, hidden: str = "relu", output: str = "softmax",
              sd: float = 0.01, hidden_bias: float = 0.0) -> "Network":
        """Fully connected net from a size list such as ``[784, 800, 800, 10]``."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ShapeError("need at least an input and an output size")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(DenseLayer.init(rng, n_in, n_out, output if last else hidden, sd,
                                          0.0 if last else hidden_bias))
        return cls(layers, (sizes[0],))

    @property
    def output_activation(self) -> str:
        return self.layers[-1].activation

    def unit_counts(self) -> list[int]:
        """Number of units entering each layer (flattened)."""
        return [int(np.prod(s)) for s in self.shapes[:-1]]

    def params(self) -> list[dict[str, np.ndarray]]:
        return [layer.params() for layer in self.layers]

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers], self.input_shape)

    def describe(self) -> list[str]:
        return [layer.describe() for layer in self.layers]

    def forward(self, X, masks=None):
        return network_forward(self, X, masks, "stochastic" if masks is not None else "deterministic")

    def predict(self, X) -> np.ndarray:
        return network_forward(self, X)[0]


def _check_masks(net: Network, masks, batch: int) -> list:
    if len(masks) != len(net.layers):
        raise ConsistencyError(f"expected {len(net.layers)} mask entries, got {len(masks)}")
    out = []
    for i, m in enumerate(masks):
        if m is None:
            out.append(None)
            continue
        m = np.asarray(m, dtype=np.float64)
        expected = (batch,) + net.shapes[i]
        if m.shape != expected and m.shape != (batch, int(np.prod(net.shapes[i]))):
            raise ShapeError(f"mask {i} has shape {m.shape}, expected {expected}")
        out.append(m.reshape(expected))
    return out


def network_forward(net: Network, X, masks=None, mode: str = "deterministic"):
    """Run ``X`` through the network, returning ``(output, trace)``.

    In stochastic mode ``masks`` is a list with one entry per layer; entry ``i``
    multiplies the input of layer ``i`` (``None`` leaves it untouched).
    """
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    if (mode == "stochastic") != (masks is not None):
        raise ValueError("masks must be given exactly when mode is 'stochastic'")
    X = np.asarray(X, dtype=np.float64)
    batch = X.shape[0]
    x = X.reshape((batch,) + net.input_shape)
    masks = _check_masks(net, masks, batch) if masks is not None else [None] * len(net.layers)
    trace = ForwardTrace(masks=masks, network_id=id(net))
    for layer, m in zip(net.layers, masks):
        if m is not None:
            x = x * m
        z, a = layer.forward(x)
        trace.inputs.append(x)
        trace.zs.append(z)
        trace.activations.append(a)
        x = a
    return x, trace


def network_backward(net: Network, trace: ForwardTrace, grad_output, return_input_grad: bool = False):
    """Backpropagate ``grad_output`` through a traced forward pass.

    ``grad_output`` is dL/dz of the output layer for a softmax head (as
    produced by :func:`softmax_xent`) and dL/da otherwise. Returns one dict of
    parameter gradients per layer, plus dL/dX if ``return_input_grad``.
    """
    if trace.network_id != id(net) or len(trace.zs) != len(net.layers):
        raise ConsistencyError("trace was not produced by this network")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != trace.activations[-1].shape:
        raise ShapeError(f"output gradient {g.shape} does not match output {trace.activations[-1].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g, grads[i] = layer.backward(trace.inputs[i], trace.zs[i], trace.activations[i], g)
        if trace.masks[i] is not None:
            g = g * trace.masks[i]
    if return_input_grad:
        return grads, g
    return grads
