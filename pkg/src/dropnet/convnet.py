"""Convolutional, locally-connected, pooling and response-normalisation layers.

All layers take ``[batch, channels, height, width]`` inputs and use valid
windows only (no padding): an ``f``-wide window with stride ``s`` over ``H``
pixels gives ``(H - f) // s + 1`` outputs. "Convolution" is cross-correlation,
i.e. filters are not flipped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layers import ACTIVATIONS, Layer, activate, activation_grad
from .numeric import RandomSource, ShapeError, gauss_sample


def out_size(n: int, window: int, stride: int) -> int:
    if window > n:
        raise ShapeError(f"window {window} larger than input extent {n}")
    return (n - window) // stride + 1


def _windows(x: np.ndarray, fh: int, fw: int, stride: int) -> np.ndarray:
    """View of shape ``[B, C, oh, ow, fh, fw]``."""
    if x.ndim != 4:
        raise ShapeError(f"expected [batch, channels, height, width], got {x.shape}")
    out_size(x.shape[2], fh, stride)
    out_size(x.shape[3], fw, stride)
    return sliding_window_view(x, (fh, fw), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(cols: np.ndarray, in_shape: tuple, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum ``[B, C, oh, ow, fh, fw]`` back onto the input grid."""
    B, C, oh, ow, fh, fw = cols.shape
    out = np.zeros(in_shape)
    for p in range(fh):
        for q in range(fw):
            out[:, :, p:p + stride * (oh - 1) + 1:stride, q:q + stride * (ow - 1) + 1:stride] += cols[..., p, q]
    return out


def _accumulate_taps(win: np.ndarray, tap_weights) -> np.ndarray:
    """Sum ``win[:, c, :, :, p, q] * tap_weights(c, p, q)`` over taps in fixed (c, p, q) order.

    Shared by the conv and locally-connected forward passes so that a local
    layer holding identical filters reproduces the conv output bit for bit.
    ``tap_weights`` returns an array broadcastable to ``[K, oh, ow]``.
    """
    B, C, oh, ow, fh, fw = win.shape
    z = None
    for c in range(C):
        for p in range(fh):
            for q in range(fw):
                term = win[:, None, c, :, :, p, q] * tap_weights(c, p, q)[None]
                z = term if z is None else z + term
    return z


def random_connectivity(rng: RandomSource, banks: int, in_channels: int, group_size: int,
                        channels_per_group: int) -> np.ndarray:
    """Bank-to-channel table: each group of ``group_size`` banks sees its own random channel subset."""
    if banks % group_size:
        raise ValueError("banks must divide evenly into groups")
    table = np.zeros((banks, in_channels), dtype=bool)
    for g in range(banks // group_size):
        chosen = rng.generator.choice(in_channels, size=channels_per_group, replace=False)
        table[g * group_size:(g + 1) * group_size, chosen] = True
    return table


class ConvLayer(Layer):
    """Filter banks shared across positions: ``filters`` is ``[banks, C, fh, fw]``."""

    def __init__(self, filters, biases, stride: int = 1, activation: str = "relu", connectivity=None):
        self.filters = np.array(filters, dtype=np.float64)
        self.biases = np.array(biases, dtype=np.float64)
        if self.filters.ndim != 4 or self.biases.shape != (self.filters.shape[0],):
            raise ShapeError(f"filters {self.filters.shape} / biases {self.biases.shape} disagree")
        if stride < 1:
            raise ValueError("stride must be at least 1")
        if activation not in ACTIVATIONS or activation == "softmax":
            raise ValueError(f"bad activation {activation!r} for a convolutional layer")
        self.stride = int(stride)
        self.activation = activation
        self.connectivity = None
        if connectivity is not None:
            self.connectivity = np.asarray(connectivity, dtype=bool)
            if self.connectivity.shape != self.filters.shape[:2]:
                raise ShapeError("connectivity table must be [banks, in_channels]")

    @classmethod
    def init(cls, rng, in_channels, banks, size, stride=1, activation="relu", sd=0.01, bias=1.0,
             connectivity=None):
        fh, fw = (size, size) if np.ndim(size) == 0 else size
        return cls(gauss_sample(rng, 0.0, sd, (banks, in_channels, fh, fw)), np.full(banks, float(bias)),
                   stride, activation, connectivity)

    def params(self):
        return {"filters": self.filters, "biases": self.biases}

    def _effective(self) -> np.ndarray:
        if self.connectivity is None:
            return self.filters
        return self.filters * self.connectivity[:, :, None, None]

    def output_shape(self, input_shape):
        C, H, W = input_shape
        if C != self.filters.shape[1]:
            raise ShapeError(f"layer expects {self.filters.shape[1]} channels, got {C}")
        K, _, fh, fw = self.filters.shape
        return (K, out_size(H, fh, self.stride), out_size(W, fw, self.stride))

    def forward(self, x):
        if x.shape[1] != self.filters.shape[1]:
            raise ShapeError(f"layer expects {self.filters.shape[1]} channels, got {x.shape[1]}")
        K, C, fh, fw = self.filters.shape
        win = _windows(x, fh, fw, self.stride)
        f = self._effective()
        z = _accumulate_taps(win, lambda c, p, q: f[:, c, p, q, None, None])
        z = z + self.biases[None, :, None, None]
        return z, activate(z, self.activation)

    def backward(self, x, z, a, grad_a):
        dz = activation_grad(z, a, grad_a, self.activation)
        K, C, fh, fw = self.filters.shape
        win = _windows(x, fh, fw, self.stride)
        gf = np.tensordot(dz, win, axes=([0, 2, 3], [0, 2, 3]))
        if self.connectivity is not None:
            gf = gf * self.connectivity[:, :, None, None]
        cols = np.tensordot(dz, self._effective(), axes=([1], [0]))  # [B, oh, ow, C, fh, fw]
        gx = _scatter_windows(cols.transpose(0, 3, 1, 2, 4, 5), x.shape, self.stride)
        return gx, {"filters": gf, "biases": dz.sum(axis=(0, 2, 3))}

    def scaled(self, factor):
        return ConvLayer(self.filters * factor, self.biases.copy(), self.stride, self.activation,
                         self.connectivity)

    def incoming(self):
        return self.filters.reshape(self.filters.shape[0], -1)

    def set_incoming(self, rows):
        self.filters = np.ascontiguousarray(rows).reshape(self.filters.shape)

    def describe(self):
        K, _, fh, fw = self.filters.shape
        return f"conv:{K}:{fh}x{fw}:{self.stride}:{self.activation}"


class LocalLayer(Layer):
    """Locally connected: like :class:`ConvLayer` but every position has its own filters.

    ``filters`` is ``[banks, oh, ow, C, fh, fw]``; biases are one per bank.
    """

    def __init__(self, filters, biases, stride: int = 1, activation: str = "relu"):
        self.filters = np.array(filters, dtype=np.float64)
        self.biases = np.array(biases, dtype=np.float64)
        if self.filters.ndim != 6 or self.biases.shape != (self.filters.shape[0],):
            raise ShapeError(f"filters {self.filters.shape} / biases {self.biases.shape} disagree")
        if stride < 1:
            raise ValueError("stride must be at least 1")
        if activation not in ACTIVATIONS or activation == "softmax":
            raise ValueError(f"bad activation {activation!r} for a locally-connected layer")
        self.stride = int(stride)
        self.activation = activation

    @classmethod
    def init(cls, rng, input_shape, banks, size, stride=1, activation="relu", sd=0.01, bias=1.0):
        C, H, W = input_shape
        fh, fw = (size, size) if np.ndim(size) == 0 else size
        oh, ow = out_size(H, fh, stride), out_size(W, fw, stride)
        return cls(gauss_sample(rng, 0.0, sd, (banks, oh, ow, C, fh, fw)), np.full(banks, float(bias)),
                   stride, activation)

    @classmethod
    def from_conv(cls, conv: ConvLayer, input_shape) -> "LocalLayer":
        """Locally connected layer with ``conv``'s filter copied to every position."""
        _, oh, ow = conv.output_shape(input_shape)
        f = np.broadcast_to(conv._effective()[:, None, None], (conv.filters.shape[0], oh, ow) + conv.filters.shape[1:])
        return cls(f.copy(), conv.biases.copy(), conv.stride, conv.activation)

    def params(self):
        return {"filters": self.filters, "biases": self.biases}

    def output_shape(self, input_shape):
        C, H, W = input_shape
        K, oh, ow, c, fh, fw = self.filters.shape
        if C != c or out_size(H, fh, self.stride) != oh or out_size(W, fw, self.stride) != ow:
            raise ShapeError(f"locally-connected filters {self.filters.shape} do not fit input {input_shape}")
        return (K, oh, ow)

    def forward(self, x):
        self.output_shape(x.shape[1:])
        fh, fw = self.filters.shape[4:]
        win = _windows(x, fh, fw, self.stride)
        f = self.filters
        z = _accumulate_taps(win, lambda c, p, q: f[:, :, :, c, p, q])
        z = z + self.biases[None, :, None, None]
        return z, activate(z, self.activation)

    def backward(self, x, z, a, grad_a):
        dz = activation_grad(z, a, grad_a, self.activation)
        fh, fw = self.filters.shape[4:]
        win = _windows(x, fh, fw, self.stride)
        gf = np.einsum("bkij,bcijpq->kijcpq", dz, win, optimize=True)
        cols = np.einsum("bkij,kijcpq->bcijpq", dz, self.filters, optimize=True)
        gx = _scatter_windows(cols, x.shape, self.stride)
        return gx, {"filters": gf, "biases": dz.sum(axis=(0, 2, 3))}

    def scaled(self, factor):
        return LocalLayer(self.filters * factor, self.biases.copy(), self.stride, self.activation)

    def incoming(self):
        K, oh, ow = self.filters.shape[:3]
        return self.filters.reshape(K * oh * ow, -1)

    def set_incoming(self, rows):
        self.filters = np.ascontiguousarray(rows).reshape(self.filters.shape)

    def describe(self):
        K, _, _, _, fh, fw = self.filters.shape
        return f"local:{K}:{fh}x{fw}:{self.stride}:{self.activation}"


@dataclass(frozen=True)
class PoolSpec:
    kind: str = "max"
    window: int = 3
    stride: int = 2

    def __post_init__(self):
        if self.kind not in ("max", "average"):
            raise ValueError(f"pool kind must be 'max' or 'average', got {self.kind!r}")
        if self.window < 1 or self.stride < 1:
            raise ValueError("pool window and stride must be at least 1")

    @property
    def overlapping(self) -> bool:
        return self.stride < self.window


def pool_forward(x, spec: PoolSpec):
    """Max or mean over each window. For max pooling also returns the flat
    within-window argmax (first maximum in row-major order wins ties)."""
    x = np.asarray(x, dtype=np.float64)
    win = _windows(x, spec.window, spec.window, spec.stride)
    flat = win.reshape(win.shape[:4] + (-1,))
    if spec.kind == "max":
        arg = flat.argmax(axis=-1)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], arg
    return flat.mean(axis=-1), None


def pool_backward(x_shape, spec: PoolSpec, argmax, grad_out) -> np.ndarray:
    B, C, oh, ow = grad_out.shape
    w = spec.window
    cols = np.zeros((B, C, oh, ow, w * w))
    if spec.kind == "max":
        np.put_along_axis(cols, argmax[..., None], grad_out[..., None], axis=-1)
    else:
        cols += (grad_out / (w * w))[..., None]
    return _scatter_windows(cols.reshape(B, C, oh, ow, w, w), x_shape, spec.stride)


class PoolLayer(Layer):
    def __init__(self, spec: PoolSpec):
        self.spec = spec

    def output_shape(self, input_shape):
        C, H, W = input_shape
        return (C, out_size(H, self.spec.window, self.spec.stride), out_size(W, self.spec.window, self.spec.stride))

    def forward(self, x):
        out, _ = pool_forward(x, self.spec)
        return out, out

    def backward(self, x, z, a, grad_a):
        _, arg = pool_forward(x, self.spec)
        return pool_backward(x.shape, self.spec, arg, grad_a), {}

    def describe(self):
        return f"pool:{self.spec.kind}:{self.spec.window}:{self.spec.stride}"


@dataclass(frozen=True)
class LrnSpec:
    """Normalisation across ``width_N`` neighbouring banks (half-width ``width_N // 2``)."""

    width_N: int = 9
    alpha: float = 0.001
    beta: float = 0.75

    def __post_init__(self):
        if self.width_N < 1:
            raise ValueError("width_N must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def _bank_window_sum(v: np.ndarray, half: int) -> np.ndarray:
    """Sum over banks ``i-half .. i+half`` (clipped) along axis 1, in ascending bank order."""
    K = v.shape[1]
    out = np.zeros_like(v)
    for d in range(-half, half + 1):
        lo, hi = max(0, -d), min(K, K - d)
        if lo < hi:
            out[:, lo:hi] += v[:, lo + d:hi + d]
    return out


def lrn_forward(a, spec: LrnSpec) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if spec.alpha == 0:
        return a.copy()
    denom = 1.0 + spec.alpha * _bank_window_sum(a * a, spec.width_N // 2)
    return a * denom ** -spec.beta


def lrn_backward(a, spec: LrnSpec, grad_out) -> np.ndarray:
    if spec.alpha == 0:
        return np.array(grad_out, dtype=np.float64)
    half = spec.width_N // 2
    denom = 1.0 + spec.alpha * _bank_window_sum(a * a, half)
    scale = denom ** -spec.beta
    # the window is symmetric, so the same window sum collects every i whose window contains k
    cross = _bank_window_sum(grad_out * a * scale / denom, half)
    return grad_out * scale - 2.0 * spec.alpha * spec.beta * a * cross


class LrnLayer(Layer):
    def __init__(self, spec: LrnSpec):
        self.spec = spec

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError("response normalisation needs [banks, height, width] inputs")
        return tuple(input_shape)

    def forward(self, x):
        out = lrn_forward(x, self.spec)
        return out, out

    def backward(self, x, z, a, grad_a):
        return lrn_backward(x, self.spec, grad_a), {}

    def describe(self):
        return f"lrn:{self.spec.width_N}:{self.spec.alpha!r}:{self.spec.beta!r}"


def conv2d_forward(x, layer: ConvLayer) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64))[1]


def local_forward(x, layer: LocalLayer) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64))[1]


def convnet_backward(net, trace, grad_output):
    """Parameter gradients and the input gradient for a traced convnet pass."""
    from .layers import network_backward

    return network_backward(net, trace, grad_output, return_input_grad=True)


def init_positive(layer, probe, rng: RandomSource, sd: float = 0.01, min_fraction: float = 0.5,
                  max_tries: int = 40):
    """Redraw a layer's weights, doubling the standard deviation, until at least
    ``min_fraction`` of its units get a positive input for some case in ``probe``.

    Returns the standard deviation that was accepted.
    """
    name = "weights" if "weights" in layer.params() else "filters"
    for _ in range(max_tries):
        setattr(layer, name, gauss_sample(rng, 0.0, sd, layer.params()[name].shape))
        z, _ = layer.forward(probe)
        if np.mean((z > 0).any(axis=0)) >= min_fraction:
            return sd
        sd *= 2.0
    raise RuntimeError("no initial variance produced enough positive inputs")
