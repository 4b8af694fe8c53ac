"""Minibatch SGD with decaying learning rate, momentum ramp and max-norm projection.

The update, applied once per minibatch, is::

    velocity = p(t) * velocity - (1 - p(t)) * lr(t) * mean_grad
    w        = w + velocity

with ``lr(t) = eps0 * f**t`` and ``p(t)`` rising linearly from ``p_i`` to ``p_f``
over the first ``T`` epochs. ``t`` counts completed epochs starting at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Network
from .numeric import NumericError, ShapeError, row_sq_norms


@dataclass
class OptimizerConfig:
    eps0: float = 10.0
    decay_f: float = 0.998
    p_i: float = 0.5
    p_f: float = 0.99
    T: int = 500
    max_sq_norm: float | None = 15.0
    batch_size: int = 100
    constrain_output: bool = False

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not 0 < self.decay_f <= 1:
            raise ValueError("decay_f must lie in (0, 1]")
        if not (0 <= self.p_i < 1 and 0 <= self.p_f < 1):
            raise ValueError("momentum values must lie in [0, 1)")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.max_sq_norm is not None and not self.max_sq_norm > 0:
            raise ValueError("max_sq_norm must be positive when set")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class OptimizerState:
    velocity: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros(cls, net: Network) -> "OptimizerState":
        return cls([{k: np.zeros_like(v) for k, v in p.items()} for p in net.params()], 0)


def lr_at(config: OptimizerConfig, t: int) -> float:
    if t < 0:
        raise ValueError("epoch index must be non-negative")
    return config.eps0 * config.decay_f ** t


def momentum_at(config: OptimizerConfig, t: int) -> float:
    """Linear ramp from ``p_i`` at t=0 to ``p_f`` at t=T, constant afterwards."""
    if t < 0:
        raise ValueError("epoch index must be non-negative")
    if t >= config.T:
        return config.p_f
    frac = t / config.T
    return (1.0 - frac) * config.p_i + frac * config.p_f


def maxnorm_project(W, l: float) -> np.ndarray:
    """Rescale rows of ``W`` whose squared length exceeds ``l`` down to length ``l``.

    Rows within the bound are returned untouched, so the projection is
    idempotent bit for bit.
    """
    if not l > 0:
        raise ValueError("max squared norm must be positive")
    W = np.asarray(W, dtype=np.float64)
    out = W.copy()
    sq = row_sq_norms(W)
    bad = sq > l
    if not bad.any():
        return out
    rows = W[bad] * np.sqrt(l / sq[bad])[:, None]
    # rounding can leave a row a few ulps above l; shrink those by one ulp at a time
    over = row_sq_norms(rows) > l
    while over.any():
        rows[over] *= np.nextafter(1.0, 0.0)
        over = row_sq_norms(rows) > l
    out[bad] = rows
    return out


def _check_grads(net: Network, state: OptimizerState, grads) -> None:
    if len(grads) != len(net.layers) or len(state.velocity) != len(net.layers):
        raise ShapeError("gradient/velocity lists do not match the network")
    for layer, g, v in zip(net.layers, grads, state.velocity):
        for name, p in layer.params().items():
            if g[name].shape != p.shape or v[name].shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g[name].shape}, parameter {p.shape}")
            if not np.all(np.isfinite(g[name])):
                raise NumericError(f"non-finite gradient for {type(layer).__name__}.{name}")


def apply_max_norm(net: Network, l: float | None, constrain_output: bool = False) -> None:
    if l is None:
        return
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        if not layer.has_weights() or (i == last and not constrain_output):
            continue
        rows = layer.incoming()
        sq = row_sq_norms(rows)
        if np.any(sq > l):
            layer.set_incoming(maxnorm_project(rows, l))


def sgd_update(net: Network, state: OptimizerState, grads, config: OptimizerConfig, t: int) -> None:
    """One minibatch step in place on ``net`` and ``state``, then max-norm projection."""
    _check_grads(net, state, grads)
    p = momentum_at(config, t)
    step = (1.0 - p) * lr_at(config, t)
    for layer, g, v in zip(net.layers, grads, state.velocity):
        for name, param in layer.params().items():
            vel = v[name]
            vel *= p
            vel -= step * g[name]
            param += vel
    apply_max_norm(net, config.max_sq_norm, config.constrain_output)


def simple_momentum_update(net: Network, state: OptimizerState, grads, lr: float,
                           momentum: float = 0.9) -> None:
    """Fixed-momentum step ``v = m*v - lr*grad; w = w + v`` (minimisation sign)."""
    _check_grads(net, state, grads)
    for layer, g, v in zip(net.layers, grads, state.velocity):
        for name, param in layer.params().items():
            vel = v[name]
            vel *= momentum
            vel -= lr * g[name]
            param += vel
