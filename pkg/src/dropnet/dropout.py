"""Dropout masks, the mean network, and exhaustive subnetwork enumeration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ConsistencyError, DenseLayer, Network, log_softmax, softmax
from .numeric import RandomSource, bernoulli_mask

MAX_ENUMERATION_UNITS = 20


class DropoutConfigError(ValueError):
    pass


class CapacityError(ValueError):
    """Enumeration over 2**N subnetworks was requested for too large an N."""


@dataclass(frozen=True)
class DropoutSpec:
    """Retain probabilities: one for the inputs, one per hidden layer.

    ``hidden_retain`` may be a single float, applied to every hidden layer, or
    a tuple with one entry per hidden layer.
    """

    input_retain: float = 0.8
    hidden_retain: float | tuple = 0.5

    def __post_init__(self):
        probs = [self.input_retain] + list(np.atleast_1d(self.hidden_retain))
        for p in probs:
            if not 0.0 < float(p) <= 1.0:
                raise DropoutConfigError(f"retain probabilities must lie in (0, 1], got {p}")

    @classmethod
    def off(cls) -> "DropoutSpec":
        return cls(1.0, 1.0)

    def is_off(self) -> bool:
        return self.input_retain == 1.0 and np.all(np.atleast_1d(self.hidden_retain) == 1.0)

    def retain_per_layer(self, net: Network) -> list[float]:
        """Retain probability applied to the input of each layer of ``net``."""
        n_hidden = len(net.layers) - 1
        hidden = self.hidden_retain
        if np.ndim(hidden) == 0:
            hidden = [float(hidden)] * n_hidden
        else:
            hidden = [float(h) for h in hidden]
            if len(hidden) != n_hidden:
                raise DropoutConfigError(
                    f"network has {n_hidden} hidden layers but {len(hidden)} hidden retain probabilities were given")
        return [float(self.input_retain)] + hidden


def sample_case_masks(rng: RandomSource, spec: DropoutSpec, net: Network, batch: int) -> list:
    """Independent per-case masks for one minibatch, one entry per layer input.

    Layers whose retain probability is 1 get an all-ones mask without
    consuming random draws.
    """
    masks = []
    for p, shape in zip(spec.retain_per_layer(net), net.shapes[:-1]):
        full = (int(batch),) + tuple(shape)
        if p == 1.0:
            masks.append(np.ones(full))
        else:
            masks.append(bernoulli_mask(rng, p, full))
    return masks


def to_mean_network(net: Network, spec: DropoutSpec) -> Network:
    """Copy of ``net`` whose weights are scaled by the retain probability of their inputs.

    With hidden retain 0.5 this halves every weight leaving a hidden layer.
    """
    layers = []
    for layer, p in zip(net.layers, spec.retain_per_layer(net)):
        if p == 1.0:
            layers.append(layer.copy())
        elif layer.has_weights():
            layers.append(layer.scaled(p))
        else:
            raise ConsistencyError(
                f"{type(layer).__name__} receives dropped-out units but has no weights to rescale")
    return Network(layers, net.input_shape)


def subset_masks(n: int) -> np.ndarray:
    """All 2**n binary masks in counting order; bit j of row s switches unit j on."""
    if n > MAX_ENUMERATION_UNITS:
        raise CapacityError(f"refusing to enumerate 2**{n} subnetworks (limit {MAX_ENUMERATION_UNITS})")
    s = np.arange(2**n)[:, None]
    return ((s >> np.arange(n)) & 1).astype(np.float64)


def subset_log_weights(n: int, retain: float) -> np.ndarray:
    """log P(mask) for every mask of :func:`subset_masks` under independent retention."""
    k = subset_masks(n).sum(axis=1)
    if retain == 1.0:
        return np.where(k == n, 0.0, -np.inf)
    return k * np.log(retain) + (n - k) * np.log1p(-retain)


def _require_single_hidden(net: Network) -> None:
    if len(net.layers) != 2 or not all(isinstance(layer, DenseLayer) for layer in net.layers):
        raise ConsistencyError("enumeration needs a dense network with exactly one hidden layer")


def enumerate_subnet_outputs(net: Network, x, layer: int = 1, logits: bool = False) -> np.ndarray:
    """Output of every subnetwork obtained by masking the input of ``layer``.

    ``layer=1`` enumerates hidden-unit subsets, ``layer=0`` input subsets.
    ``x`` is a single case. Returns ``[2**n, n_out]`` in subset counting
    order; ``logits=True`` returns output-layer pre-activations instead.
    """
    _require_single_hidden(net)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    n = net.unit_counts()[layer]
    masks = subset_masks(n)
    out = []
    chunk = 1 << 15
    for start in range(0, masks.shape[0], chunk):
        m = masks[start:start + chunk]
        h = x
        if layer == 0:
            h = m * x
        z, h = net.layers[0].forward(h)
        if layer == 1:
            h = m * h
        z, a = net.layers[1].forward(h)
        out.append(z if logits else a)
    return np.concatenate(out, axis=0)


def enumerate_subnet_distributions(net: Network, x) -> np.ndarray:
    """Softmax distribution of each of the 2**N hidden-unit subnetworks for one case."""
    if net.output_activation != "softmax":
        raise ConsistencyError("enumerate_subnet_distributions needs a softmax output layer")
    return enumerate_subnet_outputs(net, x, layer=1)


def geometric_mean_of_logs(log_dists: np.ndarray, log_weights=None) -> np.ndarray:
    """Renormalised (weighted) geometric mean given log-probability rows."""
    log_dists = np.asarray(log_dists, dtype=np.float64)
    if log_weights is None:
        mean_log = log_dists.mean(axis=0)
    else:
        w = np.exp(np.asarray(log_weights) - np.max(log_weights))
        w /= w.sum()
        mean_log = w @ log_dists
    return softmax(mean_log)


def geometric_mean_distribution(dists, weights=None, tol: float = 1e-9) -> np.ndarray:
    """Entrywise geometric mean of probability rows, renormalised to sum to one.

    ``weights`` optionally gives each row's exponent (normalised to sum to one).
    Rows must be strictly positive; computation is in log space.
    """
    dists = np.atleast_2d(np.asarray(dists, dtype=np.float64))
    if np.any(dists <= 0):
        raise ValueError("geometric mean undefined: distribution has a zero or negative entry")
    if np.any(np.abs(dists.sum(axis=1) - 1.0) > tol):
        raise ValueError("rows must sum to one")
    log_weights = None if weights is None else np.log(np.asarray(weights, dtype=np.float64))
    return geometric_mean_of_logs(np.log(dists), log_weights)


def subnet_log_distributions(net: Network, x, layer: int = 1) -> np.ndarray:
    """Log-softmax of every subnetwork, without the round trip through probabilities."""
    return log_softmax(enumerate_subnet_outputs(net, x, layer, logits=True))


def mean_network_output(net: Network, spec: DropoutSpec, x) -> np.ndarray:
    return to_mean_network(net, spec).predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
