"""Executable checks of the model-averaging guarantees and of backpropagation.

Each ``check_*`` function builds random problems from a seed, compares the
fast path against an independent route (exhaustive subnetwork enumeration or
central finite differences) and returns a :class:`CheckReport`.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .convnet import ConvLayer, LocalLayer, LrnLayer, LrnSpec, PoolLayer, PoolSpec
from .dropout import DropoutSpec, subnet_log_distributions, enumerate_subnet_outputs, to_mean_network
from .layers import DenseLayer, Network, log_softmax, network_backward, network_forward, softmax_xent
from .numeric import RandomSource, gauss_sample

FD_STEP = 1e-6
KINK_MARGIN = 1e-4
# gradient entries are compared relative to max(|analytic|, |numeric|, this floor)
REL_ERR_FLOOR = 1e-4


@dataclass
class CheckReport:
    name: str
    passed: bool
    observed: float
    threshold: float
    runtime_s: float
    trials: int = 0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: observed={self.observed:.3e} threshold={self.threshold:.1e} "
                f"trials={self.trials} runtime={self.runtime_s:.2f}s")


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["check", "status", "observed", "threshold", "trials", "runtime_s"])
        for r in reports:
            w.writerow([r.name, "pass" if r.passed else "fail", f"{r.observed:.6e}", f"{r.threshold:.1e}",
                        r.trials, f"{r.runtime_s:.3f}"])


def random_single_hidden(rng: RandomSource, n_hidden: int, output: str = "softmax", n_in: int | None = None,
                         n_out: int | None = None, scale: float = 1.0) -> Network:
    g = rng.generator
    n_in = n_in or int(g.integers(2, 7))
    n_out = n_out or int(g.integers(2, 6))
    hidden = ("relu", "logistic")[int(g.integers(2))]
    return Network([
        DenseLayer(gauss_sample(rng, 0, scale, (n_in, n_hidden)), gauss_sample(rng, 0, scale, n_hidden), hidden),
        DenseLayer(gauss_sample(rng, 0, scale, (n_hidden, n_out)), gauss_sample(rng, 0, scale, n_out), output),
    ], (n_in,))


# --- model averaging -----------------------------------------------------------


def check_geometric_equivalence(trials: int = 100, n_max: int = 12, seed: int = 0,
                                tol: float = 1e-9) -> CheckReport:
    """Mean-network softmax vs renormalised geometric mean over all 2**N subnetworks."""
    if n_max > 12:
        raise ValueError("n_max is capped at 12 for the equivalence check")
    t0 = time.perf_counter()
    rng = RandomSource(seed)
    spec = DropoutSpec(1.0, 0.5)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.generator.integers(1, n_max + 1))
        net = random_single_hidden(rng, n)
        x = gauss_sample(rng, 0, 1, net.input_shape)
        mean_net = to_mean_network(net, spec).predict(x[None])[0]
        geo = np.exp(log_softmax(subnet_log_distributions(net, x).mean(axis=0)))
        worst = max(worst, float(np.abs(mean_net - geo).max()))
    return CheckReport("geometric_equivalence", worst < tol, worst, tol, time.perf_counter() - t0, trials)


def check_logprob_superiority(trials: int = 1000, seed: int = 0, n_hidden: int = 6,
                              round_tol: float = 1e-12) -> CheckReport:
    """log p_mean(correct) >= average subnet log p(correct), strictly when subnets disagree.

    When all subnetworks agree the two sides are equal in exact arithmetic;
    ``round_tol`` absorbs the last-bit differences between vectorised and
    scalar ``exp``/``log`` in that case.
    """
    t0 = time.perf_counter()
    rng = RandomSource(seed)
    spec = DropoutSpec(1.0, 0.5)
    violations, min_margin = 0, np.inf
    for _ in range(trials):
        net = random_single_hidden(rng, n_hidden)
        x = gauss_sample(rng, 0, 1, net.input_shape)
        label = int(rng.generator.integers(net.layers[-1].n_out))
        logs = subnet_log_distributions(net, x)
        _, trace = to_mean_network(net, spec).forward(x[None])
        logp_mean = float(log_softmax(trace.zs[-1][0])[label])
        avg = float(logs[:, label].mean())
        margin = logp_mean - avg
        differ = float(np.abs(np.exp(logs) - np.exp(logs[0])).max()) > 1e-12
        if margin < -round_tol or (differ and not margin > 0):
            violations += 1
        min_margin = min(min_margin, margin)
    return CheckReport("logprob_superiority", violations == 0, float(violations), 0.0,
                       time.perf_counter() - t0, trials, {"min_margin": float(min_margin)})


def check_regression_superiority(trials: int = 1000, seed: int = 0, n_hidden: int = 8,
                                 rel_tol: float = 1e-12) -> CheckReport:
    """Squared error of the mean network vs the average over all subnetworks (linear outputs)."""
    t0 = time.perf_counter()
    rng = RandomSource(seed)
    spec = DropoutSpec(1.0, 0.5)
    violations, min_gap = 0, np.inf
    for _ in range(trials):
        net = random_single_hidden(rng, n_hidden, output="linear", n_out=int(rng.generator.integers(1, 4)))
        x = gauss_sample(rng, 0, 1, net.input_shape)
        target = gauss_sample(rng, 0, 1, net.layers[-1].n_out)
        preds = enumerate_subnet_outputs(net, x)
        avg_se = float(((preds - target) ** 2).sum(axis=1).mean())
        mean_pred = to_mean_network(net, spec).predict(x[None])[0]
        se_mean = float(((mean_pred - target) ** 2).sum())
        if se_mean > avg_se + rel_tol * max(1.0, avg_se):
            violations += 1
        min_gap = min(min_gap, avg_se - se_mean)
    return CheckReport("regression_superiority", violations == 0, float(violations), 0.0,
                       time.perf_counter() - t0, trials, {"min_gap": float(min_gap)})


# --- gradient checks ------------------------------------------------------------


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def numeric_param_grads(net: Network, loss_fn, h: float = FD_STEP) -> list[dict]:
    """Central differences of ``loss_fn()`` for every parameter entry of ``net``."""
    out = []
    for layer in net.layers:
        grads = {}
        for name, p in layer.params().items():
            g = np.zeros_like(p)
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn()
                flat[i] = old - h
                down = loss_fn()
                flat[i] = old
                gflat[i] = (up - down) / (2 * h)
            grads[name] = g
        out.append(grads)
    return out


def _near_kink(net: Network, X, masks) -> bool:
    _, trace = network_forward(net, X, masks, "stochastic" if masks is not None else "deterministic")
    for layer, x, z in zip(net.layers, trace.inputs, trace.zs):
        if layer.activation == "relu" and np.any(np.abs(z) < KINK_MARGIN):
            return True
        if isinstance(layer, PoolLayer) and layer.spec.kind == "max":
            w, s = layer.spec.window, layer.spec.stride
            win = sliding_window_view(x, (w, w), axis=(2, 3))[:, :, ::s, ::s].reshape(z.shape + (-1,))
            top2 = np.sort(win, axis=-1)[..., -2:]
            if np.any(top2[..., 1] - top2[..., 0] < KINK_MARGIN):
                return True
    return False


def gradient_check(net: Network, X, y, masks=None) -> float:
    """Worst relative error between backprop and central differences of the mean cross-entropy."""
    mode = "stochastic" if masks is not None else "deterministic"

    def loss_fn():
        _, trace = network_forward(net, X, masks, mode)
        return softmax_xent(trace.zs[-1], y)[0]

    _, trace = network_forward(net, X, masks, mode)
    _, g = softmax_xent(trace.zs[-1], y)
    analytic = network_backward(net, trace, g)
    numeric = numeric_param_grads(net, loss_fn)
    return max(relative_error(a[k], n[k]) for a, n in zip(analytic, numeric) for k in a)


def random_dense_problem(rng: RandomSource):
    g = rng.generator
    sizes = [int(g.integers(2, 11)) for _ in range(int(g.integers(1, 4)) + 1)] + [int(g.integers(2, 6))]
    hidden = ("relu", "logistic")[int(g.integers(2))]
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "softmax" if i == len(sizes) - 2 else hidden
        layers.append(DenseLayer(gauss_sample(rng, 0, 0.7, (a, b)), gauss_sample(rng, 0, 0.3, b), act))
    net = Network(layers, (sizes[0],))
    batch = int(g.integers(1, 5))
    X = gauss_sample(rng, 0, 1, (batch, sizes[0]))
    y = g.integers(0, sizes[-1], batch)
    masks = [None] + [(g.random((batch, n)) < 0.5).astype(float) for n in sizes[1:-1]]
    return net, X, y, masks


def random_conv_problem(rng: RandomSource):
    g = rng.generator
    C, H = int(g.integers(1, 3)), int(g.integers(6, 9))
    banks = int(g.integers(2, 5))
    layers = [ConvLayer(gauss_sample(rng, 0, 0.5, (banks, C, 3, 3)), gauss_sample(rng, 0, 0.2, banks),
                        1, ("relu", "logistic")[int(g.integers(2))])]
    shape = layers[0].output_shape((C, H, H))
    layers.append(PoolLayer(PoolSpec(("max", "average")[int(g.integers(2))], 2 + int(g.integers(2)), 1 + int(g.integers(2)))))
    shape = layers[-1].output_shape(shape)
    layers.append(LrnLayer(LrnSpec(int(g.integers(1, 6)), float(g.uniform(0.05, 0.5)), float(g.uniform(0.5, 1.0)))))
    if shape[1] >= 2 and g.random() < 0.5:
        local = LocalLayer.init(rng, shape, 2, 2, 1, "relu", 0.5, 0.1)
        layers.append(local)
        shape = local.output_shape(shape)
    k = int(g.integers(2, 5))
    layers.append(DenseLayer(gauss_sample(rng, 0, 0.5, (int(np.prod(shape)), k)), gauss_sample(rng, 0, 0.2, k), "softmax"))
    net = Network(layers, (C, H, H))
    batch = int(g.integers(1, 3))
    X = gauss_sample(rng, 0, 1, (batch, C, H, H))
    y = g.integers(0, k, batch)
    return net, X, y, None


def check_gradients(arch_samples: int = 50, seed: int = 0, dense_tol: float = 1e-5,
                    conv_tol: float = 1e-4) -> CheckReport:
    """Backprop vs central differences over random dense (with fixed dropout masks) and convnet stacks."""
    t0 = time.perf_counter()
    rng = RandomSource(seed)
    worst = {"dense": 0.0, "conv": 0.0}
    for i in range(arch_samples):
        kind = "dense" if i % 2 == 0 else "conv"
        make = random_dense_problem if kind == "dense" else random_conv_problem
        for _ in range(100):
            net, X, y, masks = make(rng)
            if not _near_kink(net, X, masks):
                break
        worst[kind] = max(worst[kind], gradient_check(net, X, y, masks))
    passed = worst["dense"] <= dense_tol and worst["conv"] <= conv_tol
    observed = max(worst["dense"] / dense_tol, worst["conv"] / conv_tol)
    return CheckReport("gradients", passed, observed, 1.0, time.perf_counter() - t0, arch_samples,
                       {"dense_worst": worst["dense"], "conv_worst": worst["conv"]})


def run_all(seed: int = 0) -> list[CheckReport]:
    return [
        check_geometric_equivalence(seed=seed),
        check_logprob_superiority(seed=seed),
        check_regression_superiority(seed=seed),
        check_gradients(seed=seed),
    ]
