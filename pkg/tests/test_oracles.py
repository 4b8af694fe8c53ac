import numpy as np

from dropnet.dropout import DropoutSpec, enumerate_subnet_distributions, geometric_mean_distribution, to_mean_network
from dropnet.layers import DenseLayer, Network, log_softmax, network_backward, network_forward
from dropnet.numeric import RandomSource
from dropnet.oracles import (CheckReport, check_geometric_equivalence, check_gradients, check_logprob_superiority,
                             check_regression_superiority, gradient_check, numeric_param_grads, relative_error,
                             subnet_log_distributions)


def test_single_hidden_unit_by_hand():
    # unit on: logits (2, 0); off: (0, 0). geometric mean of the two is softmax of (1, 0)
    net = Network([DenseLayer([[1.0]], [0.0], "relu"), DenseLayer([[2.0, 0.0]], [0.0, 0.0], "softmax")], (1,))
    dists = enumerate_subnet_distributions(net, [1.0])
    geo = geometric_mean_distribution(dists)
    e = np.exp(1.0)
    np.testing.assert_allclose(geo, [e / (e + 1), 1 / (e + 1)], rtol=0, atol=1e-15)
    mean = to_mean_network(net, DropoutSpec(1.0, 0.5)).predict([[1.0]])[0]
    assert np.max(np.abs(mean - geo)) <= 1e-12


def test_zero_output_weights_give_uniform_on_both_sides():
    net = Network([DenseLayer(np.ones((2, 4)), np.ones(4), "relu"), DenseLayer(np.zeros((4, 3)), np.zeros(3), "softmax")],
                  (2,))
    geo = geometric_mean_distribution(enumerate_subnet_distributions(net, [0.3, 0.1]))
    mean = to_mean_network(net, DropoutSpec(1.0, 0.5)).predict([[0.3, 0.1]])[0]
    assert np.all(geo == 1 / 3) and np.all(mean == 1 / 3)


def test_equivalence_report():
    r = check_geometric_equivalence(trials=100, n_max=10, seed=1)
    assert r.passed and r.observed < 1e-9 and r.trials == 100
    assert r.line().startswith("PASS geometric_equivalence")


def test_identical_subnets_give_equality():
    net = Network([DenseLayer(np.ones((2, 3)), np.ones(3), "relu"), DenseLayer(np.zeros((3, 2)), [0.5, 0.0], "softmax")],
                  (2,))
    logs = subnet_log_distributions(net, [1.0, 1.0])
    _, trace = to_mean_network(net, DropoutSpec(1.0, 0.5)).forward([[1.0, 1.0]])
    assert np.all(logs == logs[0])
    assert logs[:, 0].mean() == log_softmax(trace.zs[-1][0])[0]


def test_logprob_margin_is_the_jensen_gap():
    # margin = log p_mean(y) - mean_S log p_S(y) = -log sum_k exp(mean_S log p_S(k)) >= 0
    rng = RandomSource(2)
    net = Network.dense([3, 5, 4], rng, sd=1.0)
    x = np.array([0.5, -1.0, 2.0])
    logs = subnet_log_distributions(net, x)
    margin = np.log(to_mean_network(net, DropoutSpec(1.0, 0.5)).predict(x[None])[0][1]) - logs[:, 1].mean()
    jensen = -np.log(np.exp(logs.mean(axis=0)).sum())
    assert margin > 0 and abs(margin - jensen) <= 1e-12


def test_logprob_and_regression_reports():
    lp = check_logprob_superiority(trials=1000, seed=3)
    assert lp.passed and lp.observed == 0 and lp.details["min_margin"] >= -1e-12
    rg = check_regression_superiority(trials=1000, seed=3)
    assert rg.passed and rg.observed == 0


def test_regression_equality_when_subnets_agree():
    net = Network([DenseLayer(np.ones((1, 2)), [0.0, 0.0], "relu"), DenseLayer(np.zeros((2, 1)), [0.7], "linear")], (1,))
    mean = to_mean_network(net, DropoutSpec(1.0, 0.5)).predict([[1.0]])[0, 0]
    assert mean == 0.7


def test_linear_one_one_slope():
    # differentiate the output itself: its slopes are x (weight) and 1 (bias)
    net = Network([DenseLayer([[0.25]], [0.125], "linear")], (1,))
    X = np.array([[0.5]])
    out, trace = network_forward(net, X)
    analytic = network_backward(net, trace, np.ones_like(out))
    numeric = numeric_param_grads(net, lambda: float(net.predict(X).sum()))
    assert analytic[0]["weights"][0, 0] == 0.5 and analytic[0]["biases"][0] == 1.0
    for k in ("weights", "biases"):
        assert abs(analytic[0][k] - numeric[0][k]).max() <= 1e-10


def test_masked_6_4_3_gradcheck():
    net = Network.dense([6, 4, 3], RandomSource(4), hidden="logistic", sd=0.8)
    X = np.random.default_rng(4).normal(size=(3, 6))
    masks = [np.ones((3, 6)), np.array([[1, 0, 1, 1], [0, 1, 1, 0], [1, 1, 0, 1]], dtype=float)]
    assert gradient_check(net, X, np.array([0, 2, 1]), masks) <= 1e-5


def test_gradient_report_and_relative_error():
    assert relative_error([1.0], [1.0 + 1e-7]) <= 1e-7
    assert relative_error([0.0], [1e-9]) == 1e-9 / 1e-4
    r = check_gradients(arch_samples=10, seed=5)
    assert r.passed and r.details["dense_worst"] <= 1e-5 and r.details["conv_worst"] <= 1e-4


def test_reports_are_deterministic():
    a = check_logprob_superiority(trials=50, seed=9)
    b = check_logprob_superiority(trials=50, seed=9)
    assert (a.passed, a.observed, a.details) == (b.passed, b.observed, b.details)
    assert isinstance(a, CheckReport)
