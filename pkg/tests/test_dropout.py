import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropnet.dropout import (CapacityError, DropoutConfigError, DropoutSpec, enumerate_subnet_distributions,
                             enumerate_subnet_outputs, geometric_mean_distribution, mean_network_output,
                             sample_case_masks, to_mean_network)
from dropnet.layers import ConsistencyError, DenseLayer, Network, log_softmax, softmax
from dropnet.numeric import RandomSource


def small_net(n_in, n_hidden, n_out, seed, hidden="relu", output="softmax", sd=1.0):
    return Network.dense([n_in, n_hidden, n_out], RandomSource(seed), hidden=hidden, output=output, sd=sd,
                         hidden_bias=0.1)


def test_spec_defaults_and_validation():
    spec = DropoutSpec()
    assert (spec.input_retain, spec.hidden_retain) == (0.8, 0.5)
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(DropoutConfigError):
            DropoutSpec(input_retain=bad)


def test_spec_must_cover_every_hidden_layer():
    net = Network.dense([4, 3, 3, 2], RandomSource(0))
    assert DropoutSpec(0.8, (0.5, 0.6)).retain_per_layer(net) == [0.8, 0.5, 0.6]
    with pytest.raises(DropoutConfigError):
        sample_case_masks(RandomSource(0), DropoutSpec(0.8, (0.5,)), net, 2)


def test_retain_one_gives_all_ones_masks():
    net = Network.dense([4, 6, 2], RandomSource(0))
    masks = sample_case_masks(RandomSource(1), DropoutSpec(1.0, 1.0), net, 3)
    assert [m.shape for m in masks] == [(3, 4), (3, 6)]
    assert all(np.all(m == 1) for m in masks)


def test_cases_in_a_batch_are_uncorrelated():
    net = Network.dense([1, 1, 2], RandomSource(0))
    # one call with 2*10**5 cases is the same draw sequence as 10**5 two-case batches
    m = sample_case_masks(RandomSource(2), DropoutSpec(0.5, 0.5), net, 2 * 10**5)[1].reshape(-1, 2)
    assert abs(np.corrcoef(m[:, 0], m[:, 1])[0, 1]) <= 0.01


def test_hidden_count_concentrates():
    net = Network.dense([2, 4000, 2], RandomSource(0), sd=0.0)
    counts = sample_case_masks(RandomSource(3), DropoutSpec(1.0, 0.5), net, 200)[1].sum(axis=1)
    assert np.all(np.abs(counts - 2000) <= 200)


def test_per_unit_retain_frequency():
    net = Network.dense([10, 10, 2], RandomSource(0))
    masks = sample_case_masks(RandomSource(4), DropoutSpec(0.8, 0.5), net, 10**5)
    assert np.max(np.abs(masks[0].mean(axis=0) - 0.8)) <= 0.01
    assert np.max(np.abs(masks[1].mean(axis=0) - 0.5)) <= 0.01


def test_mean_network_scaling():
    net = Network.dense([5, 4, 3, 2], RandomSource(5), sd=1.0)
    same = to_mean_network(net, DropoutSpec(1.0, 1.0))
    for a, b in zip(net.layers, same.layers):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
    mean = to_mean_network(net, DropoutSpec(0.8, 0.5))
    assert np.array_equal(mean.layers[0].weights, net.layers[0].weights * 0.8)
    assert np.array_equal(mean.layers[1].weights, net.layers[1].weights / 2)
    assert np.array_equal(mean.layers[2].weights, net.layers[2].weights / 2)
    for a, b in zip(net.layers, mean.layers):
        assert np.array_equal(a.biases, b.biases)
    assert mean.layers[0].weights is not net.layers[0].weights


def test_input_dropout_mean_net_is_weighted_geometric_mean():
    # exact only when the dropped inputs reach the softmax through affine maps
    net = small_net(3, 2, 2, 6, hidden="linear")
    x = np.array([0.7, -1.2, 0.4])
    r = 0.8
    W1, b1, W2, b2 = net.layers[0].weights, net.layers[0].biases, net.layers[1].weights, net.layers[1].biases
    logs, weights = [], []
    for bits in itertools.product([0, 1], repeat=3):
        m = np.array(bits, dtype=float)
        logs.append(log_softmax(((x * m) @ W1 + b1) @ W2 + b2))
        weights.append(r ** m.sum() * (1 - r) ** (3 - m.sum()))
    weights = np.array(weights)
    expected = softmax(weights @ np.array(logs))
    got = mean_network_output(net, DropoutSpec(r, 1.0), x)
    assert np.max(np.abs(got - expected)) <= 1e-9


def test_enumeration_counts_and_degenerate_case():
    net = small_net(3, 1, 2, 7)
    assert enumerate_subnet_distributions(net, np.ones(3)).shape == (2, 2)
    net = small_net(4, 5, 3, 8)
    net.layers[1].weights[:] = 0
    dists = enumerate_subnet_distributions(net, np.ones(4))
    assert dists.shape == (32, 3) and np.all(dists == dists[0])


def test_enumeration_matches_explicit_mask_loop():
    net = small_net(4, 3, 3, 9)
    x = np.array([0.3, -0.5, 1.0, 2.0])
    W1, b1, W2, b2 = net.layers[0].weights, net.layers[0].biases, net.layers[1].weights, net.layers[1].biases
    h = np.maximum(0, x @ W1 + b1)
    for s, row in enumerate(enumerate_subnet_distributions(net, x)):
        m = np.array([(s >> j) & 1 for j in range(3)], dtype=float)
        z = (h * m) @ W2 + b2
        p = np.exp(z - z.max())
        np.testing.assert_allclose(row, p / p.sum(), rtol=0, atol=1e-15)


def test_enumeration_guards():
    with pytest.raises(CapacityError):
        enumerate_subnet_distributions(small_net(2, 21, 2, 0), np.ones(2))
    with pytest.raises(ConsistencyError):
        enumerate_subnet_distributions(Network.dense([2, 3, 3, 2], RandomSource(0)), np.ones(2))


def test_geometric_mean_examples():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(geometric_mean_distribution([p, p, p]), p, atol=1e-15)
    np.testing.assert_allclose(geometric_mean_distribution([[0.5, 0.5], [0.5, 0.5]]), [0.5, 0.5], atol=0)
    np.testing.assert_allclose(geometric_mean_distribution([[0.9, 0.1], [0.1, 0.9]]), [0.5, 0.5], atol=1e-15)


def test_geometric_mean_rejects_zero_and_unnormalised_rows():
    with pytest.raises(ValueError):
        geometric_mean_distribution([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ValueError):
        geometric_mean_distribution([[0.6, 0.6]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_mean_net_equals_geometric_mean_of_all_subnets(n_hidden, seed):
    rng = np.random.default_rng(seed)
    net = small_net(int(rng.integers(1, 6)), n_hidden, int(rng.integers(2, 6)), seed)
    x = rng.normal(size=net.input_shape[0])
    expected = geometric_mean_distribution(enumerate_subnet_distributions(net, x))
    got = mean_network_output(net, DropoutSpec(1.0, 0.5), x)
    assert np.max(np.abs(got - expected)) <= 1e-9


def test_retain_other_than_half_uses_weighted_exponents():
    net = small_net(3, 5, 4, 10)
    x = np.array([1.0, -0.3, 0.8])
    r = 0.7
    k = np.array([bin(s).count("1") for s in range(32)])
    w = r**k * (1 - r) ** (5 - k)
    expected = geometric_mean_distribution(enumerate_subnet_distributions(net, x), w)
    assert np.max(np.abs(mean_network_output(net, DropoutSpec(1.0, r), x) - expected)) <= 1e-9


def test_regression_two_subnet_hand_case():
    # hidden activity 4, outgoing weight 0.5: subnets predict 2 and 0, the mean net 1
    net = Network([DenseLayer([[4.0]], [0.0], "relu"), DenseLayer([[0.5]], [0.0], "linear")], (1,))
    preds = enumerate_subnet_outputs(net, [1.0])[:, 0]
    assert sorted(preds.tolist()) == [0.0, 2.0]
    mean_pred = mean_network_output(net, DropoutSpec(1.0, 0.5), [1.0])[0]
    assert mean_pred**2 == 1.0 and np.mean(preds**2) == 2.0
