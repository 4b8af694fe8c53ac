import numpy as np
import pytest

import reference
from dropnet.convnet import (ConvLayer, LocalLayer, LrnLayer, LrnSpec, PoolLayer, PoolSpec, conv2d_forward,
                             convnet_backward, init_positive, local_forward, lrn_forward, out_size, pool_backward,
                             pool_forward, random_connectivity)
from dropnet.layers import DenseLayer, Network, network_forward, softmax_xent
from dropnet.numeric import RandomSource, ShapeError
from dropnet.oracles import gradient_check


def test_identity_filter_adds_bias():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 6))
    layer = ConvLayer(np.ones((1, 1, 1, 1)), [0.25], activation="linear")
    assert np.array_equal(conv2d_forward(x, layer), x + 0.25)


def test_ones_filter_sums_window():
    layer = ConvLayer(np.ones((1, 1, 3, 3)), [0.5], activation="linear")
    out = conv2d_forward(np.ones((1, 1, 5, 5)), layer)
    assert out.shape == (1, 1, 3, 3) and np.all(out == 9.5)


def test_large_stride_output_grid():
    assert out_size(224, 11, 4) == 54
    layer = ConvLayer(np.zeros((2, 3, 11, 11)), np.zeros(2), stride=4)
    assert layer.output_shape((3, 224, 224)) == (2, 54, 54)


def test_filter_larger_than_input():
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((1, 1, 3, 3)), ConvLayer(np.ones((1, 1, 4, 4)), [0.0]))


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for stride in (1, 2, 3):
        x = rng.normal(size=(2, 3, 9, 8))
        f, b = rng.normal(size=(4, 3, 3, 2)), rng.normal(size=4)
        got = conv2d_forward(x, ConvLayer(f, b, stride, "linear"))
        assert np.max(np.abs(got - reference.conv(x, f, b, stride))) <= 1e-12


def test_conv_translation_covariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 10, 10))
    layer = ConvLayer(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3), activation="linear")
    shifted = np.roll(x, 1, axis=3)
    a, b = conv2d_forward(x, layer), conv2d_forward(shifted, layer)
    np.testing.assert_allclose(b[..., 1:], a[..., :-1], rtol=0, atol=1e-12)


def test_connectivity_table_restricts_channels():
    rng = RandomSource(3)
    table = random_connectivity(rng, 4, 6, 2, 3)
    assert table.shape == (4, 6) and np.all(table.sum(axis=1) == 3)
    assert np.array_equal(table[0], table[1])
    layer = ConvLayer.init(rng, 6, 4, 3, activation="linear", sd=1.0, connectivity=table)
    x = np.random.default_rng(3).normal(size=(1, 6, 5, 5))
    masked = ConvLayer(layer.filters * table[:, :, None, None], layer.biases, activation="linear")
    assert np.array_equal(conv2d_forward(x, layer), conv2d_forward(x, masked))


def test_local_with_shared_filters_equals_conv():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 7, 7))
    conv = ConvLayer(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3), 2, "linear")
    loc = LocalLayer.from_conv(conv, (2, 7, 7))
    assert np.array_equal(local_forward(x, loc), conv2d_forward(x, conv))


def test_local_layer_cifar_shape_and_loop_oracle():
    rng = RandomSource(5)
    layer = LocalLayer.init(rng, (3, 8, 8), 16, 3, sd=1.0, activation="linear")
    assert layer.filters.shape == (16, 6, 6, 3, 3, 3)
    x = np.random.default_rng(5).normal(size=(2, 3, 8, 8))
    ref = reference.local(x, layer.filters, layer.biases, 1)
    assert np.max(np.abs(local_forward(x, layer) - ref)) <= 1e-12


def test_pool_constant_average():
    out, arg = pool_forward(np.full((1, 2, 6, 6), 3.25), PoolSpec("average", 3, 2))
    assert arg is None and np.all(out == 3.25)


def test_pool_hand_windows():
    x = np.arange(1.0, 26.0).reshape(1, 1, 5, 5)
    out, _ = pool_forward(x, PoolSpec("max", 3, 2))
    assert out[0, 0].tolist() == [[13.0, 15.0], [23.0, 25.0]]
    assert PoolSpec("max", 3, 2).overlapping and not PoolSpec("max", 2, 2).overlapping


def test_pool_window_too_large():
    with pytest.raises(ShapeError):
        pool_forward(np.ones((1, 1, 2, 2)), PoolSpec("max", 3, 1))


def test_pool_matches_loop_oracle_and_max_dominates_mean():
    rng = np.random.default_rng(6)
    for window, stride in ((2, 2), (3, 2), (3, 1)):
        x = np.abs(rng.normal(size=(2, 3, 9, 9)))
        mx, _ = pool_forward(x, PoolSpec("max", window, stride))
        av, _ = pool_forward(x, PoolSpec("average", window, stride))
        assert np.max(np.abs(mx - reference.pool(x, "max", window, stride))) <= 1e-12
        assert np.max(np.abs(av - reference.pool(x, "average", window, stride))) <= 1e-12
        assert np.all(mx >= av)


def test_max_pool_ties_go_to_first_index():
    x = np.zeros((1, 1, 2, 2))
    _, arg = pool_forward(x, PoolSpec("max", 2, 2))
    g = pool_backward(x.shape, PoolSpec("max", 2, 2), arg, np.ones((1, 1, 1, 1)))
    assert g[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_average_pool_backward_is_uniform():
    spec = PoolSpec("average", 3, 3)
    g = pool_backward((1, 1, 3, 3), spec, None, np.full((1, 1, 1, 1), 4.5))
    assert np.all(g == 0.5)


def test_lrn_examples():
    a = np.random.default_rng(7).normal(size=(2, 5, 3, 3))
    assert np.array_equal(lrn_forward(a, LrnSpec(5, 0.0, 0.75)), a)
    out = lrn_forward(np.full((1, 1, 1, 1), 2.0), LrnSpec(1, 1.0, 1.0))
    assert out[0, 0, 0, 0] == 0.4
    spec = LrnSpec()
    assert (spec.width_N, spec.alpha, spec.beta) == (9, 0.001, 0.75)


def test_lrn_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for n in (1, 2, 3, 4, 9):
        a = rng.normal(size=(2, 7, 3, 4)) * 3
        got = lrn_forward(a, LrnSpec(n, 0.01, 0.75))
        assert np.max(np.abs(got - reference.lrn(a, n, 0.01, 0.75))) <= 1e-12


def test_lrn_ties_are_exact():
    a = np.full((1, 6, 2, 2), 1.7)
    a[0, 0] = 0.3
    out = lrn_forward(a, LrnSpec(3, 0.5, 0.75))
    # banks 2..4 see identical neighbourhoods
    assert out[0, 2, 0, 0] == out[0, 3, 0, 0]
    b = np.full((1, 5, 1, 1), 2.0)
    out = lrn_forward(b, LrnSpec(9, 0.1, 0.75))
    assert len(set(out.ravel().tolist())) == 1


def _stack(rng):
    layers = [ConvLayer.init(rng, 1, 3, 3, sd=0.5, bias=0.1), LrnLayer(LrnSpec(3, 0.1, 0.75)),
              PoolLayer(PoolSpec("max", 2, 2))]
    shape = (1, 8, 8)
    net = Network(layers, shape)
    return Network(layers + [DenseLayer.init(rng, int(np.prod(net.shapes[-1])), 3, "softmax", sd=0.5)], shape)


def test_zero_upstream_gradient():
    net = _stack(RandomSource(9))
    _, trace = network_forward(net, np.random.default_rng(9).normal(size=(2, 64)))
    grads, gx = convnet_backward(net, trace, np.zeros((2, 3)))
    assert np.all(gx == 0)
    assert all(np.all(v == 0) for g in grads for v in g.values())


def test_conv_pool_lrn_stack_gradcheck():
    rng = RandomSource(10)
    worst = 0.0
    for trial in range(3):
        net = _stack(rng)
        X = np.random.default_rng(trial).normal(size=(2, 64))
        worst = max(worst, gradient_check(net, X, np.array([0, 2]), None))
    assert worst <= 1e-4


def test_local_and_average_pool_gradcheck():
    rng = RandomSource(11)
    loc = LocalLayer.init(rng, (2, 6, 6), 2, 3, sd=0.5, activation="logistic")
    pool = PoolLayer(PoolSpec("average", 2, 2))
    net = Network([loc, pool, DenseLayer.init(rng, 8, 3, "softmax", sd=0.5)], (2, 6, 6))
    X = np.random.default_rng(11).normal(size=(2, 72))
    assert gradient_check(net, X, np.array([1, 0]), None) <= 1e-4


def test_input_gradient_matches_finite_differences():
    net = _stack(RandomSource(12))
    X = np.random.default_rng(12).normal(size=(1, 64))
    y = np.array([1])
    _, trace = network_forward(net, X)
    _, g = softmax_xent(trace.zs[-1], y)
    _, gx = convnet_backward(net, trace, g)
    h = 1e-6
    for idx in [(0, 0), (0, 17), (0, 40), (0, 63)]:
        up, down = X.copy(), X.copy()
        up[idx] += h
        down[idx] -= h
        num = (softmax_xent(net.forward(up)[1].zs[-1], y)[0] - softmax_xent(net.forward(down)[1].zs[-1], y)[0]) / (2 * h)
        a = gx.reshape(1, -1)[idx]
        assert abs(a - num) / max(abs(a), abs(num), 1e-4) <= 1e-4


def test_init_positive_doubles_until_enough_units_fire():
    rng = RandomSource(13)
    layer = ConvLayer.init(rng, 1, 8, 3, bias=-1.0)
    probe = np.random.default_rng(13).normal(size=(4, 1, 6, 6))
    sd = init_positive(layer, probe, rng)
    z, _ = layer.forward(probe)
    assert sd > 0.01 and np.mean((z > 0).any(axis=0)) >= 0.5
