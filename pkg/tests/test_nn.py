import numpy as np
import pytest
from scipy.signal import correlate

from lpsphere.errors import ConfigError, DataFormatError
from lpsphere.geometry import lp_norm
from lpsphere.gradcheck import check_network, check_preset
from lpsphere.nn import BatchNorm, Conv2D, Dense, Network, renormalize_layer, softmax_cross_entropy
from oracles import random_network

GRAD_TOL = 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_backprop_matches_finite_differences(seed):
    net, x, y, rng = random_network(seed)
    rows = check_network(net, x, y, rng, n_dirs=3)
    kinds = {r[1] for r in rows}
    assert "input" in kinds
    worst = max(r[3] for r in rows)
    assert worst < GRAD_TOL, rows


def test_random_architectures_cover_every_layer_kind():
    kinds = set()
    for seed in range(20):
        net, *_ = random_network(seed)
        kinds |= {layer.kind for layer in net.layers}
    assert kinds == {"dense", "conv2d", "relu", "maxpool", "gap", "batchnorm", "flatten"}


def test_preset_gradcheck_toy():
    rows = check_preset("toy-mlp", seed=1)
    assert max(r[3] for r in rows) < GRAD_TOL


def test_conv3x3_every_weight_coordinate():
    # coordinate-wise central differences on a 3x3 conv over a 5x5 input
    rng = np.random.default_rng(7)
    net = Network((1, 5, 5), [{"type": "conv2d", "out": 2, "kernel": 3, "p": 2.0}, {"type": "flatten"},
                              {"type": "dense", "out": 3, "p": 2.0}])
    net.init_weights(rng)
    x = rng.normal(size=(2, 1, 5, 5))
    y = np.array([0, 2])
    _, _, grads = net.loss_and_grads(x, y)
    conv = net.layers[0]
    h = 1e-6
    for idx in np.ndindex(conv.weight.shape):
        old = conv.weight[idx]
        conv.weight[idx] = old + h
        up = softmax_cross_entropy(net.forward(x), y)[0]
        conv.weight[idx] = old - h
        down = softmax_cross_entropy(net.forward(x), y)[0]
        conv.weight[idx] = old
        assert grads.weight[0][idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 2)])
def test_conv_forward_matches_scipy(stride, padding):
    rng = np.random.default_rng(0)
    layer = Conv2D((2, 7, 7), 3, kernel=3, stride=stride, padding=padding)
    layer.weight = rng.normal(size=layer.weight.shape)
    layer.bias[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 7, 7))
    out = layer.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    filt = layer.weight.reshape(3, 2, 3, 3)
    for n in range(2):
        for m in range(3):
            ref = sum(correlate(xp[n, c], filt[m, c], mode="valid") for c in range(2))
            ref = ref[::stride, ::stride] + layer.bias[m]
            np.testing.assert_allclose(out[n, m], ref, rtol=1e-12, atol=1e-12)


def test_dense_onehot_rows_select_inputs():
    layer = Dense(4, 2)
    layer.weight = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    x = np.array([[5.0, 6.0, 7.0, 8.0]])
    np.testing.assert_array_equal(layer.forward(x), [[6.0, 8.0]])


def test_masked_layer_outputs_bias():
    net = Network((3,), [{"type": "dense", "out": 2}])
    layer = net.layers[0]
    layer.weight = np.ones((2, 3))
    layer.bias[:] = [0.5, -1.0]
    layer.mask[:] = False
    layer.apply_mask()
    out = net.forward(np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0], (4, 1)))


def test_forward_deterministic():
    net, x, _, _ = random_network(3)
    a = net.forward(x, train=False)
    b = net.forward(x, train=False)
    assert np.array_equal(a, b)


def test_batchnorm_identical_samples():
    bn = BatchNorm((3,))
    x = np.tile([1.0, -2.0, 7.0], (5, 1))
    np.testing.assert_array_equal(bn.forward(x, train=True), np.zeros((5, 3)))
    bn4 = BatchNorm((2, 3, 3))
    x4 = np.broadcast_to(np.array([1.5, -0.5])[None, :, None, None], (4, 2, 3, 3)).copy()
    np.testing.assert_array_equal(bn4.forward(x4, train=True), np.zeros_like(x4))


def test_softmax_uniform_gradient():
    c = 4
    loss, d = softmax_cross_entropy(np.zeros((1, c)), np.array([2]))
    assert loss == pytest.approx(np.log(c))
    np.testing.assert_allclose(d[0], 1 / c - np.eye(c)[2])


def test_softmax_invalid_label():
    with pytest.raises(DataFormatError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_shape_mismatch_is_config_error():
    net = Network((4,), [{"type": "dense", "out": 2}])
    with pytest.raises(ConfigError):
        net.forward(np.zeros((2, 5)))
    with pytest.raises(ConfigError):
        Network((4,), [{"type": "conv2d", "out": 2}])
    with pytest.raises(ConfigError):
        Network((4,), [{"type": "softmax"}])


def test_renormalize_layer():
    layer = Dense(2, 2, p=2.0)
    layer.weight = np.array([[3.0, 4.0], [0.0, 0.0]])
    dead = renormalize_layer(layer, np.random.default_rng(0))
    np.testing.assert_allclose(layer.weight[0], [0.6, 0.8])
    assert list(dead) == [1]
    assert lp_norm(layer.weight[1], 2.0) == pytest.approx(1.0)


def test_renormalize_respects_mask_and_rows():
    layer = Dense(3, 2, p=1.5)
    layer.weight = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 1.0]])
    layer.mask[0, 2] = False
    renormalize_layer(layer, rows=[0])
    assert layer.weight[0, 2] == 0.0
    assert lp_norm(layer.weight[0], 1.5) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(layer.weight[1], [1.0, 1.0, 1.0])


def test_init_weights_on_sphere():
    net, *_ = random_network(11)
    for layer in net.weight_layers:
        assert layer.norm_deviation() < 1e-12
