"""Central finite-difference check of `Network` backpropagation."""

import numpy as np

from lpsphere.config import network_descriptors
from lpsphere.nn import BatchNorm, MaxPool2D, Network, ReLU, softmax_cross_entropy

FD_STEP = 1e-6
# denominator floor: derivatives that vanish (e.g. a bias feeding batch norm)
# are compared in absolute terms, with tolerance REL_FLOOR * 1e-5
REL_FLOOR = 1e-4
MAX_SHRINK = 3
PRESET_INPUTS = {
    "toy-mlp": ((2,), 2),
    "mnist-small": ((1, 28, 28), 10),
    "mnist-table2": ((1, 28, 28), 10),
    "fashion-table2": ((1, 28, 28), 10),
}


def _loss(net, x, y):
    return softmax_cross_entropy(net.forward(x, train=True), y)[0]


def _pattern(net):
    """ReLU on/off states and max-pool winners of the last forward pass."""
    out = []
    for layer in net.layers:
        if isinstance(layer, ReLU):
            out.append(layer._pos.copy())
        elif isinstance(layer, MaxPool2D):
            out.append(layer._arg.copy())
    return out


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def _fd_direction(net, f, arr, u, h):
    """Central difference of f along `u` of `arr`, restoring `arr` afterwards.

    The step is shrunk (by 10, up to MAX_SHRINK times) while either probe
    changes the ReLU/max-pool pattern, since the difference quotient is only
    meaningful on a smooth piece. Returns (estimate, step used, smooth?).
    """
    old = arr.copy()
    f()
    base = _pattern(net)
    for _ in range(MAX_SHRINK + 1):
        arr[...] = old + h * u
        up = f()
        ok = _same(base, _pattern(net))
        arr[...] = old - h * u
        down = f()
        ok &= _same(base, _pattern(net))
        arr[...] = old
        if ok:
            break
        h /= 10.0
    return (up - down) / (2.0 * h), h, ok


def _direction(g, rng):
    """Random direction aligned with the signs of `g`.

    g . u is then a sum of non-negative terms, so it cannot cancel down to
    the round-off floor, while an error of either sign or size in any
    component still shows up. Zero components get a positive sign.
    """
    sign = np.where(g < 0, -1.0, 1.0)
    return sign * rng.uniform(0.5, 1.5, size=g.shape)


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / den


def check_network(net, x, y, rng, n_dirs=3, h=FD_STEP):
    """Compare backprop against central differences along random directions.

    Every weight, bias and batch-norm parameter array, and the input, is
    perturbed along `n_dirs` random sign-aligned directions; the directional derivative
    from backprop (g . u) is compared to the difference quotient. Directions
    rather than single coordinates keep the compared quantity far above the
    round-off floor of the loss; steps crossing a ReLU or max-pool switch are
    shrunk. Returns rows (layer index, layer kind,
    parameter name, max relative error).
    """
    _, _, grads = net.loss_and_grads(x, y, train=True)
    targets = []
    for i, layer in enumerate(net.layers):
        if layer.trainable:
            targets.append((i, layer.kind, "weight", layer.weight, grads.weight[i].copy()))
            if layer.bias is not None:
                targets.append((i, layer.kind, "bias", layer.bias, grads.bias[i].copy()))
        elif isinstance(layer, BatchNorm):
            for name, g in grads.extra[i].items():
                targets.append((i, layer.kind, name, getattr(layer, name), g.copy()))
    dlogits = softmax_cross_entropy(net.forward(x, train=True), y)[1]
    targets.append((-1, "input", "x", x, net.backward(dlogits)))
    f = lambda: _loss(net, x, y)  # noqa: E731
    rows = []
    for i, kind, name, arr, g in targets:
        errs = []
        for _ in range(n_dirs):
            u = _direction(g, rng)
            num, _, _ = _fd_direction(net, f, arr, u, h)
            errs.append(relative_error(np.sum(g * u), num))
        rows.append((i, kind, name, float(np.max(errs))))
    return rows


def check_preset(name, seed=0, batch=4, n_dirs=3, p=1.5):
    """Gradient check of a named preset on a random batch."""
    shape, n_classes = PRESET_INPUTS[name]
    rng = np.random.default_rng(seed)
    net = Network(shape, network_descriptors({"preset": name, "p": p}, n_classes))
    net.init_weights(rng)
    for layer in net.weight_layers:
        if layer.bias is not None:
            layer.bias[:] = 0.1 * rng.normal(size=layer.bias.shape)
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.gamma[:] = 1.0 + 0.1 * rng.normal(size=layer.gamma.shape)
            layer.beta[:] = 0.1 * rng.normal(size=layer.beta.shape)
    x = rng.normal(size=(batch,) + shape)
    y = rng.integers(0, n_classes, size=batch)
    return check_network(net, x, y, rng, n_dirs)
