"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy import integrate
from scipy.special import betaln

from lpsphere.nn import BatchNorm, Network


def random_architecture(rng):
    """Random small network touching every layer kind (input shape, descriptors)."""
    if rng.random() < 0.3:
        d = int(rng.integers(3, 7))
        layers = [{"type": "dense", "out": int(rng.integers(3, 7)), "p": float(rng.uniform(1.2, 3))}]
        layers += [{"type": "batchnorm"}, {"type": "relu"}]
        layers += [{"type": "dense", "out": int(rng.integers(2, 5)), "p": float(rng.uniform(1.2, 3))}]
        return (d,), layers
    c = int(rng.integers(1, 3))
    hw = int(rng.integers(6, 9))
    layers = [{
        "type": "conv2d",
        "out": int(rng.integers(2, 5)),
        "kernel": int(rng.choice([2, 3])),
        "stride": int(rng.choice([1, 2])),
        "padding": int(rng.choice([0, 1])),
        "p": float(rng.uniform(1.2, 3)),
        "bias": bool(rng.random() < 0.5),
    }]
    if rng.random() < 0.5:
        layers.append({"type": "batchnorm"})
    layers.append({"type": "relu"})
    layers.append({"type": "maxpool", "size": 2})
    layers.append({"type": "gap"} if rng.random() < 0.5 else {"type": "flatten"})
    if rng.random() < 0.5:
        layers.append({"type": "batchnorm"})
    layers.append({"type": "dense", "out": int(rng.integers(2, 5)), "p": float(rng.uniform(1.2, 3))})
    return (c, hw, hw), layers


def random_network(seed):
    rng = np.random.default_rng(seed)
    shape, descs = random_architecture(rng)
    net = Network(shape, descs)
    net.init_weights(rng)
    for layer in net.weight_layers:
        if layer.bias is not None:
            layer.bias[:] = 0.1 * rng.normal(size=layer.bias.shape)
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.gamma[:] = 1 + 0.1 * rng.normal(size=layer.gamma.shape)
            layer.beta[:] = 0.1 * rng.normal(size=layer.beta.shape)
    x = rng.normal(size=(5,) + shape)
    y = rng.integers(0, net.n_classes, size=5)
    return net, x, y, rng


def dirichlet_ratio(d, tau):
    """E[||z||_1/||z||_2] from the Dirichlet law of z_k^2 / ||z||_2^2.

    With z_k^2 ~ Gamma(tau/2) i.i.d. the normalized squares are
    Dirichlet(tau/2, ...), so the ratio is sum_k sqrt(D_k) and
    E sqrt(D_1) = B((tau+1)/2, (d-1)tau/2) / B(tau/2, (d-1)tau/2).
    """
    return d * math.exp(betaln((tau + 1) / 2, (d - 1) * tau / 2) - betaln(tau / 2, (d - 1) * tau / 2))


def omega_quad(k, tau):
    """The three angular integrals by adaptive quadrature.

    Each half of [0, pi/2] is integrated with QUADPACK's algebraic endpoint
    weight, so the t^(tau-1) and (pi/2-t)^(k tau-1) singularities are
    handled exactly and the remaining factor is smooth.
    """
    h = math.pi / 2
    out = []
    for a_exp, b_exp in ((tau - 1, k * tau - 1), (tau, k * tau - 1), (tau - 1, k * tau)):
        lo = integrate.quad(
            lambda t: (math.sin(t) / t) ** a_exp * math.cos(t) ** b_exp if t > 0 else 1.0,
            0, h / 2, weight="alg", wvar=(a_exp, 0.0), epsabs=0, epsrel=1e-13, limit=200,
        )[0]
        hi = integrate.quad(
            lambda t: math.sin(t) ** a_exp * (math.cos(t) / (h - t)) ** b_exp if t < h else 1.0,
            h / 2, h, weight="alg", wvar=(0.0, b_exp), epsabs=0, epsrel=1e-13, limit=200,
        )[0]
        out.append(lo + hi)
    return out


def write_idx_images(path, images):
    # plain big-endian IDX writer, kept apart from the reader under test
    n, r, c = images.shape
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, 8, 3]))
        for v in (n, r, c):
            fh.write(v.to_bytes(4, "big"))
        fh.write(bytes(images.astype(np.uint8).ravel().tolist()))


def write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, 8, 1]))
        fh.write(len(labels).to_bytes(4, "big"))
        fh.write(bytes(list(labels)))
