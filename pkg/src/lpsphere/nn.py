"""Minimal feed-forward network with exact backpropagation in float64.

Trainable layers (`Dense`, `Conv2D`) store one weight row per neuron
(conv filters flattened in (c_in, kh, kw) order), a binary connection mask of
the same shape, and an optional bias. Gradients are kept for every slot,
including masked ones, since regrowth ranks inactive slots by gradient.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lpsphere.errors import ConfigError, DataFormatError
from lpsphere.geometry import LpConstraint, lp_norm

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DEAD_NEURON_SCALE = 0.1


class Layer:
    kind = "layer"
    trainable = False

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params(self):
        """Name -> array of parameters updated by plain (momentum) SGD."""
        return {}

    def grads(self):
        return {}

    def describe(self):
        return {"type": self.kind}


class WeightLayer(Layer):
    """Shared state of `Dense` and `Conv2D`: weight rows, mask, bias, constraint."""

    trainable = True

    def __init__(self, n_out, n_in, p, bias=True):
        self.constraint = LpConstraint(p)
        self.weight = np.zeros((n_out, n_in))
        self.mask = np.ones((n_out, n_in), dtype=bool)
        self.bias = np.zeros(n_out) if bias else None
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @property
    def p(self):
        return self.constraint.p

    @property
    def n_neurons(self):
        return self.weight.shape[0]

    @property
    def fan_in(self):
        return self.weight.shape[1]

    def params(self):
        return {} if self.bias is None else {"bias": self.bias}

    def grads(self):
        return {} if self.bias is None else {"bias": self.grad_bias}

    def apply_mask(self):
        self.weight[~self.mask] = 0.0

    def norm_deviation(self):
        """max_j | ||w_j||_p - 1 | over neurons."""
        return float(np.max(np.abs(lp_norm(self.weight, self.p) - 1.0)))


class Dense(WeightLayer):
    kind = "dense"

    def __init__(self, n_in, n_out, p=2.0, bias=True):
        super().__init__(n_out, n_in, p, bias)
        self.in_shape = (n_in,)
        self.out_shape = (n_out,)

    def forward(self, x, train=True):
        self._x = x
        out = x @ self.weight.T
        if self.bias is not None:
            out = out + self.bias
        return out

    def backward(self, dout):
        self.grad_weight = dout.T @ self._x
        if self.bias is not None:
            self.grad_bias = dout.sum(axis=0)
        return dout @ self.weight

    def describe(self):
        return {"type": "dense", "out": self.n_neurons, "p": self.p, "bias": self.bias is not None}


class Conv2D(WeightLayer):
    kind = "conv2d"

    def __init__(self, in_shape, n_out, kernel=3, stride=1, padding=0, p=2.0, bias=True):
        c, h, w = in_shape
        super().__init__(n_out, c * kernel * kernel, p, bias)
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        ho = (h + 2 * padding - kernel) // stride + 1
        wo = (w + 2 * padding - kernel) // stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv kernel {kernel} does not fit input {in_shape}")
        self.in_shape = (c, h, w)
        self.out_shape = (n_out, ho, wo)

    def _im2col(self, x):
        k, s, pad = self.kernel, self.stride, self.padding
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        _, ho, wo = self.out_shape
        win = win[:, :, :ho, :wo]
        n = x.shape[0]
        # (N, C, Ho, Wo, k, k) -> (N*Ho*Wo, C*k*k)
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)

    def forward(self, x, train=True):
        n = x.shape[0]
        m, ho, wo = self.out_shape
        cols = self._im2col(x)
        self._cols = cols
        self._n = n
        out = cols @ self.weight.T
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(n, ho, wo, m).transpose(0, 3, 1, 2)

    def backward(self, dout):
        n = self._n
        m, ho, wo = self.out_shape
        c, h, w = self.in_shape
        k, s, pad = self.kernel, self.stride, self.padding
        d = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, m)
        self.grad_weight = d.T @ self._cols
        if self.bias is not None:
            self.grad_bias = d.sum(axis=0)
        dcols = (d @ self.weight).reshape(n, ho, wo, c, k, k)
        dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if pad:
            dx = dx[:, :, pad:-pad, pad:-pad]
        return dx

    def describe(self):
        return {
            "type": "conv2d",
            "out": self.n_neurons,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "p": self.p,
            "bias": self.bias is not None,
        }


class ReLU(Layer):
    kind = "relu"

    def __init__(self, in_shape):
        self.in_shape = self.out_shape = tuple(in_shape)

    def forward(self, x, train=True):
        self._pos = x > 0
        return np.where(self._pos, x, 0.0)

    def backward(self, dout):
        return np.where(self._pos, dout, 0.0)


class MaxPool2D(Layer):
    kind = "maxpool"

    def __init__(self, in_shape, size=2, stride=None):
        c, h, w = in_shape
        self.size = size
        self.stride = stride or size
        ho = (h - size) // self.stride + 1
        wo = (w - size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"pool size {size} does not fit input {in_shape}")
        self.in_shape = (c, h, w)
        self.out_shape = (c, ho, wo)

    def forward(self, x, train=True):
        k, s = self.size, self.stride
        _, ho, wo = self.out_shape
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        flat = win.reshape(win.shape[:4] + (k * k,))
        self._arg = flat.argmax(axis=-1)
        self._n = x.shape[0]
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        k, s = self.size, self.stride
        c, h, w = self.in_shape
        _, ho, wo = self.out_shape
        dx = np.zeros((self._n, c, h, w))
        for i in range(k):
            for j in range(k):
                hit = self._arg == i * k + j
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.where(hit, dout, 0.0)
        return dx

    def describe(self):
        return {"type": "maxpool", "size": self.size, "stride": self.stride}


class GlobalAvgPool(Layer):
    kind = "gap"

    def __init__(self, in_shape):
        c, h, w = in_shape
        self.in_shape = (c, h, w)
        self.out_shape = (c,)

    def forward(self, x, train=True):
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        c, h, w = self.in_shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), (dout.shape[0], c, h, w)).copy()


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class BatchNorm(Layer):
    """Per-feature (2-D input) or per-channel (4-D input) batch normalization."""

    kind = "batchnorm"

    def __init__(self, in_shape):
        self.in_shape = self.out_shape = tuple(in_shape)
        c = in_shape[0]
        self.gamma = np.ones(c)
        self.beta = np.zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.grad_gamma = np.zeros(c)
        self.grad_beta = np.zeros(c)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train=True):
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            cnt = x.size // x.shape[1]
            unbiased = var * cnt / max(cnt - 1, 1)
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mean
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        self._xhat, self._inv, self._axes_used = xhat, inv, axes
        return self._bcast(self.gamma, x) * xhat + self._bcast(self.beta, x)

    def backward(self, dout):
        xhat, inv, axes = self._xhat, self._inv, self._axes_used
        self.grad_gamma = (dout * xhat).sum(axis=axes)
        self.grad_beta = dout.sum(axis=axes)
        cnt = dout.size // dout.shape[1]
        dxhat = dout * self._bcast(self.gamma, dout)
        return (
            self._bcast(inv / cnt, dout)
            * (cnt * dxhat - dxhat.sum(axis=axes, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        )

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.grad_gamma, "beta": self.grad_beta}


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise DataFormatError(f"labels must be integers in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


@dataclass
class BatchGradients:
    """Per-layer gradients of the mean minibatch loss.

    ``weight[i]`` / ``bias[i]`` are set for weight layers, ``extra[i]`` holds
    batch-norm gamma/beta gradients; entries are None for other layers.
    """

    weight: list = field(default_factory=list)
    bias: list = field(default_factory=list)
    extra: list = field(default_factory=list)


_LAYER_TYPES = {"dense", "conv2d", "relu", "maxpool", "gap", "batchnorm", "flatten"}


def build_layers(input_shape, descriptors, default_p=2.0):
    """Instantiate layers from a list of descriptor dicts, inferring shapes."""
    shape = tuple(int(s) for s in input_shape)
    layers = []
    for i, desc in enumerate(descriptors):
        kind = desc.get("type")
        if kind not in _LAYER_TYPES:
            raise ConfigError(f"layer {i}: unknown type {kind!r}")
        p = float(desc.get("p", default_p))
        try:
            if kind == "dense":
                if len(shape) != 1:
                    raise ConfigError(f"layer {i}: dense needs flat input, got {shape}")
                layer = Dense(shape[0], int(desc["out"]), p=p, bias=desc.get("bias", True))
            elif kind == "conv2d":
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: conv2d needs (C,H,W) input, got {shape}")
                layer = Conv2D(
                    shape,
                    int(desc["out"]),
                    kernel=int(desc.get("kernel", 3)),
                    stride=int(desc.get("stride", 1)),
                    padding=int(desc.get("padding", 0)),
                    p=p,
                    bias=desc.get("bias", True),
                )
            elif kind == "relu":
                layer = ReLU(shape)
            elif kind == "maxpool":
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: maxpool needs (C,H,W) input, got {shape}")
                layer = MaxPool2D(shape, int(desc.get("size", 2)), desc.get("stride"))
            elif kind == "gap":
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: gap needs (C,H,W) input, got {shape}")
                layer = GlobalAvgPool(shape)
            elif kind == "batchnorm":
                layer = BatchNorm(shape)
            else:
                layer = Flatten(shape)
        except KeyError as exc:
            raise ConfigError(f"layer {i} ({kind}): missing field {exc}") from None
        layers.append(layer)
        shape = layer.out_shape
    return layers


class Network:
    """Sequential network ending in logits; trained with softmax cross-entropy."""

    def __init__(self, input_shape, descriptors, default_p=2.0):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.descriptors = [dict(d) for d in descriptors]
        self.layers = build_layers(self.input_shape, self.descriptors, default_p)
        out = self.layers[-1].out_shape if self.layers else self.input_shape
        if len(out) != 1:
            raise ConfigError(f"network must end in a flat logit vector, got {out}")
        self.n_classes = out[0]

    @property
    def weight_layers(self):
        return [l for l in self.layers if l.trainable]

    def init_weights(self, rng):
        """He-normal fan-in init, masked, then rows renormalized onto the sphere."""
        for layer in self.weight_layers:
            std = np.sqrt(2.0 / layer.fan_in)
            layer.weight = rng.normal(0.0, std, size=layer.weight.shape)
            if layer.bias is not None:
                layer.bias[:] = 0.0
            renormalize_layer(layer, rng)

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ConfigError(f"batch shape {x.shape[1:]} does not match input {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def loss_and_grads(self, x, labels, train=True):
        """Forward + backward on one batch. Returns (loss, logits, BatchGradients)."""
        logits = self.forward(x, train)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        self.backward(dlogits)
        grads = BatchGradients()
        for layer in self.layers:
            if layer.trainable:
                grads.weight.append(layer.grad_weight)
                grads.bias.append(layer.grad_bias)
                grads.extra.append(None)
            else:
                grads.weight.append(None)
                grads.bias.append(None)
                grads.extra.append(layer.grads() or None)
        return loss, logits, grads

    def predict(self, x, batch_size=1024):
        out = []
        for i in range(0, len(x), batch_size):
            out.append(self.forward(x[i : i + batch_size], train=False).argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)


def renormalize_layer(layer, rng=None, rows=None):
    """Put each neuron's active sub-vector back on the unit p-sphere.

    Only `rows` are touched when given. Neurons whose active weights are all
    zero are re-seeded uniformly in [-0.1, 0.1] on their active slots first.
    Returns the re-seeded indices.
    """
    layer.apply_mask()
    rows = np.arange(layer.n_neurons) if rows is None else np.asarray(rows, dtype=int)
    norms = lp_norm(layer.weight[rows], layer.p)
    dead = rows[norms == 0]
    if dead.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        for j in dead:
            active = layer.mask[j]
            if not active.any():
                # a neuron always keeps at least one slot
                active[rng.integers(layer.fan_in)] = True
            vals = rng.uniform(-DEAD_NEURON_SCALE, DEAD_NEURON_SCALE, size=int(active.sum()))
            while not np.any(vals):
                vals = rng.uniform(-DEAD_NEURON_SCALE, DEAD_NEURON_SCALE, size=vals.size)
            layer.weight[j, active] = vals
        log.info("re-seeded %d dead neuron(s) in %s layer", dead.size, layer.kind)
        norms = lp_norm(layer.weight[rows], layer.p)
    layer.weight[rows] /= norms[:, None]
    return dead
