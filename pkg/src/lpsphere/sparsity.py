"""Hoyer's sparsity, mask sparsity and neuron correlation reports."""

from dataclasses import dataclass

import numpy as np

from lpsphere.errors import DomainError


def hoyer_sparsity(v):
    """(sqrt(d) - ||v||_1/||v||_2) / (sqrt(d) - 1) along the last axis.

    All-zero vectors give NaN (undefined). Works on a single vector or on a
    stack of row vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[-1]
    if d < 2:
        raise DomainError("Hoyer's sparsity needs dimension >= 2")
    a = np.abs(v)
    m = a.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = a / m
        l1 = a.sum(axis=-1)
        l2 = np.sqrt((a * a).sum(axis=-1))
        ratio = l1 / l2
    sd = np.sqrt(d)
    h = (sd - ratio) / (sd - 1.0)
    # ratio lies in [1, sqrt(d)] mathematically; clip round-off only
    h = np.where(np.isnan(h), np.nan, np.clip(h, 0.0, 1.0))
    return float(h) if h.ndim == 0 else h


def standard_sparsity(masks):
    """Fraction of inactive weight slots over a collection of masks."""
    total = 0
    inactive = 0
    for m in masks:
        m = np.asarray(m, dtype=bool)
        total += m.size
        inactive += m.size - int(m.sum())
    return inactive / total if total else 0.0


def neuron_hoyer(layer, active_only=False):
    """Per-neuron H_s of a weight layer.

    By default over the full slot vector, so masked-out slots count as zeros.
    With ``active_only`` each neuron is measured over its active slots (NaN
    when fewer than two are active).
    """
    if not active_only:
        return hoyer_sparsity(layer.weight)
    out = np.full(layer.n_neurons, np.nan)
    for j in range(layer.n_neurons):
        w = layer.weight[j, layer.mask[j]]
        if w.size >= 2 and np.any(w):
            out[j] = hoyer_sparsity(w)
    return out


def layer_mean_hoyer(layer, active_only=False):
    """Mean per-neuron H_s, ignoring undefined neurons (NaN if none is defined)."""
    h = np.atleast_1d(neuron_hoyer(layer, active_only))
    h = h[np.isfinite(h)]
    return float(h.mean()) if h.size else float("nan")


def neuron_cross_correlation(weight):
    """Pearson correlation matrix between neuron weight rows.

    Rows with zero variance get NaN rows/columns; the diagonal of valid rows
    is exactly 1.
    """
    w = np.asarray(weight, dtype=np.float64)
    c = w - w.mean(axis=1, keepdims=True)
    norm = np.sqrt((c * c).sum(axis=1))
    ok = norm > 0
    c = c / np.where(ok, norm, 1.0)[:, None]
    corr = np.clip(c @ c.T, -1.0, 1.0)
    corr[~ok, :] = np.nan
    corr[:, ~ok] = np.nan
    idx = np.flatnonzero(ok)
    corr[idx, idx] = 1.0
    return corr


@dataclass
class LayerSparsityReport:
    layer: int
    kind: str
    dim: int
    p: float
    mean_hoyer: float
    mean_hoyer_active: float
    sparsity: float
    neuron_hoyer: np.ndarray
    correlation: np.ndarray | None = None

    def summary(self):
        return {
            "layer": self.layer,
            "kind": self.kind,
            "dim": self.dim,
            "p": self.p,
            "mean_hoyer": self.mean_hoyer,
            "mean_hoyer_active": self.mean_hoyer_active,
            "sparsity": self.sparsity,
        }


def layer_report(index, layer, with_correlation=False):
    h = neuron_hoyer(layer)
    return LayerSparsityReport(
        layer=index,
        kind=layer.kind,
        dim=layer.fan_in,
        p=layer.p,
        mean_hoyer=layer_mean_hoyer(layer),
        mean_hoyer_active=layer_mean_hoyer(layer, active_only=True),
        sparsity=standard_sparsity([layer.mask]),
        neuron_hoyer=h,
        correlation=neuron_cross_correlation(layer.weight) if with_correlation else None,
    )


def network_reports(network, with_correlation=False):
    return [
        layer_report(i, layer, with_correlation)
        for i, layer in enumerate(network.layers)
        if layer.trainable
    ]


def overall_sparsity(network):
    return standard_sparsity([l.mask for l in network.weight_layers])
