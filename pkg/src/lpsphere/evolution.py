"""Adaptive drop/grow mask evolution for sparse training.

Each tick (every `interval` optimizer iterations until `t_end`):

1. drop, per neuron, active slots with |w| below zeta_w times the neuron's
   mean active magnitude (a neuron always keeps its largest slot);
2. grow, per neuron, floor(zeta_g * n_dropped) inactive slots with the
   largest gradient magnitude, initialized to zero;
3. renormalize edited neurons over their remaining active slots;
4. anneal zeta_w with a cosine schedule and set zeta_g from the gap between
   the current and the expected overall sparsity.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lpsphere.errors import ConfigError
from lpsphere.nn import renormalize_layer
from lpsphere.sparsity import overall_sparsity

INIT_SPARSITY_CHOICES = (0.1, 0.2)


def update_zeta_w(t, t_end, alpha_drop):
    """Cosine-annealed relative drop threshold; 0 from `t_end` on."""
    if t >= t_end:
        return 0.0
    return 0.5 * alpha_drop * (1.0 + math.cos(math.pi * t / t_end))


def update_zeta_g(s, s_expect, gap=0.05):
    """Grow-to-drop ratio: below target grow less than dropped, above grow more."""
    if s < s_expect:
        return (1.0 - gap) * s / s_expect
    return (1.0 + gap) * s / s_expect


@dataclass
class EvolutionSchedule:
    interval: int = 0  # 0 means one epoch's worth of iterations
    alpha_drop: float = 0.5
    t_end: int = 0  # 0 means 3/4 of all training iterations
    gap: float = 0.05
    s_expect: float = 0.8
    s_init: float = 0.1
    zeta_w: float = field(default=None)
    zeta_g: float = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.s_expect < 1.0:
            raise ConfigError(f"s_expect must lie in (0, 1), got {self.s_expect}")
        if not 0.0 <= self.s_init < 1.0:
            raise ConfigError(f"s_init must lie in [0, 1), got {self.s_init}")
        if self.alpha_drop < 0 or self.gap < 0:
            raise ConfigError("alpha_drop and gap must be non-negative")
        if self.interval < 0 or self.t_end < 0:
            raise ConfigError("interval and t_end must be non-negative")
        if self.zeta_w is None:
            self.zeta_w = self.alpha_drop
        if self.zeta_g is None:
            self.zeta_g = update_zeta_g(self.s_init, self.s_expect, self.gap)

    def resolve(self, iters_per_epoch, total_iters):
        """Fill in defaults that depend on the run length."""
        if self.interval == 0:
            self.interval = max(int(iters_per_epoch), 1)
        if self.t_end == 0:
            self.t_end = max(int(0.75 * total_iters), 1)

    def is_tick(self, t):
        return t > 0 and self.interval > 0 and t % self.interval == 0 and t < self.t_end

    def to_dict(self):
        return asdict(self)


@dataclass
class MaskEdit:
    iteration: int
    layer: int
    neuron: int
    dropped: list
    grown: list
    zeta_w: float
    zeta_g: float
    sparsity: float = float("nan")


def init_topology(network, s_init, rng):
    """Random mask per weight layer with fraction `s_init` inactive.

    Slots are switched off independently with probability `s_init`; a neuron
    left with no active slot is re-drawn. Layers are renormalized.
    """
    if not 0.0 <= s_init < 1.0:
        raise ConfigError(f"initial sparsity must lie in [0, 1), got {s_init}")
    for layer in network.weight_layers:
        layer.mask[:] = rng.random(layer.mask.shape) >= s_init
        for j in np.flatnonzero(~layer.mask.any(axis=1)):
            while not layer.mask[j].any():
                layer.mask[j] = rng.random(layer.fan_in) >= s_init
        renormalize_layer(layer, rng)


def drop_step(layer, zeta_w):
    """Deactivate small active weights per neuron; returns dropped indices per neuron."""
    w = np.abs(layer.weight)
    active = layer.mask
    n_active = active.sum(axis=1)
    mean = np.where(active, w, 0.0).sum(axis=1) / np.maximum(n_active, 1)
    thresh = zeta_w * mean
    drop = active & (w < thresh[:, None])
    # never empty a neuron: keep its largest active slot
    emptied = drop.sum(axis=1) >= n_active
    for j in np.flatnonzero(emptied & (n_active > 0)):
        keep = np.argmax(np.where(active[j], w[j], -1.0))
        drop[j, keep] = False
    layer.mask[drop] = False
    layer.weight[drop] = 0.0
    return [np.flatnonzero(drop[j]) for j in range(layer.n_neurons)]


def grow_step(layer, grad_w, zeta_g, n_drop, exclude=None):
    """Activate the top-K inactive slots by |gradient| per neuron, at weight 0.

    K = floor(zeta_g * n_drop[j]) capped by the available slots; ties go to
    the lowest index. Slots in `exclude` (e.g. just dropped) are not eligible.
    Returns grown indices per neuron.
    """
    grown = []
    g = np.abs(np.asarray(grad_w, dtype=np.float64))
    for j in range(layer.n_neurons):
        k = int(math.floor(zeta_g * n_drop[j] + 1e-12))
        cand = ~layer.mask[j]
        if exclude is not None:
            cand &= ~exclude[j]
        idx = np.flatnonzero(cand)
        k = min(k, idx.size)
        if k <= 0:
            grown.append(np.zeros(0, dtype=int))
            continue
        # stable sort on -|g| keeps lower indices first among ties
        order = np.argsort(-g[j, idx], kind="stable")[:k]
        pick = np.sort(idx[order])
        layer.mask[j, pick] = True
        layer.weight[j, pick] = 0.0
        grown.append(pick)
    return grown


def evolution_tick(network, optimizer, schedule, grads, t, rng=None, log=None):
    """Run one drop/grow/renormalize/threshold-update cycle if `t` is a tick.

    Returns the list of `MaskEdit` entries (empty when not a tick).
    """
    if not schedule.is_tick(t):
        return []
    edits = []
    zeta_w, zeta_g = schedule.zeta_w, schedule.zeta_g
    for i, layer in enumerate(network.layers):
        if not layer.trainable:
            continue
        before = layer.mask.copy()
        dropped = drop_step(layer, zeta_w)
        n_drop = np.array([d.size for d in dropped])
        just_dropped = before & ~layer.mask
        grown = grow_step(layer, grads.weight[i], zeta_g, n_drop, exclude=just_dropped)
        edited = np.flatnonzero((n_drop > 0) | np.array([g.size > 0 for g in grown]))
        if edited.size:
            renormalize_layer(layer, rng, rows=edited)
            if optimizer is not None and i in optimizer.states:
                optimizer.forget_slots(i, edited, just_dropped)
        for j in edited:
            edits.append(
                MaskEdit(t, i, int(j), dropped[j].tolist(), grown[j].tolist(), zeta_w, zeta_g)
            )
    s = overall_sparsity(network)
    schedule.zeta_w = update_zeta_w(t, schedule.t_end, schedule.alpha_drop)
    schedule.zeta_g = update_zeta_g(s, schedule.s_expect, schedule.gap)
    for e in edits:
        e.sparsity = s
    if log is not None:
        log.extend(edits)
    return edits
