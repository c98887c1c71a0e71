"""Geometry of the unit L_p-sphere.

Everything here works on the last axis, so a 2-D array is treated as a stack
of per-neuron vectors (one row per neuron). The scalar-vector functions
(`lp_norm`, `normalized_gradient`, ...) raise on degenerate input; the
``*_rows`` helpers used by the optimizers instead report which rows were
degenerate so callers can skip them.
"""

from dataclasses import dataclass, field

import numpy as np

from lpsphere.errors import DegenerateInputError, DomainError, NoDirectionError

P_MIN = 1.01
P_MAX = 16.0

# Above this exponent |x|**t is evaluated as exp(t*log|x|).
_LOG_SPACE_EXPONENT = 8.0


def dual_exponent(p):
    """Hölder conjugate q = p/(p-1) of an exponent p > 1."""
    p = float(p)
    if not np.isfinite(p) or p <= 1.0:
        raise DomainError(f"exponent p must be > 1, got {p}")
    return p / (p - 1.0)


@dataclass(frozen=True)
class LpConstraint:
    """Unit L_p-sphere constraint for one layer, with its dual exponent."""

    p: float
    q: float = field(init=False)

    def __post_init__(self):
        p = float(self.p)
        if not np.isfinite(p) or p <= 1.0:
            raise DomainError(f"exponent p must be > 1, got {p}")
        if not P_MIN <= p <= P_MAX:
            raise DomainError(f"exponent p must lie in [{P_MIN}, {P_MAX}], got {p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", dual_exponent(p))


def signed_power(v, t):
    """Elementwise sign(v) * |v|**t, with sign(0)*0**t = 0 for t > 0."""
    v = np.asarray(v, dtype=np.float64)
    t = float(t)
    if not np.isfinite(t):
        raise DomainError(f"exponent must be finite, got {t}")
    mag = np.abs(v)
    zero = mag == 0
    if t <= 0 and zero.any():
        raise DomainError(f"signed_power with exponent {t} <= 0 is undefined at 0")
    if t == 1.0:
        return v.copy()
    if t > _LOG_SPACE_EXPONENT:
        with np.errstate(divide="ignore"):
            logmag = np.log(mag)
        out = np.exp(t * logmag)
    else:
        out = mag**t
    return np.where(zero, 0.0, np.copysign(out, v))


def lp_norm(v, p, axis=-1):
    """L_p norm along `axis`, factoring out the max magnitude for safety."""
    v = np.asarray(v, dtype=np.float64)
    p = float(p)
    if p < 1.0:
        raise DomainError(f"lp_norm needs p >= 1, got {p}")
    mag = np.abs(v)
    m = mag.max(axis=axis, keepdims=True) if mag.size else np.zeros(mag.shape[:-1] + (1,))
    safe = np.where(m > 0, m, 1.0)
    ratio = mag / safe
    if p == 1.0:
        s = ratio.sum(axis=axis, keepdims=True)
    elif p == 2.0:
        s = np.sqrt((ratio * ratio).sum(axis=axis, keepdims=True))
    else:
        s = (ratio**p).sum(axis=axis, keepdims=True) ** (1.0 / p)
    return np.squeeze(m * s, axis=axis)


def normalize_lp(v, p):
    """Scale `v` onto the unit L_p-sphere."""
    v = np.asarray(v, dtype=np.float64)
    n = lp_norm(v, p)
    if np.any(n == 0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / np.expand_dims(n, -1)


def normalize_rows(w, p):
    """Normalize every nonzero row of `w` to unit p-norm.

    Returns ``(normalized, ok)`` where ``ok`` flags the rows that had nonzero
    norm; zero rows are returned unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    n = lp_norm(w, p)
    ok = n > 0
    out = w / np.where(ok, n, 1.0)[..., None]
    return out, ok


def normalized_gradient_rows(g, c):
    """Row-wise normalized gradient for a stack of gradients.

    Returns ``(delta, ok)``; rows whose gradient is zero get a zero delta and
    ``ok = False``.
    """
    g = np.asarray(g, dtype=np.float64)
    lam = lp_norm(g, c.q)
    ok = lam > 0
    scaled = g / np.where(ok, lam, 1.0)[..., None]
    delta = signed_power(scaled, c.q - 1.0)
    return delta, ok


def normalized_gradient(g, c):
    """Dual-normalized descent direction with unit p-norm.

    ``[g / ||g||_q] ** [q-1]`` elementwise with signs kept. The result does
    not depend on the scale of `g`, which is what lets tiny gradients still
    move the weights by a fixed fraction.
    """
    if not isinstance(c, LpConstraint):
        c = LpConstraint(c)
    delta, ok = normalized_gradient_rows(g, c)
    if not np.all(ok):
        raise NoDirectionError("zero gradient has no normalized direction")
    return delta


def most_activated_weight(x, p):
    """Unit-p-norm vector maximizing w.x: sign(x)|x|**(1/(p-1)), normalized."""
    x = np.asarray(x, dtype=np.float64)
    p = float(p)
    if p <= 1.0:
        raise DomainError(f"exponent p must be > 1, got {p}")
    m = np.abs(x).max(axis=-1, keepdims=True)
    if np.any(m == 0):
        raise DegenerateInputError("input vector is zero")
    w = signed_power(x / m, 1.0 / (p - 1.0))
    return normalize_lp(w, p)
