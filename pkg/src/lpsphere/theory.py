"""Expected Hoyer's sparsity of the most-activated weight under a gamma input model.

Inputs have i.i.d. components with density

    f(x) = |x|^(alpha-1) exp(-|x|^(2/(p-1))) / ((p-1) Gamma(alpha (p-1)/2))

and the weight is the unit-p-norm maximizer of w.x. Under the substitution
z = |x|^(1/(p-1)) the expectation depends on (d, tau) only, tau = alpha(p-1),
and reduces to products of one-dimensional trigonometric integrals that are
Beta functions. Everything is assembled in log space.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

from lpsphere.errors import DomainError, NumericsError
from lpsphere.geometry import most_activated_weight
from lpsphere.sparsity import hoyer_sparsity

LOG2 = math.log(2.0)
DEFAULT_ALPHA = 1.0
MIN_MC_SAMPLES = 100


@dataclass(frozen=True)
class GammaHoyerModel:
    d: int
    p: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DomainError(f"dimension must be an integer >= 2, got {self.d}")
        if not self.p > 1:
            raise DomainError(f"p must be > 1, got {self.p}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")

    @property
    def tau(self):
        return self.alpha * (self.p - 1.0)


def gamma_pdf(x, p, alpha):
    if not p > 1 or not alpha > 0:
        raise DomainError(f"need p > 1 and alpha > 0, got p={p}, alpha={alpha}")
    ax = np.abs(np.asarray(x, dtype=np.float64))
    log_norm = math.log(p - 1.0) + gammaln(alpha * (p - 1.0) / 2.0)
    with np.errstate(divide="ignore"):
        # alpha == 1 has no power factor (avoids 0 * log 0 at x = 0)
        logpow = 0.0 if alpha == 1.0 else (alpha - 1.0) * np.log(ax)
        logf = logpow - ax ** (2.0 / (p - 1.0)) - log_norm
    out = np.exp(logf)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OmegaTriplet:
    """log of the three angular integrals for one hyperspherical angle."""

    log1: float
    log2: float
    log3: float

    def values(self):
        return math.exp(self.log1), math.exp(self.log2), math.exp(self.log3)


def omega_triplet(k, tau):
    """Angular integrals over [0, pi/2] for angle index k:

    1: sin^(tau-1) cos^(k tau-1),  2: sin^tau cos^(k tau-1),
    3: sin^(tau-1) cos^(k tau).
    Each equals B(a/2, b/2)/2 for exponents (a-1, b-1).
    """
    if not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    kt = k * tau
    return OmegaTriplet(
        log1=float(betaln(tau / 2.0, kt / 2.0)) - LOG2,
        log2=float(betaln((tau + 1.0) / 2.0, kt / 2.0)) - LOG2,
        log3=float(betaln(tau / 2.0, (kt + 1.0) / 2.0)) - LOG2,
    )


def xi_recursion(d, tau):
    """log xi_{d-1}: the angular integral of ||z||_1 / ||z||_2 in d dimensions."""
    if d < 2:
        raise DomainError(f"dimension must be >= 2, got {d}")
    om = omega_triplet(1, tau)
    log_xi = np.logaddexp(om.log2, om.log3)
    log_pi = om.log1
    for k in range(2, d):
        om = omega_triplet(k, tau)
        log_xi, log_pi = np.logaddexp(log_xi + om.log3, log_pi + om.log2), log_pi + om.log1
    return float(log_xi)


def expected_l1_l2_ratio(d, tau):
    """E[||z||_1/||z||_2] for z_k = sqrt(Gamma(tau/2)) i.i.d."""
    log_c = (d - 1) * LOG2 + gammaln(d * tau / 2.0) - d * gammaln(tau / 2.0)
    return math.exp(log_c + xi_recursion(d, tau))


def expected_hoyer(model):
    """Closed-form E[H_s] of the most-activated weight. Raises NumericsError
    if the result leaves (0, 1)."""
    d = model.d
    sd = math.sqrt(d)
    ratio = expected_l1_l2_ratio(d, model.tau)
    h = (sd - ratio) / (sd - 1.0)
    if not 0.0 < h < 1.0 or not math.isfinite(h):
        raise NumericsError(
            f"expected Hoyer sparsity {h!r} outside (0, 1) for d={d}, tau={model.tau}"
        )
    return h


def sample_log_gamma(shape, size, rng):
    """log of Gamma(shape, 1) draws, via Gamma(a) = Gamma(a+1) * U^(1/a).

    Stays finite for tiny shapes where direct draws underflow to 0.
    """
    g = rng.gamma(shape + 1.0, 1.0, size=size)
    u = rng.random(size=size)
    return np.log(g) + np.log1p(-u) / shape


def sample_gamma_inputs(model, n, rng, row_scaled=True):
    """Exact draws from the gamma input density: |x| = u^((p-1)/2), u ~ Gamma(tau/2).

    With `row_scaled` each row is divided by its largest magnitude (done in
    log space), which leaves the most-activated weight unchanged.
    """
    log_ax = 0.5 * (model.p - 1.0) * sample_log_gamma(model.tau / 2.0, (n, model.d), rng)
    if row_scaled:
        log_ax = log_ax - log_ax.max(axis=1, keepdims=True)
    sign = np.where(rng.random(size=(n, model.d)) < 0.5, -1.0, 1.0)
    return sign * np.exp(log_ax)


def mc_expected_hoyer(model, n_samples, seed, chunk=50_000):
    """Monte-Carlo estimate of E[H_s] and its standard error.

    Samples inputs, maps each to its most-activated unit-p-norm weight and
    averages Hoyer's sparsity. Deterministic given `seed`.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise DomainError(f"need at least {MIN_MC_SAMPLES} samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        x = sample_gamma_inputs(model, n, rng)
        h = hoyer_sparsity(most_activated_weight(x, model.p))
        total += float(h.sum())
        total_sq += float((h * h).sum())
        done += n
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return mean, math.sqrt(var / n_samples)


def theory_curve(d, ps, alpha=DEFAULT_ALPHA):
    """[(p, E[H_s])] for a list of exponents at fixed alpha."""
    return [(float(p), expected_hoyer(GammaHoyerModel(d, float(p), alpha))) for p in ps]
