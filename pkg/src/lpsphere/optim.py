"""Update rules that keep each neuron's weights on the unit L_p-sphere.

Every rule acts row-wise on a `WeightLayer` and only on active (unmasked)
slots: the gradient is restricted to the mask before normalization, so
masked slots stay exactly zero and the norm is taken over the active
sub-vector.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from lpsphere.errors import ConfigError
from lpsphere.geometry import LpConstraint, lp_norm, normalized_gradient_rows, signed_power

NORM_P = "p"
NORM_Q = "q"


def lpsgd_step(layer, grad_w, lr, norm=NORM_P):
    """One plain L_pSGD step on `layer.weight` in place.

    w <- [(1-lr) w - lr Delta(w)] / rho, with rho the p-norm of the bracket
    (``norm="q"`` uses the dual norm instead; that only lands on the p-sphere
    when p == 2). Neurons with zero active gradient are left untouched.
    Returns the boolean array of updated neurons.
    """
    c = layer.constraint
    g = np.where(layer.mask, grad_w, 0.0)
    delta, ok = normalized_gradient_rows(g, c)
    bracket = (1.0 - lr) * layer.weight - lr * delta
    rho = lp_norm(bracket, c.p if norm == NORM_P else c.q)
    ok &= rho > 0
    upd = bracket / np.where(ok, rho, 1.0)[:, None]
    layer.weight = np.where(ok[:, None], upd, layer.weight)
    return ok


def bias_step(param, grad, lr, momentum=None, gamma=0.0):
    """Classical (momentum) gradient descent on a bias-like array, in place.

    With ``momentum`` given: mu <- gamma*mu + grad; param <- param - lr*mu.
    """
    if momentum is None:
        param -= lr * grad
        return
    momentum *= gamma
    momentum += grad
    param -= lr * momentum


@dataclass
class NeuronState:
    """Momentum-variant state of one weight layer."""

    v: np.ndarray
    mu_w: np.ndarray
    mu_b: np.ndarray | None = None

    @classmethod
    def from_layer(cls, layer):
        v = signed_power(layer.weight, layer.p - 1.0)
        mu_b = None if layer.bias is None else np.zeros_like(layer.bias)
        return cls(v=v, mu_w=np.zeros_like(layer.weight), mu_b=mu_b)

    def resync(self, layer, rows=None):
        """Recompute v from w (after mask edits) for the given neurons."""
        rows = slice(None) if rows is None else rows
        self.v[rows] = signed_power(layer.weight[rows], layer.p - 1.0)


def lpsgdm_step(layer, state, grad_w, lr, gamma):
    """One L_pSGD-m step: momentum on the gradient, update of the dual variable.

    mu <- gamma*mu + g;  v <- [(1-lr) v - lr mu/||mu||_q] / rho_q;
    w <- v^[q-1]. Neurons with ||mu||_q == 0 keep v and w (mu is still
    decayed). Returns the boolean array of updated neurons.
    """
    c = layer.constraint
    g = np.where(layer.mask, grad_w, 0.0)
    state.mu_w *= gamma
    state.mu_w += g
    state.mu_w[~layer.mask] = 0.0
    lam = lp_norm(state.mu_w, c.q)
    ok = lam > 0
    bracket = (1.0 - lr) * state.v - lr * state.mu_w / np.where(ok, lam, 1.0)[:, None]
    rho = lp_norm(bracket, c.q)
    ok &= rho > 0
    v_new = bracket / np.where(ok, rho, 1.0)[:, None]
    state.v = np.where(ok[:, None], v_new, state.v)
    w_new = signed_power(state.v, c.q - 1.0)
    layer.weight = np.where(ok[:, None], w_new, layer.weight)
    return ok


def stationarity_residual(weight, grad_w, constraint, mask=None):
    """Per-neuron || w (w^[p-1])^T Delta - Delta ||_2; zero for zero gradient."""
    w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    g = np.atleast_2d(np.asarray(grad_w, dtype=np.float64))
    if mask is not None:
        g = np.where(np.atleast_2d(mask), g, 0.0)
    delta, ok = normalized_gradient_rows(g, constraint)
    proj = np.sum(signed_power(w, constraint.p - 1.0) * delta, axis=1)
    flow = w * proj[:, None] - delta
    res = np.linalg.norm(flow, axis=1)
    return np.where(ok, res, 0.0)


def lr_bound(weight, grad_w, constraint, beta, mask=None):
    """Per-neuron upper bound on the step size for a monotone risk decrease.

    2 (||g||_q - g^T w (w^[p-1])^T Delta) / (beta ||w (w^[p-1])^T Delta - Delta||_p^2)

    `beta` is the Lipschitz constant of the gradient in the (p, q) pairing.
    Returns ``inf`` where the denominator vanishes (stationary neurons).
    Diagnostic only.
    """
    if beta <= 0:
        raise ConfigError(f"Lipschitz constant must be positive, got {beta}")
    w = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    g = np.atleast_2d(np.asarray(grad_w, dtype=np.float64))
    if mask is not None:
        g = np.where(np.atleast_2d(mask), g, 0.0)
    delta, ok = normalized_gradient_rows(g, constraint)
    normal = signed_power(w, constraint.p - 1.0)
    proj = np.sum(normal * delta, axis=1)
    flow = w * proj[:, None] - delta
    # ||g||_q - (g.w)(normal.Delta) == -g_t.flow, with g_t = g - (g.w) normal
    # tangent to the sphere; the direct form cancels catastrophically near
    # a stationary point.
    g_t = g - np.sum(g * w, axis=1)[:, None] * normal
    num = -2.0 * np.sum(g_t * flow, axis=1)
    den = beta * lp_norm(flow, constraint.p) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    return np.where(ok, bound, np.inf)


# learning-rate schedules


@dataclass
class LrSchedule:
    """Per-epoch learning rate.

    kinds: ``step_decay`` (initial, factor, every), ``triangular`` (base,
    peak, period in epochs; rises over the first half of each period and
    falls over the second), ``piecewise`` (list of [epoch, value] pairs,
    value held until the next breakpoint). With ``divide_by_batch`` the
    emitted rate is divided by the batch size.
    """

    kind: str = "step_decay"
    initial: float = 0.02
    factor: float = 0.3
    every: int = 1
    base: float = 0.001
    peak: float = 0.02
    period: float = 10.0
    points: list = field(default_factory=list)
    divide_by_batch: bool = False

    def __post_init__(self):
        if self.kind == "step_decay":
            if self.initial <= 0 or not 0 < self.factor <= 1 or self.every < 1:
                raise ConfigError("step_decay needs initial > 0, factor in (0, 1], every >= 1")
        elif self.kind == "triangular":
            if not 0 < self.base <= self.peak or self.period <= 0:
                raise ConfigError("triangular needs 0 < base <= peak and period > 0")
        elif self.kind == "piecewise":
            if not self.points:
                raise ConfigError("piecewise schedule needs at least one [epoch, value] point")
            pts = sorted((float(e), float(v)) for e, v in self.points)
            if any(v <= 0 for _, v in pts):
                raise ConfigError("piecewise rates must be positive")
            self.points = [list(pt) for pt in pts]
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")

    def rate(self, epoch, batch_size=1):
        if self.kind == "step_decay":
            r = self.initial * self.factor ** (epoch // self.every)
        elif self.kind == "triangular":
            phase = (epoch % self.period) / self.period
            frac = 2 * phase if phase < 0.5 else 2 * (1 - phase)
            r = self.base + (self.peak - self.base) * frac
        else:
            r = self.points[0][1]
            for e, v in self.points:
                if epoch >= e:
                    r = v
        if self.divide_by_batch:
            r /= batch_size
        return r


def schedule_rate(sched, epoch, batch_size=1):
    return sched.rate(epoch, batch_size)


class Optimizer:
    """Applies L_pSGD or L_pSGD-m to a whole `Network`.

    Weight rows use the constrained rule; biases and batch-norm scale/shift
    use classical SGD (with the same momentum coefficient under ``lpsgd-m``).
    """

    def __init__(self, network, method="lpsgd-m", gamma=0.9, norm=NORM_P):
        if method not in ("lpsgd", "lpsgd-m"):
            raise ConfigError(f"unknown optimizer {method!r}")
        if not 0.0 <= gamma < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {gamma}")
        if norm not in (NORM_P, NORM_Q):
            raise ConfigError(f"normalization norm must be 'p' or 'q', got {norm!r}")
        self.network = network
        self.method = method
        self.gamma = gamma if method == "lpsgd-m" else 0.0
        self.norm = norm
        self.t = 0
        self.states = {}
        self.extra_momentum = {}
        self.reset_state()

    def reset_state(self):
        self.states = {}
        self.extra_momentum = {}
        for i, layer in enumerate(self.network.layers):
            if layer.trainable:
                self.states[i] = NeuronState.from_layer(layer)
            for name, arr in layer.params().items():
                if name != "bias":
                    self.extra_momentum[(i, name)] = np.zeros_like(arr)

    def step(self, grads, lr):
        for i, layer in enumerate(self.network.layers):
            if layer.trainable:
                st = self.states[i]
                if self.method == "lpsgd":
                    lpsgd_step(layer, grads.weight[i], lr, self.norm)
                else:
                    lpsgdm_step(layer, st, grads.weight[i], lr, self.gamma)
                if layer.bias is not None:
                    if self.method == "lpsgd":
                        bias_step(layer.bias, grads.bias[i], lr)
                    else:
                        bias_step(layer.bias, grads.bias[i], lr, st.mu_b, self.gamma)
            elif grads.extra[i]:
                for name, g in grads.extra[i].items():
                    param = layer.params()[name]
                    if self.method == "lpsgd":
                        bias_step(param, g, lr)
                    else:
                        bias_step(param, g, lr, self.extra_momentum[(i, name)], self.gamma)
        self.t += 1

    def forget_slots(self, layer_index, neurons, dropped):
        """Zero momentum at dropped slots and re-derive v for edited neurons."""
        st = self.states[layer_index]
        st.mu_w[dropped] = 0.0
        if len(neurons):
            st.resync(self.network.layers[layer_index], neurons)


def lipschitz_bound(a, p):
    """A valid (p, q) Lipschitz constant for the gradient of 0.5*||A w - b||^2.

    Uses lambda_max(A^T A) * max(1, d^(1 - 2/p)), which dominates
    u^T A^T A u over the unit p-sphere.
    """
    m = a.T @ a
    lam = float(np.linalg.eigvalsh(m)[-1])
    d = m.shape[0]
    return lam * max(1.0, d ** (1.0 - 2.0 / p))


def quadratic_problem(p, d=10, seed=0, condition=4.0, radius=1.5, spread=0.6):
    """Seeded test problem 0.5*||A w - b||^2 on the unit L_p-sphere.

    The unconstrained minimizer has p-norm `radius` > 1, so the constrained
    optimum satisfies w = -Delta(w). Returns ``(A, b, w0)`` with `w0` a
    perturbed start on the sphere.
    """
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.normal(size=(d, d)))
    q2, _ = np.linalg.qr(rng.normal(size=(d, d)))
    a = q1 @ np.diag(np.geomspace(1.0, math.sqrt(condition), d)) @ q2
    w_ls = rng.normal(size=d)
    w_ls *= radius / lp_norm(w_ls, p)
    w0 = w_ls + spread * rng.normal(size=d) * np.linalg.norm(w_ls) / math.sqrt(d)
    w0 /= lp_norm(w0, p)
    return a, a @ w_ls, w0


def risk_decrease(a, b, w_old, w_new):
    """R(w_new) - R(w_old) for R = 0.5*||A w - b||^2, free of cancellation."""
    r0 = a @ w_old - b
    r1 = a @ w_new - b
    return 0.5 * float((r0 + r1) @ (a @ (w_new - w_old)))


def bounded_descent(a, b, w0, p, factor=0.5, iters=100, beta=None):
    """Full-batch L_pSGD on 0.5*||A w - b||^2 over the unit p-sphere with
    lr = factor * lr_bound at every iteration.

    Returns a dict of per-iteration arrays: ``risk`` (before each step),
    ``decrease`` (exact R(w_new) - R(w_old)), ``residual`` (before each step),
    ``bound``, ``lr`` and ``roundoff`` (a bound on the floating-point error
    of ``decrease``; changes smaller than it have no resolvable sign), plus
    the final ``w`` and ``final_residual``.
    """
    c = LpConstraint(p)
    beta = lipschitz_bound(a, p) if beta is None else beta
    w = np.array(w0, dtype=np.float64)
    hist = {k: [] for k in ("risk", "decrease", "residual", "bound", "lr", "roundoff")}
    a_norm = float(np.linalg.norm(a, 2))
    for _ in range(iters):
        g = a.T @ (a @ w - b)
        res = float(stationarity_residual(w, g, c)[0])
        bound = float(lr_bound(w, g, c, beta)[0])
        hist["risk"].append(0.5 * float(np.sum((a @ w - b) ** 2)))
        hist["residual"].append(res)
        hist["bound"].append(bound)
        r_norm = float(np.linalg.norm(a @ w - b))
        hist["roundoff"].append(16 * np.finfo(float).eps * r_norm * a_norm * float(np.linalg.norm(w)))
        if not np.isfinite(bound) or bound <= 0:
            # stationary to working precision: nothing left to do
            hist["lr"].append(0.0)
            hist["decrease"].append(0.0)
            continue
        lr = factor * bound
        delta, ok = normalized_gradient_rows(g[None, :], c)
        new = (1.0 - lr) * w - lr * delta[0]
        new /= lp_norm(new, p)
        hist["lr"].append(lr)
        hist["decrease"].append(risk_decrease(a, b, w, new))
        w = new
    g = a.T @ (a @ w - b)
    out = {k: np.array(v) for k, v in hist.items()}
    out["w"] = w
    out["final_residual"] = float(stationarity_residual(w, g, c)[0])
    return out
