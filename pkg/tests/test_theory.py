import math

import numpy as np
import pytest
from scipy import integrate

from lpsphere.errors import DomainError
from lpsphere.geometry import most_activated_weight
from lpsphere.sparsity import hoyer_sparsity
from oracles import dirichlet_ratio, omega_quad
from lpsphere.theory import (
    DEFAULT_ALPHA,
    GammaHoyerModel,
    expected_hoyer,
    expected_l1_l2_ratio,
    gamma_pdf,
    mc_expected_hoyer,
    omega_triplet,
    sample_gamma_inputs,
    theory_curve,
    xi_recursion,
)


def test_gamma_pdf_gaussian_case():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(gamma_pdf(x, 2.0, 1.0), np.exp(-x * x) / math.sqrt(math.pi), rtol=1e-14)


@pytest.mark.parametrize("p,alpha", [(1.5, 2.0), (2.0, 1.0), (3.0, 0.8)])
def test_gamma_pdf_normalized_and_symmetric(p, alpha):
    half = integrate.quad(lambda x: gamma_pdf(x, p, alpha), 0, np.inf, epsabs=1e-12, limit=200)[0]
    assert 2 * half == pytest.approx(1.0, abs=1e-6)
    x = np.array([0.1, 0.7, 2.3])
    np.testing.assert_array_equal(gamma_pdf(x, p, alpha), gamma_pdf(-x, p, alpha))


def test_gamma_pdf_domain():
    with pytest.raises(DomainError):
        gamma_pdf(1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        gamma_pdf(1.0, 2.0, 0.0)


def test_omega_unit_cases():
    assert omega_triplet(1, 1.0).values()[0] == pytest.approx(math.pi / 2, rel=1e-14)
    assert omega_triplet(1, 2.0).values()[0] == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("k", [1, 3, 8])
@pytest.mark.parametrize("tau", [0.3, 1.0, 4.0])
def test_omega_matches_quadrature(k, tau):
    got = omega_triplet(k, tau).values()
    ref = omega_quad(k, tau)
    np.testing.assert_allclose(got, ref, rtol=1e-8)


def test_omega_domain():
    with pytest.raises(DomainError):
        omega_triplet(1, 0.0)
    with pytest.raises(DomainError):
        omega_triplet(0, 1.0)


def test_xi_base_case():
    om = omega_triplet(1, 1.7)
    assert math.exp(xi_recursion(2, 1.7)) == pytest.approx(math.exp(om.log2) + math.exp(om.log3), rel=1e-14)


def test_xi_d3_against_2d_quadrature():
    # angular integral of ||z||_1/||z||_2 weighted by prod z_k^(tau-1) over the positive octant
    tau = 1.0

    def f(t2, t1):
        z = np.array([math.cos(t1), math.sin(t1) * math.cos(t2), math.sin(t1) * math.sin(t2)])
        jac = math.sin(t1)  # surface element on the unit sphere
        return z.sum() * np.prod(z ** (tau - 1)) * jac

    ref = integrate.dblquad(f, 0, math.pi / 2, 0, math.pi / 2, epsabs=0, epsrel=1e-11)[0]
    assert math.exp(xi_recursion(3, tau)) == pytest.approx(ref, rel=1e-9)


def test_xi_finite_in_high_dimension():
    v = xi_recursion(1024, 0.5)
    assert math.isfinite(v)
    h = expected_hoyer(GammaHoyerModel(1024, 1.5, 1.0))
    assert 0 < h < 1


@pytest.mark.parametrize("d", [2, 3, 9, 25, 100])
@pytest.mark.parametrize("tau", [0.3, 1.0, 2.0, 4.0])
def test_ratio_matches_dirichlet_oracle(d, tau):
    assert expected_l1_l2_ratio(d, tau) == pytest.approx(dirichlet_ratio(d, tau), rel=1e-10)


def test_ratio_gaussian_sphere_case():
    # tau = 1 is the isotropic Gaussian: E||u||_1 for u uniform on the sphere
    for d in (2, 3, 5):
        ref = d * math.exp(math.lgamma(d / 2) - math.lgamma((d + 1) / 2)) / math.sqrt(math.pi)
        assert expected_l1_l2_ratio(d, 1.0) == pytest.approx(ref, rel=1e-13)
    assert expected_l1_l2_ratio(3, 1.0) == pytest.approx(1.5, rel=1e-14)


def test_expected_hoyer_d2_direct_quadrature():
    # E[H] over the input density itself, no change of variables
    model = GammaHoyerModel(2, 1.5, 2.0)

    def f(x2, x1):
        w = most_activated_weight(np.array([x1, x2]), model.p)
        return hoyer_sparsity(w) * gamma_pdf(x1, model.p, model.alpha) * gamma_pdf(x2, model.p, model.alpha)

    ref = 4 * integrate.dblquad(f, 1e-12, 8, 1e-12, 8, epsabs=1e-11)[0]
    assert expected_hoyer(model) == pytest.approx(ref, abs=1e-7)


def test_model_validation():
    for args in [(1, 2.0), (2.5, 2.0), (4, 1.0), (4, 2.0, -1.0)]:
        with pytest.raises(DomainError):
            GammaHoyerModel(*args)
    assert GammaHoyerModel(4, 2.5, 2.0).tau == pytest.approx(3.0)
    assert DEFAULT_ALPHA == 1.0


def test_sampler_marginal():
    # empirical CDF of |x| against the density's CDF
    model = GammaHoyerModel(3, 1.5, 2.0)
    x = sample_gamma_inputs(model, 100_000, np.random.default_rng(0), row_scaled=False)
    ax = np.abs(x.ravel())
    for t in (0.2, 0.6, 1.2):
        cdf = 2 * integrate.quad(lambda s: gamma_pdf(s, model.p, model.alpha), 0, t)[0]
        assert np.mean(ax <= t) == pytest.approx(cdf, abs=0.005)
    assert abs(np.mean(x > 0) - 0.5) < 0.005


def test_mc_deterministic_and_validated():
    model = GammaHoyerModel(4, 1.5, 1.0)
    assert mc_expected_hoyer(model, 5000, 3) == mc_expected_hoyer(model, 5000, 3)
    assert mc_expected_hoyer(model, 5000, 3) != mc_expected_hoyer(model, 5000, 4)
    with pytest.raises(DomainError):
        mc_expected_hoyer(model, 99, 0)


def test_mc_agrees_d4_p15():
    model = GammaHoyerModel(4, 1.5, 1 / 0.5)
    mean, se = mc_expected_hoyer(model, 200_000, 0)
    assert abs(mean - expected_hoyer(model)) <= 3 * se


@pytest.mark.slow
def test_mc_agrees_d4_p2_million():
    model = GammaHoyerModel(4, 2.0, 1.0)
    mean, se = mc_expected_hoyer(model, 1_000_000, 1)
    assert abs(mean - expected_hoyer(model)) <= 3 * se


def test_theory_curve_decreasing_in_p():
    rows = theory_curve(9, [1.1, 1.2, 1.5, 2.0, 2.5, 3.0])
    hs = [h for _, h in rows]
    assert all(a > b for a, b in zip(hs, hs[1:]))
