import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spde_lab.correlation import (
    AdmissibilityReport,
    BesselKernelParams,
    CorrelationModel,
    admissibility,
    bessel_k,
    bessel_kernel,
    bessel_kernel_at_origin,
    dalang_integral,
    gamma_density,
    gamma_value,
    nu_eta_d,
    riesz_admissibility,
    riesz_spectral_constant,
    riesz_spectral_constant_closed_form,
    spectral_density,
    spectral_value,
)
from spde_lab.errors import DomainError


# --- models and serialisation ---------------------------------------------

def test_riesz_exponent_must_lie_below_dimension():
    with pytest.raises(DomainError):
        CorrelationModel.riesz(1.0, 1)
    with pytest.raises(DomainError):
        CorrelationModel.riesz(0.0, 2)


@pytest.mark.parametrize("model", [CorrelationModel.riesz(0.5, 1), CorrelationModel.gaussian(0.3, 2),
                                   CorrelationModel.exponential(2.0, 1),
                                   CorrelationModel.white_noise(2)])
def test_model_round_trips_through_dict(model):
    assert CorrelationModel.from_dict(model.to_dict()) == model


# --- gamma_value / spectral_value ------------------------------------------

def test_gamma_value_examples():
    assert gamma_value(CorrelationModel.riesz(0.5, 1), 2.0)[0] == pytest.approx(2**-0.5, rel=1e-15)
    assert gamma_value(CorrelationModel.white_noise(1), 1.0) == (0.0, True)
    val, atom = gamma_value(CorrelationModel.exponential(1.0, 1), 1.0)
    assert val == pytest.approx(math.exp(-1), rel=1e-15) and not atom


def test_riesz_density_is_singular_at_origin():
    with pytest.raises(DomainError):
        gamma_value(CorrelationModel.riesz(0.5, 1), 0.0)
    with pytest.raises(DomainError):
        spectral_value(CorrelationModel.riesz(0.5, 1), 0.0)


def test_negative_radius_rejected():
    with pytest.raises(DomainError):
        gamma_density(CorrelationModel.gaussian(1.0, 1), -1.0)


@pytest.mark.parametrize("d", [1, 2])
def test_white_noise_spectral_constant(d):
    k = np.array([0.0, 0.5, 7.0])
    np.testing.assert_allclose(spectral_density(CorrelationModel.white_noise(d), k),
                               (2 * math.pi) ** -d, rtol=1e-15)


def test_gaussian_spectral_value_at_unit_frequency():
    # transform of the unit Gaussian density is exp(-k^2/2); mu carries (2 pi)^-1
    assert spectral_value(CorrelationModel.gaussian(1.0, 1), 1.0) == pytest.approx(
        math.exp(-0.5) / (2 * math.pi), rel=1e-14)


def test_riesz_constant_matches_textbook_formula():
    for d, alpha in [(1, 0.25), (1, 0.5), (1, 0.9), (2, 0.5), (2, 1.2), (2, 1.75)]:
        c, err = riesz_spectral_constant(alpha, d)
        assert err < 1e-9
        assert c == pytest.approx(riesz_spectral_constant_closed_form(alpha, d), rel=1e-10)


def _cos_transform(f, k, singular_exponent=None):
    """(1/pi) int_0^inf f(r) cos(k r) dr, split at r = 1; QAWF on the tail."""
    if singular_exponent is None:
        head = integrate.quad(f, 0, 1, weight="cos", wvar=k, epsabs=0, epsrel=1e-12)[0]
    else:
        # f is the pure power r^singular_exponent: hand it to the algebraic weight
        head = integrate.quad(lambda r: math.cos(k * r), 0, 1, weight="alg",
                              wvar=(singular_exponent, 0), epsabs=0, epsrel=1e-12)[0]
    tail = integrate.quad(f, 1, np.inf, weight="cos", wvar=k, epsabs=1e-14, limlst=200)[0]
    return (head + tail) / math.pi


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("model,sing", [(CorrelationModel.riesz(0.5, 1), -0.5),
                                        (CorrelationModel.riesz(0.25, 1), -0.25),
                                        (CorrelationModel.exponential(1.5, 1), None),
                                        (CorrelationModel.gaussian(0.7, 1), None)])
@pytest.mark.parametrize("k", [0.3, 1.0, 2.5])
def test_fourier_consistency_by_oscillatory_quadrature(model, sing, k):
    target = _cos_transform(lambda r: float(gamma_density(model, r)), k, sing)
    assert spectral_value(model, k) == pytest.approx(target, rel=1e-6)


@pytest.mark.parametrize("model", [CorrelationModel.gaussian(0.5, 2),
                                   CorrelationModel.exponential(1.0, 2),
                                   CorrelationModel.gaussian(0.5, 1)])
def test_fourier_consistency_by_discrete_transform(model):
    d = model.d
    N, L = (8192, 200.0) if d == 1 else (1024, 64.0)
    dx = L / N
    x = (np.arange(N) - N // 2) * dx
    r = np.sqrt(sum(c**2 for c in np.meshgrid(*([x] * d), indexing="ij")))
    gam = np.fft.ifftshift(gamma_density(model, r))
    mu = np.real(np.fft.fftn(gam)) * dx**d / (2 * math.pi) ** d
    idx = [1, 3, 8, 16] if d == 2 else [5, 20, 60]
    for j in idx:
        k = 2 * math.pi * j / L
        pos = (j,) + (0,) * (d - 1)
        assert mu[pos] == pytest.approx(spectral_value(model, k), rel=1e-3)


# --- Bessel kernel -------------------------------------------------------

@pytest.mark.parametrize("nu", [0.0, 0.25, 0.5, 1.3, 2.75])
@pytest.mark.parametrize("r", [1e-4, 0.1, 1.0, 7.5, 40.0])
def test_bessel_k_against_mpmath(nu, r):
    with mpmath.workdps(30):
        ref = float(mpmath.besselk(nu, r))
    assert float(bessel_k(nu, r)) == pytest.approx(ref, rel=1e-10)


def test_bessel_kernel_domain():
    with pytest.raises(DomainError):
        bessel_kernel(BesselKernelParams(1.0, 1), 0.0)
    with pytest.raises(DomainError):
        BesselKernelParams(0.0, 1)


def test_bessel_kernel_underflow_flag():
    val, flag = bessel_kernel(BesselKernelParams(1.0, 2), np.array([1.0, 1e4]), with_flag=True)
    assert val[0] > 0 and not flag[0]
    assert val[1] == 0.0 and flag[1]


@pytest.mark.parametrize("eta,d", [(1.0, 1), (0.5, 1), (2.0, 1), (1.2, 2), (0.6, 2), (3.0, 2)])
def test_bessel_kernel_unit_mass(eta, d):
    p = BesselKernelParams(eta, d)
    area = 2.0 if d == 1 else 2 * math.pi
    e = eta - 1  # r^(d-1) R(r) ~ r^(eta-1) at the origin
    if e < 0:
        head = integrate.quad(lambda r: float(bessel_kernel(p, max(r, 1e-30)))
                              * max(r, 1e-30) ** (d - 1 - e), 0, 1,
                              weight="alg", wvar=(e, 0), epsabs=0, epsrel=1e-12)[0]
    else:
        head = integrate.quad(lambda r: float(bessel_kernel(p, max(r, 1e-30))) * r ** (d - 1),
                              0, 1, epsabs=0, epsrel=1e-12)[0]
    tail = integrate.quad(lambda r: float(bessel_kernel(p, r)) * r ** (d - 1), 1, np.inf,
                          epsabs=0, epsrel=1e-12)[0]
    assert area * (head + tail) == pytest.approx(1.0, abs=1e-6)


def test_bessel_kernel_closed_forms_in_one_dimension():
    # (1 + xi^2)^-1 and (1 + xi^2)^-2 invert to e^{-r}/2 and (1 + r) e^{-r}/4
    assert float(bessel_kernel(BesselKernelParams(2.0, 1), 1.5)) == pytest.approx(
        math.exp(-1.5) / 2, rel=1e-12)
    p = BesselKernelParams(4.0, 1)
    assert bessel_kernel_at_origin(p) == pytest.approx(0.25, rel=1e-14)
    assert float(bessel_kernel(p, 2.0)) == pytest.approx(3 * math.exp(-2) / 4, rel=1e-12)
    # int (1 + xi^2)^(-3/2) d xi / (2 pi) = 1/pi
    assert bessel_kernel_at_origin(BesselKernelParams(3.0, 1)) == pytest.approx(1 / math.pi,
                                                                                rel=1e-14)
    assert bessel_kernel_at_origin(BesselKernelParams(1.0, 1)) == math.inf


def _convolve_1d(e1, e2, x):
    p1, p2 = BesselKernelParams(e1, 1), BesselKernelParams(e2, 1)
    f = lambda y: float(bessel_kernel(p1, abs(y))) * float(bessel_kernel(p2, abs(x - y)))
    opts = dict(epsabs=0, epsrel=1e-11, limit=400)
    parts = [integrate.quad(f, -np.inf, 0, **opts)[0], integrate.quad(f, 0, x, **opts)[0],
             integrate.quad(f, x, np.inf, **opts)[0]]
    return sum(parts)


@pytest.mark.parametrize("e1,e2", [(0.5, 0.5), (1.0, 1.0), (0.7, 1.3)])
def test_bessel_kernel_semigroup(e1, e2):
    target = BesselKernelParams(e1 + e2, 1)
    for x in [0.1, 0.5, 1.0, 2.5, 5.0]:
        assert _convolve_1d(e1, e2, x) == pytest.approx(float(bessel_kernel(target, x)), rel=1e-7)


@pytest.mark.parametrize("eta,d", [(0.5, 1), (0.3, 1), (0.6, 2), (1.2, 2)])
def test_bessel_kernel_origin_slope(eta, d):
    r = np.logspace(-4, -2, 9)
    slope = np.polyfit(np.log(r), np.log(bessel_kernel(BesselKernelParams(eta, d), r)), 1)[0]
    # the next term of the small-r expansion is relatively O(r^(d - eta))
    assert slope == pytest.approx(eta - d, abs=3 * 1e-2 ** (d - eta))


# --- nu, Dalang, admissibility ----------------------------------------------

def test_dalang_white_noise_is_one_half():
    assert dalang_integral(CorrelationModel.white_noise(1), 1.0) == pytest.approx(0.5, rel=1e-10)


def test_dalang_gaussian_against_closed_form():
    # (1/pi) int_0^inf e^{-k^2/2}/(1+k^2) dk = (1/2) e^{1/2} erfc(1/sqrt 2)
    ref = 0.5 * math.exp(0.5) * math.erfc(1 / math.sqrt(2))
    assert dalang_integral(CorrelationModel.gaussian(1.0, 1), 1.0) == pytest.approx(ref, rel=1e-9)


def test_dalang_riesz_against_beta_integral():
    # c/pi... written as 2 c int_0^inf k^(alpha-1)/(1+k^2) dk = c pi / sin(pi alpha/2)
    alpha = 0.5
    c = riesz_spectral_constant_closed_form(alpha, 1)
    ref = c * math.pi / math.sin(math.pi * alpha / 2)
    assert dalang_integral(CorrelationModel.riesz(alpha, 1), 1.0) == pytest.approx(ref, rel=1e-8)


def test_dalang_diverges_for_white_noise_in_two_dimensions():
    assert dalang_integral(CorrelationModel.white_noise(2), 1.0) == math.inf


def test_nu_examples():
    assert math.isfinite(nu_eta_d(CorrelationModel.riesz(0.5, 1), 0.75))
    assert nu_eta_d(CorrelationModel.riesz(1.5, 2), 0.5) == math.inf
    for model in [CorrelationModel.white_noise(1), CorrelationModel.gaussian(0.4, 1),
                  CorrelationModel.exponential(1.0, 1), CorrelationModel.riesz(0.5, 1)]:
        assert math.isfinite(nu_eta_d(model, 0.8))


@pytest.mark.parametrize("model,eta", [(CorrelationModel.riesz(0.5, 1), 0.75),
                                       (CorrelationModel.riesz(1.2, 2), 0.9),
                                       (CorrelationModel.gaussian(0.5, 2), 0.4),
                                       (CorrelationModel.exponential(2.0, 2), 1.3),
                                       (CorrelationModel.white_noise(1), 0.6)])
def test_route_agreement(model, eta):
    spec, phys, value = nu_eta_d(model, eta, return_routes=True)
    assert abs(spec - phys) <= 1e-4 * abs(spec)
    assert value == spec


def test_nu_equals_dalang_integral_at_same_order():
    m = CorrelationModel.exponential(1.0, 1)
    assert nu_eta_d(m, 0.7) == pytest.approx(dalang_integral(m, 0.7), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(0.05, 0.8))
def test_nu_nonincreasing_in_eta(eta, step):
    m = CorrelationModel.gaussian(0.5, 2)
    assert nu_eta_d(m, eta + step) <= nu_eta_d(m, eta) * (1 + 1e-10)


def test_admissibility_examples():
    rep = admissibility(CorrelationModel.riesz(1.2, 2), 0.6)
    assert rep.regime == "eta_below_half_d"
    assert not rep.nu_finite and rep.on_boundary
    assert admissibility(CorrelationModel.riesz(1.2, 2), 0.61).nu_finite
    rep = admissibility(CorrelationModel.white_noise(1), 0.75)
    assert rep.regime == "eta_above_half_d" and rep.nu_finite
    assert admissibility(CorrelationModel.white_noise(2), 1.0).regime == "eta_equal_half_d"


def test_white_noise_is_admissible_only_above_half_dimension():
    assert not admissibility(CorrelationModel.white_noise(1), 0.5).nu_finite
    assert not admissibility(CorrelationModel.white_noise(2), 0.9).nu_finite
    assert admissibility(CorrelationModel.white_noise(2), 1.1).nu_finite


@pytest.mark.parametrize("eta,d", [(0.3, 1), (0.6, 2), (0.75, 2), (0.4, 2)])
def test_boundary_sweep_flips_exactly_at_two_eta(eta, d):
    edge = 2 * eta
    for alpha in [edge - 1e-3, edge, edge + 1e-3]:
        if not 0 < alpha < d:
            continue
        rep = riesz_admissibility(alpha, eta, d)
        assert rep.nu_finite == (alpha < edge)
        assert rep.on_boundary == (alpha == edge)


def test_riesz_exponent_at_or_above_dimension_is_not_admissible():
    rep = riesz_admissibility(1.5, 0.9, 1)
    assert not rep.nu_finite and rep.nu_value == math.inf


def test_report_json_has_exactly_the_four_fields():
    doc = admissibility(CorrelationModel.riesz(1.5, 2), 0.5).to_dict()
    assert set(doc) == {"regime", "nu_finite", "nu_value", "dalang_value"}
    assert doc["nu_value"] == "inf"
    assert isinstance(admissibility(CorrelationModel.white_noise(1), 1.0), AdmissibilityReport)
