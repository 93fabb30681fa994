import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spde_lab.correlation import CorrelationModel, nu_eta_d
from spde_lab.errors import AdmissibilityError, DomainError, GridMismatchError, StabilityError
from spde_lab.grid import Grid
from spde_lab.hilbert import (
    HilbertStructure,
    bessel_potential,
    build_cons,
    calibrate_lemma11_constant,
    cons_sequence_norm,
    fold_covariance,
    h_bar,
    h_inner,
    lattice_bessel_kernel,
    lemma3_check,
    lemma11_ratio,
    riesz_origin_cell_average,
    sobolev_norm,
    stencil_symbol,
    v_field,
)

G1 = Grid(1, 16, 4.0)
G2 = Grid(2, 8, 4.0)


def _structure(grid, model):
    return HilbertStructure.from_model(grid, model)


def _rand(grid, seed):
    return np.random.default_rng(seed).standard_normal(grid.shape)


# --- grid ---------------------------------------------------------------

def test_grid_requires_power_of_two():
    with pytest.raises(DomainError):
        Grid(1, 12, 1.0)


def test_explicit_stability_certificate():
    g = Grid(1, 32, 1.0, dt=1e-3, n_steps=10)
    g.explicit_stability(K=0.5, theta=0.5)  # theta >= 1/2 is exempt
    with pytest.raises(StabilityError):
        g.explicit_stability(K=0.5, theta=0.0)
    Grid(1, 32, 1.0, dt=1e-4).explicit_stability(K=0.5, theta=0.0)


# --- folding ----------------------------------------------------------------

def test_gaussian_fold_matches_poisson_sum():
    g = Grid(1, 32, 2.0)
    model = CorrelationModel.gaussian(0.4, 1)
    C, tail = fold_covariance(g, model)
    k = 2 * math.pi * np.arange(-60, 61) / g.L
    x = g.offsets[0]
    target = np.exp(-0.5 * (0.4 * k[:, None]) ** 2) * np.cos(k[:, None] * x[None])
    np.testing.assert_allclose(C, target.sum(0) / g.L, rtol=1e-12, atol=1e-14)
    assert tail == pytest.approx(math.erfc(g.L / (2 * math.sqrt(2) * 0.4)), rel=1e-10)


def test_white_noise_fold_is_a_scaled_kronecker():
    C, tail = fold_covariance(G2, CorrelationModel.white_noise(2))
    assert C[0, 0] == pytest.approx(1 / G2.cell_volume) and C.sum() == C[0, 0] and tail == 0


def test_riesz_origin_cell_average_two_dimensions():
    h, alpha = 0.3, 1.2
    val = integrate.dblquad(lambda y, x: (x * x + y * y) ** (-alpha / 2), 0, h / 2, 0, h / 2,
                            epsabs=0, epsrel=1e-10)[0]
    assert riesz_origin_cell_average(alpha, 2, h) == pytest.approx(4 * val / h**2, rel=1e-8)


def test_riesz_fold_stays_within_clip_budget():
    for grid, model in [(Grid(1, 256, 16.0), CorrelationModel.riesz(0.5, 1)),
                        (Grid(2, 128, 1.0), CorrelationModel.riesz(1.2, 2))]:
        H = _structure(grid, model)
        assert H.clipped_mass <= 1e-6
        assert np.all(H.spectral_weights >= 0)
        assert math.isnan(H.tail_fraction)


def test_dimension_mismatch_is_rejected():
    with pytest.raises(GridMismatchError):
        fold_covariance(G1, CorrelationModel.gaussian(0.5, 2))


# --- h_inner ------------------------------------------------------------------

def test_white_noise_inner_is_lattice_l2():
    H = _structure(G2, CorrelationModel.white_noise(2))
    f, g = _rand(G2, 1), _rand(G2, 2)
    assert h_inner(f, g, H) == pytest.approx(np.sum(f * g) * G2.cell_volume, rel=1e-12)


@pytest.mark.parametrize("grid,model", [(G1, CorrelationModel.gaussian(0.3, 1)),
                                        (G2, CorrelationModel.exponential(1.0, 2)),
                                        (G1, CorrelationModel.riesz(0.5, 1))])
def test_inner_matches_double_sum(grid, model):
    H = _structure(grid, model)
    assert H.clipped_mass == 0.0
    f, g = _rand(grid, 3).ravel(), _rand(grid, 4).ravel()
    pts = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), -1)
    diff = (pts[:, None, :] - pts[None, :, :]) % grid.N
    Cmat = H.correlation_on_torus[tuple(np.moveaxis(diff, -1, 0))]
    ref = f @ Cmat @ g * grid.cell_volume**2
    assert h_inner(f.reshape(grid.shape), g.reshape(grid.shape), H) == pytest.approx(ref,
                                                                                     rel=1e-11)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_inner_is_bilinear_symmetric_and_psd(seed, a, b):
    H = _structure(G2, CorrelationModel.gaussian(0.5, 2))
    rng = np.random.default_rng(seed)
    f, g, k = (rng.standard_normal(G2.shape) for _ in range(3))
    assert h_inner(f, f, H) >= 0
    assert h_inner(f, g, H) == pytest.approx(h_inner(g, f, H), rel=1e-12, abs=1e-12)
    lhs = h_inner(a * f + b * g, k, H)
    assert lhs == pytest.approx(a * h_inner(f, k, H) + b * h_inner(g, k, H), rel=1e-10, abs=1e-10)


def test_inner_is_translation_invariant():
    H = _structure(G2, CorrelationModel.exponential(2.0, 2))
    f, g = _rand(G2, 5), _rand(G2, 6)
    for shift in [(1, 0), (3, 5)]:
        tf, tg = np.roll(f, shift, (0, 1)), np.roll(g, shift, (0, 1))
        assert h_inner(tf, tg, H) == pytest.approx(h_inner(f, g, H), rel=1e-12)


def test_inner_rejects_foreign_grid():
    H = _structure(G1, CorrelationModel.gaussian(0.5, 1))
    with pytest.raises(GridMismatchError):
        h_inner(np.zeros(8), np.zeros(8), H)


# --- CONS ---------------------------------------------------------------------

@pytest.mark.parametrize("grid,model", [(G1, CorrelationModel.gaussian(0.3, 1)),
                                        (G2, CorrelationModel.riesz(1.2, 2)),
                                        (G2, CorrelationModel.white_noise(2))])
def test_cons_is_orthonormal(grid, model):
    H = _structure(grid, model)
    cons = build_cons(H)
    E = cons.matrix()
    gram = np.array([[h_inner(a, b, H) for b in E] for a in E])
    np.testing.assert_allclose(gram, np.eye(len(cons)), atol=1e-10)


def test_white_noise_cons_is_the_fourier_basis():
    H = _structure(G2, CorrelationModel.white_noise(2))
    cons = build_cons(H)
    assert len(cons) == G2.size
    for i in range(len(cons)):
        e = cons.function(i)
        spec = np.abs(np.fft.fftn(e)) > 1e-9
        assert 1 <= spec.sum() <= 2
        np.testing.assert_allclose(v_field(e, H), e, atol=1e-12)


def test_parseval_on_retained_span():
    H = _structure(G2, CorrelationModel.gaussian(0.5, 2))
    cons = build_cons(H)
    f = cons.synthesize(np.random.default_rng(7).standard_normal(len(cons)))
    assert np.sum(cons.coefficients(f) ** 2) == pytest.approx(h_inner(f, f, H), rel=1e-10)


def test_dropped_mass_bookkeeping():
    H = _structure(Grid(1, 64, 4.0), CorrelationModel.gaussian(0.5, 1))
    tol = 1e-3
    cons = build_cons(H, drop_tol=tol)
    S = H.spectral_weights
    assert cons.dropped_mass == pytest.approx(S[S <= tol * S.max()].sum() / S.sum(), rel=1e-12)
    assert len(cons) == np.sum(S > tol * S.max())


def test_degenerate_spectrum_is_rejected():
    H = _structure(G1, CorrelationModel.gaussian(0.3, 1))
    zero = HilbertStructure(H.grid, H.model, H.correlation_on_torus,
                            np.zeros(G1.shape), 0.0, 0.0, np.zeros(G1.shape))
    with pytest.raises(DomainError):
        build_cons(zero)


def test_v_field_pairing_identity():
    H = _structure(G1, CorrelationModel.exponential(1.0, 1))
    cons = build_cons(H)
    h = _rand(G1, 8)
    for i in range(len(cons)):
        e = cons.function(i)
        assert h_inner(h, e, H) == pytest.approx(np.sum(h * v_field(e, H)) * G1.cell_volume,
                                                 rel=1e-10, abs=1e-12)


def test_sum_of_squared_v_fields_is_delta_norm():
    H = _structure(G2, CorrelationModel.riesz(0.8, 2))
    cons = build_cons(H)
    V = cons.v_fields()
    delta = np.zeros(G2.shape)
    delta[2, 3] = 1 / G2.cell_volume
    assert np.sum(V[:, np.ravel_multi_index((2, 3), G2.shape)] ** 2) == pytest.approx(
        h_inner(delta, delta, H), rel=1e-8)


# --- Bessel potentials and Sobolev norms --------------------------------------

def test_bessel_potential_identities():
    g = Grid(2, 16, 3.0)
    u = _rand(g, 9)
    np.testing.assert_allclose(bessel_potential(u, 0, g), u, atol=1e-12)
    np.testing.assert_allclose(bessel_potential(bessel_potential(u, 1.3, g), -1.3, g), u,
                               atol=1e-10)
    np.testing.assert_allclose(bessel_potential(np.full(g.shape, 2.5), 0.7, g), 2.5, atol=1e-12)


@pytest.mark.parametrize("n1,n2", [(0.5, 0.5), (1.0, -0.3), (-1.2, 2.0)])
def test_bessel_potential_composition(n1, n2):
    g = Grid(1, 64, 5.0)
    u = _rand(g, 10)
    np.testing.assert_allclose(bessel_potential(bessel_potential(u, n1, g), n2, g),
                               bessel_potential(u, n1 + n2, g), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(0, 2))
def test_sobolev_norm_ordering(seed, n, gap):
    g = Grid(1, 32, 3.0)
    u = np.random.default_rng(seed).standard_normal(g.shape)
    assert sobolev_norm(u, n, 2, g) <= sobolev_norm(u, n + gap, 2, g) * (1 + 1e-12)


def test_sobolev_norm_order_zero_is_lp():
    g = Grid(2, 8, 1.0)
    u = _rand(g, 11)
    for p in (1, 2, 3.5):
        assert sobolev_norm(u, 0, p, g) == pytest.approx(
            (np.sum(np.abs(u) ** p) * g.cell_volume) ** (1 / p), rel=1e-13)


def test_negative_sobolev_norm_by_explicit_dft():
    g = Grid(1, 32, 2.0)
    u = _rand(g, 12)
    j = np.arange(g.N)
    F = np.exp(-2j * np.pi * np.outer(j, j) / g.N)
    xi = 2 * np.pi * np.where(j <= g.N // 2, j, j - g.N) / g.L
    ref = g.dx / g.N * np.sum(np.abs(F @ u) ** 2 / (1 + xi**2))
    assert sobolev_norm(u, -1, 2, g) ** 2 == pytest.approx(ref, rel=1e-12)


# --- stencil ratio -------------------------------------------------------------------

def test_stencil_ratio_single_mode_closed_form():
    g = Grid(1, 64, 2 * math.pi)
    for m in (1, 5, 20):
        psi = np.cos(m * g.coords[0])
        k = float(m)
        lam = 4 / g.dx**2 * math.sin(k * g.dx / 2) ** 2
        for q in (2.0, 3.0):
            assert lemma11_ratio(psi, 0.5, q, g) == pytest.approx((1 + k * k) ** 0.5 / (lam + 1),
                                                                  rel=1e-10)


def test_stencil_ratio_constant_field():
    g = Grid(2, 16, 1.0)
    assert lemma11_ratio(np.ones(g.shape), 0.3, 2.0, g) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DomainError):
        lemma11_ratio(np.zeros(g.shape), 0.3, 2.0, g)
    with pytest.raises(DomainError):
        lemma11_ratio(np.ones(g.shape), 1.0, 2.0, g)


def test_stencil_ratio_calibrated_constant_bounded_by_mode_maximum():
    g = Grid(1, 64, 2 * math.pi)
    C = calibrate_lemma11_constant(g, 0.5, 2.0)
    ratio = (1 + g.wavenumber_sq) ** 0.5 / (1 + stencil_symbol(g))
    assert 0 < C <= ratio.max() * (1 + 1e-12)
    assert ratio.max() < 1.05  # one plus a grid correction


# --- h_bar bound ------------------------------------------------------------------

def test_h_bar_of_zero_is_zero():
    g = Grid(1, 32, 4.0)
    H = _structure(g, CorrelationModel.gaussian(0.5, 1))
    assert np.all(h_bar(np.zeros(g.shape), 0.75, H) == 0)


def test_h_bar_refuses_infinite_nu():
    g = Grid(1, 32, 4.0)
    H = _structure(g, CorrelationModel.riesz(0.5, 1))
    with pytest.raises(AdmissibilityError):
        h_bar(np.ones(g.shape), 0.2, H)


@pytest.mark.parametrize("d,eta", [(1, 0.75), (2, 1.2)])
def test_lattice_kernel_mass_converges_to_one(d, eta):
    errs = []
    for N in (128, 256, 512):
        g = Grid(d, N, 16.0)
        errs.append(abs(lattice_bessel_kernel(g, eta).sum() * g.cell_volume - 1.0))
    assert errs[-1] < 2e-3
    # singular point values beyond the averaged cells limit the order to about min(1, eta)
    assert errs[0] / errs[1] > 1.5 and errs[1] / errs[2] > 1.5


@pytest.mark.parametrize("model", [CorrelationModel.gaussian(0.5, 1),
                                   CorrelationModel.riesz(0.5, 1)])
def test_hbar_bound_and_cons_route_small_grid(model):
    g = Grid(1, 64, 16.0)
    H = _structure(g, model)
    K = lattice_bessel_kernel(g, 0.75)
    cons = build_cons(H)
    rng = np.random.default_rng(13)
    for _ in range(5):
        h = rng.standard_normal(g.shape)
        for p in (2.0, 4.0):
            res = lemma3_check(h, 0.75, H, p, kernel=K)
            assert res.slack >= -1e-8
            assert res.bound == pytest.approx(math.sqrt(nu_eta_d(model, 0.75)))
            seq = cons_sequence_norm(h, 0.75, H, cons, p, kernel=K)
            assert seq == pytest.approx(res.hbar_norm, rel=1e-6)
