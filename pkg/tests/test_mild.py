import math

import numpy as np
import pytest
from scipy import integrate

from spde_lab.coefficients import CoefficientField
from spde_lab.correlation import CorrelationModel
from spde_lab.errors import AdmissibilityError, ConvergenceError, DomainError, GridMismatchError
from spde_lab.green import numeric_green
from spde_lab.grid import Grid
from spde_lab.hilbert import HilbertStructure
from spde_lab.mild import (
    MildOperator,
    SolutionField,
    apply_T,
    initial_iterate,
    picard_residual,
    solve_mild,
    solve_mild_detailed,
)
from spde_lab.noise import NoiseIncrements, NoiseSampler, sample_noise
from spde_lab.problem import FunctionSpec, ProblemSpec

HALF = CoefficientField.constant([[0.5]])
ZERO = FunctionSpec.affine()


def _problem(grid, model, f=ZERO, h=ZERO, u0=None, coeffs=HALF):
    u0 = np.zeros(grid.shape) if u0 is None else u0
    return ProblemSpec(coeffs, f, h, u0, model, grid)


@pytest.fixture(scope="module")
def small():
    g = Grid(1, 32, 4.0, dt=0.25 / 64, n_steps=64)
    model = CorrelationModel.gaussian(0.5, 1)
    return g, model, sample_noise(g, model, 3)


# --- deterministic heat flow -----------------------------------------------------

def test_zero_nonlinearities_give_heat_flow(small):
    g, model, noise = small
    x = g.coords[0]
    s2, a = 0.09, 0.5
    bumps = lambda var: sum(np.exp(-((x - 1.3 + n * g.L) ** 2) / (2 * var)) / math.sqrt(var)
                            for n in range(-3, 4))
    pr = _problem(g, model, u0=bumps(s2))
    res = solve_mild_detailed(pr, noise)
    assert res.iterations == 1
    for n in (1, 16, 64):
        np.testing.assert_allclose(res.solution.values[n], bumps(s2 + 2 * a * n * g.dt),
                                   atol=1e-6, err_msg=f"level {n}")
    junk = np.random.default_rng(0).standard_normal((g.n_steps + 1,) + g.shape)
    np.testing.assert_array_equal(apply_T(junk, pr, noise).values, res.solution.values)


def test_variable_coefficient_path_is_the_numeric_green_column(small):
    g, model, noise = small
    s = lambda c: 0.5 * (1 + 0.3 * np.cos(2 * math.pi * c[0] / g.L))
    grad = lambda c: np.array([-0.15 * 2 * math.pi / g.L * np.sin(2 * math.pi * c[0] / g.L)])
    cf = CoefficientField.divergence_form(1, s, grad, (0.35, 0.65))
    u0 = np.zeros(g.shape)
    u0[9] = 1 / g.dx
    out = apply_T(initial_iterate(_problem(g, model, u0=u0, coeffs=cf)),
                  _problem(g, model, u0=u0, coeffs=cf), noise).values
    col = numeric_green(cf, 0, 9, g)
    np.testing.assert_allclose(out[1:], col.values, atol=1e-12)


# --- additive noise moments -----------------------------------------------------------

SIGMA = 0.7
R = 2000


@pytest.fixture(scope="module")
def additive_samples(small):
    g, model, _ = small
    H = HilbertStructure.from_model(g, model)
    pr = _problem(g, model, h=FunctionSpec.affine(SIGMA))
    sampler = NoiseSampler(g, model, H=H)
    zero = np.zeros((g.n_steps + 1,) + g.shape)
    out = {"exponential": [], "left_point": []}
    for r in range(R):
        noise = sampler.increments(10_000 + r)
        for q in out:
            out[q].append(MildOperator(pr, noise, q).apply(zero)[-1])
    # mode-wise target: sum_k S_k k_s(xi_k) / N with the heat factor integrated in time
    xi2 = g.wavenumber_sq
    Chat = np.fft.fftn(H.correlation_on_torus).real
    f = lambda s: float(np.sum(np.exp(-2 * 0.5 * xi2 * s) * Chat)) / g.size
    targets = {
        "exponential": SIGMA**2 * integrate.quad(f, 0, g.T, epsabs=0, epsrel=1e-12)[0],
        "left_point": SIGMA**2 * g.dt * sum(f(j * g.dt) for j in range(1, g.n_steps + 1)),
    }
    return {q: np.array(v) for q, v in out.items()}, targets


@pytest.mark.parametrize("quadrature", ["exponential", "left_point"])
def test_additive_variance_and_mean(additive_samples, quadrature):
    samples, targets = additive_samples
    u = samples[quadrature]
    tgt = targets[quadrature]
    for j in (0, 10, 20):
        col = u[:, j]
        assert abs(col.mean()) <= 3 * col.std(ddof=1) / math.sqrt(R)
        assert abs(col.var(ddof=1) - tgt) <= 3 * tgt * math.sqrt(2 / (R - 1))


def test_additive_solution_is_one_application(small):
    g, model, noise = small
    pr = _problem(g, model, h=FunctionSpec.affine(SIGMA))
    res = solve_mild_detailed(pr, noise)
    assert res.iterations == 1
    zero = np.zeros((g.n_steps + 1,) + g.shape)
    assert picard_residual(zero, pr, noise) == pytest.approx(
        g.spacetime_lp_norm(apply_T(zero, pr, noise).values), rel=1e-14)


def test_only_the_drift_sees_the_argument(small):
    g, model, noise = small
    f = FunctionSpec.affine(0.2, -0.8)
    pr = _problem(g, model, f=f, h=FunctionSpec.affine(SIGMA))
    rng = np.random.default_rng(4)
    u, v = (rng.standard_normal((g.n_steps + 1,) + g.shape) for _ in range(2))
    diff = apply_T(u, pr, noise).values - apply_T(v, pr, noise).values
    pr_lin = _problem(g, model, f=FunctionSpec.affine(0.0, -0.8))
    only_f = apply_T(u - v, pr_lin, noise).values
    np.testing.assert_allclose(diff, only_f, atol=1e-12)


# --- Picard iteration ------------------------------------------------------------------

@pytest.fixture(scope="module")
def nonlinear(small):
    g, model, noise = small
    u0 = 1 + 0.5 * np.cos(2 * math.pi * g.coords[0] / g.L)
    pr = _problem(g, model, f=FunctionSpec.named("tanh", 0.5),
                  h=FunctionSpec.named("sin", 0.8, 0.3), u0=u0)
    return pr, noise


def test_geometric_contraction(nonlinear):
    pr, noise = nonlinear
    res = solve_mild_detailed(pr, noise, tol=1e-10, max_iter=60)
    print(f"measured contraction factor r = {res.contraction:.4f}")
    assert res.contraction < 1
    assert res.iterations >= 3
    assert res.solution.provenance["iterations"] == res.iterations


def test_tolerance_cauchy_property(nonlinear):
    pr, noise = nonlinear
    tol = 1e-6
    a = solve_mild(pr, noise, tol=tol)
    b = solve_mild(pr, noise, tol=tol / 10)
    assert pr.grid.spacetime_lp_norm(a.values - b.values) <= tol


@pytest.mark.parametrize("tol", [1e-4, 1e-8])
def test_residual_within_twice_tol(nonlinear, tol):
    pr, noise = nonlinear
    u = solve_mild(pr, noise, tol=tol)
    assert picard_residual(u, pr, noise) <= 2 * tol


def test_residual_decreases_along_iterates(nonlinear):
    pr, noise = nonlinear
    op = MildOperator(pr, noise)
    u = op.apply(initial_iterate(pr))
    res = []
    for _ in range(8):
        res.append(picard_residual(u, pr, noise))
        u = op.apply(u)
    assert all(b < a for a, b in zip(res[1:], res[2:]))


def test_nonconvergence_reports_history(nonlinear):
    pr, noise = nonlinear
    with pytest.raises(ConvergenceError) as exc:
        solve_mild(pr, noise, tol=1e-14, max_iter=2)
    assert len(exc.value.history) == 2
    with pytest.raises(DomainError):
        solve_mild(pr, noise, tol=0.0)


def test_predictability(nonlinear):
    pr, noise = nonlinear
    g = pr.grid
    m = 20
    future = noise.data.copy()
    future[m:] = sample_noise(g, noise.model, 99).data[m:]
    other = NoiseIncrements(future, g, noise.model, noise.seed)
    a = solve_mild(pr, noise, tol=1e-10).values
    b = solve_mild(pr, other, tol=1e-10).values
    # levels 0..m only see rows 0..m-1; the stopping index may differ, so compare to tol
    np.testing.assert_allclose(a[: m + 1], b[: m + 1], atol=1e-9)
    assert np.abs(a[m + 1:] - b[m + 1:]).max() > 1e-3
    # a single application is exactly predictable
    op_a, op_b = MildOperator(pr, noise), MildOperator(pr, other)
    u = initial_iterate(pr)
    np.testing.assert_array_equal(op_a.apply(u)[: m + 1], op_b.apply(u)[: m + 1])


def test_same_seed_is_bit_identical(nonlinear, small):
    pr, _ = nonlinear
    g, model, _ = small
    a = solve_mild(pr, sample_noise(g, model, 17))
    b = solve_mild(pr, sample_noise(g, model, 17))
    assert np.array_equal(a.values, b.values)


# --- refusals -------------------------------------------------------------------------

def test_dalang_refusal():
    g = Grid(2, 8, 1.0, dt=0.01, n_steps=4)
    model = CorrelationModel.white_noise(2)
    noise = sample_noise(g, model, 0)
    cf = CoefficientField.constant(np.eye(2) / 2)
    with pytest.raises(AdmissibilityError):
        solve_mild(_problem(g, model, h=FunctionSpec.affine(1.0), coeffs=cf), noise)
    solve_mild(_problem(g, model, f=FunctionSpec.affine(1.0), coeffs=cf), noise)


def test_mismatched_inputs(small):
    g, model, noise = small
    pr = _problem(g, CorrelationModel.gaussian(0.3, 1))
    with pytest.raises(GridMismatchError):
        apply_T(initial_iterate(pr), pr, noise)
    pr = _problem(g, model)
    with pytest.raises(GridMismatchError):
        apply_T(np.zeros((3,) + g.shape), pr, noise)
    with pytest.raises(DomainError):
        MildOperator(pr, noise, "midpoint")


def test_mild_path_rejects_random_coefficients(small):
    g, model, noise = small
    cf = CoefficientField.random_smooth([[0.5]], 0.2, seed=1, L=g.L)
    with pytest.raises(DomainError):
        MildOperator(_problem(g, model, coeffs=cf), noise)
    div = CoefficientField.divergence_form(1, lambda c: np.full(c[0].shape, 0.5),
                                           lambda c: np.zeros((1,) + c[0].shape), (0.5, 0.5))
    with pytest.raises(DomainError):
        MildOperator(_problem(g, model, coeffs=div), noise, "exponential")


def test_solution_field_checks(small):
    g = small[0]
    with pytest.raises(GridMismatchError):
        SolutionField(np.zeros((2,) + g.shape), g)
    bad = np.zeros((g.n_steps + 1,) + g.shape)
    bad[3, 3] = np.nan
    with pytest.raises(DomainError):
        SolutionField(bad, g)
