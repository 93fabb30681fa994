"""Weak-form solver (theta-scheme method of lines) and pairing residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, GridMismatchError
from .green import ThetaStepper
from .mild import SolutionField
from .noise import NoiseIncrements
from .problem import ProblemSpec


@dataclass(frozen=True)
class SchemeConfig:
    """Theta-scheme settings.

    ``theta = 1/2`` is Crank-Nicolson in the operator; the noise term is
    always explicit so that it stays adapted. Linear systems are solved
    directly (Fourier division or sparse LU); ``solve_tol`` is the largest
    relative residual accepted when the first and last solves are verified
    against the stencil.
    """

    theta: float = 0.5
    solve_tol: float = 1e-10
    stencil: str = "centered2"

    def __post_init__(self):
        if not 0 <= self.theta <= 1:
            raise DomainError("theta must lie in [0, 1]")
        if self.stencil != "centered2":
            raise DomainError("only the centred second-order stencil is available")


def solve_weak(problem: ProblemSpec, noise: NoiseIncrements,
               scheme: SchemeConfig | None = None) -> SolutionField:
    """March ``(I - theta dt L_h) u_{n+1} = (I + (1-theta) dt L_h) u_n + dt f_n + h_n dF_n``.

    ``f_n`` and ``h_n`` are evaluated at ``(t_n, x, u_n)``. Coefficients may
    be random (fixed per replica by their own seed).

    Raises
    ------
    StabilityError
        ``theta < 1/2`` with a step above the explicit bound.
    """
    scheme = scheme or SchemeConfig()
    g = problem.grid
    g.require_same(noise.grid)
    if problem.model != noise.model:
        raise GridMismatchError("noise was sampled for another correlation model")
    problem.coeffs.check_ellipticity(g)
    stepper = ThetaStepper(problem.coeffs, g, scheme.theta)
    out = np.empty((g.n_steps + 1,) + g.shape)
    u = problem.u0.copy()
    out[0] = u
    x = g.coords
    for n in range(g.n_steps):
        t = n * g.dt
        forcing = None
        if not problem.f_spec.is_zero:
            forcing = g.dt * problem.f_spec(t, x, u)
        if not problem.h_spec.is_zero:
            nz = problem.h_spec(t, x, u) * noise.data[n]
            forcing = nz if forcing is None else forcing + nz
        u = stepper.theta_step(u, t, forcing)
        if n in (0, g.n_steps - 1):
            _verify_solve(problem, out[n], u, forcing, t, scheme)
        out[n + 1] = u
    prov = {"scheme": f"weak/theta={scheme.theta}", "seed": int(noise.seed),
            "theta": scheme.theta, "noise_version": noise.version,
            "coefficients": problem.coeffs.description}
    return SolutionField(out, g, prov)


def _verify_solve(problem, u_old, u_new, forcing, t, scheme: SchemeConfig) -> None:
    g, c, th = problem.grid, problem.coeffs, scheme.theta
    lhs = u_new - th * g.dt * c.apply(u_new, g, t + g.dt)
    rhs = u_old + (1 - th) * g.dt * c.apply(u_old, g, t)
    if forcing is not None:
        rhs = rhs + forcing
    scale = max(float(np.abs(rhs).max()), 1e-300)
    res = float(np.abs(lhs - rhs).max()) / scale
    if res > scheme.solve_tol:
        raise ConvergenceError(f"linear solve residual {res:.2e} exceeds {scheme.solve_tol:g}",
                               [res])


def _increment_terms(u: np.ndarray, problem: ProblemSpec, noise: NoiseIncrements) -> np.ndarray:
    """``dt L_h u_m + dt f_m + h_m dF_m`` for each step (left-point operator term)."""
    g = problem.grid
    x = g.coords
    terms = np.empty((g.n_steps,) + g.shape)
    for m in range(g.n_steps):
        t = m * g.dt
        val = g.dt * problem.coeffs.apply(u[m], g, t)
        if not problem.f_spec.is_zero:
            val = val + g.dt * problem.f_spec(t, x, u[m])
        if not problem.h_spec.is_zero:
            val = val + problem.h_spec(t, x, u[m]) * noise.data[m]
        terms[m] = val
    return terms


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, SolutionField) else np.asarray(u, dtype=float)


def weak_pairing_residual(u, phi, problem: ProblemSpec, noise: NoiseIncrements) -> float:
    """``max_n |(u_n, phi) - (u_0, phi) - sum_{m<n} (dt L_h u_m + dt f_m + h_m dF_m, phi)|``.

    ``(., .)`` is the cell-weighted lattice pairing.
    """
    g = problem.grid
    phi = g.check(phi)
    return time_dependent_pairing_residual(
        u, np.broadcast_to(phi, (g.n_steps + 1,) + g.shape), problem, noise)


def time_dependent_pairing_residual(u, Phi, problem: ProblemSpec, noise: NoiseIncrements,
                                    upto: int | None = None) -> float:
    """Residual of the pairing identity with a time-dependent test field.

    The discrete identity checked for every ``n <= upto`` is::

        (u_n, Phi_n) = (u_0, Phi_0)
                       + sum_{m<n} [ (u_m, Phi_{m+1} - Phi_m)
                                     + (dt L_h u_m + dt f_m + h_m dF_m, Phi_{m+1}) ]

    the first bracket being ``int (u, d_s Phi) ds`` with a forward difference.
    For a time-constant ``Phi`` it is the identity of
    :func:`weak_pairing_residual`. ``Phi`` has shape ``(n_steps+1, *shape)``.
    """
    g = problem.grid
    vals = _values(u)
    Phi = np.asarray(Phi, dtype=float)
    if vals.shape != (g.n_steps + 1,) + g.shape or Phi.shape != vals.shape:
        raise GridMismatchError("solution and test field must match the grid")
    upto = g.n_steps if upto is None else upto
    terms = _increment_terms(vals[:upto + 1], _truncate(problem, upto), _cut(noise, upto))
    w = g.cell_volume
    axes = tuple(range(1, g.d + 1))
    lhs = np.sum(vals[:upto + 1] * Phi[:upto + 1], axis=axes) * w
    dphi = np.sum(vals[:upto] * (Phi[1:upto + 1] - Phi[:upto]), axis=axes) * w
    inc = np.sum(terms * Phi[1:upto + 1], axis=axes) * w
    rhs = lhs[0] + np.concatenate([[0.0], np.cumsum(dphi + inc)])
    return float(np.max(np.abs(lhs - rhs)))


def _truncate(problem: ProblemSpec, upto: int) -> ProblemSpec:
    if upto == problem.grid.n_steps:
        return problem
    return ProblemSpec(problem.coeffs, problem.f_spec, problem.h_spec, problem.u0,
                       problem.model, problem.grid.with_time(n_steps=upto), problem.meta)


def _cut(noise: NoiseIncrements, upto: int) -> NoiseIncrements:
    if upto == noise.grid.n_steps:
        return noise
    return NoiseIncrements(noise.data[:upto], noise.grid.with_time(n_steps=upto),
                           noise.model, noise.seed, noise.method, noise.version,
                           noise.clipped_mass)


def green_test_function(problem: ProblemSpec, v, t_index: int,
                        scheme: SchemeConfig | None = None) -> np.ndarray:
    """``v^t(s, x) = sum_y G(t, y; s, x) v(y) dx^d`` on the time levels ``s <= t``.

    Built by carrying ``v`` backwards with the transposed theta step, so
    ``v^t`` solves the discrete backward equation ``d_s v^t + L_h^* v^t = 0``
    with ``v^t(t) = v``. Levels after ``t_index`` repeat ``v``. Requires
    constant coefficients with zero drift, for which ``L_h`` is symmetric.
    """
    scheme = scheme or SchemeConfig()
    g = problem.grid
    c = problem.coeffs
    if not (c.is_constant and not np.any(c.constant_drift)):
        raise DomainError("the backward test function needs a symmetric constant operator")
    v = g.check(v)
    stepper = ThetaStepper(c, g, scheme.theta)
    out = np.empty((g.n_steps + 1,) + g.shape)
    out[t_index:] = v
    for m in range(t_index - 1, -1, -1):
        out[m] = stepper.theta_step(out[m + 1], m * g.dt)
    return out
