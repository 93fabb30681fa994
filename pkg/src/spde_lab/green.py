"""Fundamental solutions of ``d_t - a^{ij} d_ij - b^i d_i`` and their bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, sparse
from scipy.sparse import linalg as splinalg

from .coefficients import CoefficientField
from .correlation import CorrelationModel, dalang_integral, sphere_area, spectral_density
from .errors import AdmissibilityError, DomainError, StabilityError
from .grid import Grid


def g0(t: float, x, d: int = 1):
    """Centred Gaussian density with covariance ``t I`` in dimension ``d``.

    ``x`` is an array whose last axis has length ``d`` (any shape when ``d=1``).

    Examples
    --------
    >>> round(float(g0(1.0, 0.0)), 6)
    0.398942
    """
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    r2 = x**2 if d == 1 else np.sum(x**2, axis=-1)
    return (2 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (2 * t))


def const_green(A, t: float, x):
    """Gaussian density with covariance ``2 A t``: the kernel for constant ``a = A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(A)[0] <= 0:
        raise DomainError("A must be symmetric positive definite")
    if not t > 0:
        raise DomainError("t - s must be positive")
    cov = 2 * A * t
    x = np.asarray(x, dtype=float)
    if d == 1:
        x = x[..., None] if x.ndim == 0 or x.shape[-1:] != (1,) else x
    inv = np.linalg.inv(cov)
    q = np.einsum("...i,ij,...j->...", x, inv, x)
    return np.exp(-q / 2) / math.sqrt((2 * np.pi) ** d * np.linalg.det(cov))


def lattice_green(grid: Grid, A, t: float, shift=None, images: int = 2) -> np.ndarray:
    """``const_green(A, t, x - y)`` at lattice offsets, periodised over nearby images."""
    offs = np.stack(grid.offsets, -1)
    if shift is not None:
        offs = offs - np.asarray(shift, dtype=float)
    out = np.zeros(grid.shape)
    rng = np.arange(-images, images + 1)
    for n in np.stack(np.meshgrid(*([rng] * grid.d), indexing="ij"), -1).reshape(-1, grid.d):
        out += const_green(A, t, offs + grid.L * n)
    return out


# ---------------------------------------------------------------------------
# Numeric Green function
# ---------------------------------------------------------------------------

@dataclass
class GreenColumn:
    """``G(t_n, x; s, y)`` for ``n = s_index + 1, ..., n_steps`` at fixed source.

    Attributes
    ----------
    values : ndarray, shape (n_t, *grid.shape)
    times : ndarray
        Elapsed times ``t_n - s``.
    clamped_mass : float
        Total negative mass set to zero, relative to the column mass.
    width : float
        Standard deviation (per axis) of the mollified initial delta.
    """

    values: np.ndarray
    times: np.ndarray
    source: tuple
    grid: Grid
    clamped_mass: float
    width: float

    def mass(self) -> np.ndarray:
        return self.values.reshape(len(self.times), -1).sum(1) * self.grid.cell_volume


class ThetaStepper:
    """Backward-Euler and theta steps of ``u' = L_h u`` on one grid.

    Constant coefficients use the lattice symbol in Fourier space; otherwise
    the sparse operator is factorised once (or per step when the
    coefficients depend on time).
    """

    def __init__(self, coeffs: CoefficientField, grid: Grid, theta: float = 0.5):
        if not 0 <= theta <= 1:
            raise DomainError("theta must lie in [0, 1]")
        grid.explicit_stability(coeffs.ellipticity[1], theta)
        self.coeffs, self.grid, self.theta = coeffs, grid, theta
        self._cache: dict = {}
        if coeffs.is_constant:
            sym = coeffs.symbol(grid)
            dt = grid.dt
            self._be = 1.0 / (1 - dt * sym)
            self._th_left = 1.0 / (1 - theta * dt * sym)
            self._th_right = 1 + (1 - theta) * dt * sym

    def _fft(self, mult, u):
        out = np.fft.ifftn(mult * np.fft.fftn(u))
        return out.real

    def _factor(self, t: float, weight: float):
        key = (0.0 if not self.coeffs.time_dependent else t, weight)
        if key not in self._cache:
            Lh = self.coeffs.operator(self.grid, t)
            M = sparse.identity(self.grid.size, format="csc") - weight * self.grid.dt * Lh
            self._cache[key] = (splinalg.splu(M.tocsc()), Lh)
            if len(self._cache) > 8:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def backward_euler(self, u: np.ndarray, t: float) -> np.ndarray:
        """``(I - dt L_h(t + dt))^-1 u``."""
        if self.coeffs.is_constant:
            return self._fft(self._be, u)
        lu, _ = self._factor(t + self.grid.dt, 1.0)
        return lu.solve(u.ravel()).reshape(self.grid.shape)

    def theta_step(self, u: np.ndarray, t: float, forcing=None) -> np.ndarray:
        """``(I - theta dt L)^-1 [(I + (1-theta) dt L) u + forcing]``."""
        if self.coeffs.is_constant:
            rhs = self._th_right * np.fft.fftn(u)
            if forcing is not None:
                rhs = rhs + np.fft.fftn(forcing)
            return np.real(np.fft.ifftn(self._th_left * rhs))
        g, th = self.grid, self.theta
        lu, _ = self._factor(t + g.dt, th)
        if self.coeffs.time_dependent:
            L_now = self.coeffs.operator(g, t)
        else:
            L_now = self._factor(t + g.dt, th)[1]
        rhs = u.ravel() + (1 - th) * g.dt * (L_now @ u.ravel())
        if forcing is not None:
            rhs = rhs + forcing.ravel()
        if th == 0:
            return rhs.reshape(g.shape)
        return lu.solve(rhs).reshape(g.shape)


def numeric_green(coeffs: CoefficientField, s_index: int, y_index, grid: Grid,
                  theta: float = 0.5, clamp_tol: float | None = None) -> GreenColumn:
    """Evolve a mollified lattice delta at ``(s, y)`` with the theta-scheme.

    The Kronecker delta ``1/dx^d`` at ``y`` is smoothed by one backward-Euler
    step (giving ``G(s + dt)``); later levels use theta steps. Negative values
    are clamped to 0 and reported as a per-level average fraction of the
    column mass; centred cross-derivative stencils are not monotone, so
    anisotropic ``a`` can produce small negative lobes. With ``clamp_tol``
    set, exceeding it raises :class:`StabilityError`.

    Raises
    ------
    StabilityError
        When ``theta < 1/2`` and the explicit bound fails, or the clamped
        mass exceeds ``clamp_tol``.
    """
    stepper = ThetaStepper(coeffs, grid, theta)
    n_out = grid.n_steps - s_index
    if n_out < 1:
        raise DomainError("source time must precede the horizon")
    delta = np.zeros(grid.shape)
    delta[tuple(np.atleast_1d(y_index))] = 1.0 / grid.cell_volume
    vals = np.empty((n_out,) + grid.shape)
    t0 = s_index * grid.dt
    u = stepper.backward_euler(delta, t0)
    width = _spread(u, grid, y_index)
    vals[0] = u
    for n in range(1, n_out):
        u = stepper.theta_step(u, t0 + n * grid.dt)
        vals[n] = u
    neg = np.minimum(vals, 0.0)
    mass = np.abs(vals).reshape(n_out, -1).sum(1).max() * grid.cell_volume
    clamped = float(-neg.sum() * grid.cell_volume / max(mass, 1e-300)) / n_out
    if clamp_tol is not None and clamped > clamp_tol:
        raise StabilityError(f"negative mass {clamped:.2e} exceeds tolerance {clamp_tol:g}")
    np.maximum(vals, 0.0, out=vals)
    source = (s_index, tuple(int(i) for i in np.atleast_1d(y_index)))
    return GreenColumn(vals, grid.dt * np.arange(1, n_out + 1), source, grid, clamped, width)


def _spread(u: np.ndarray, grid: Grid, y_index) -> float:
    y = np.atleast_1d(y_index)
    off = [((grid.coords[i] - y[i] * grid.dx + grid.L / 2) % grid.L) - grid.L / 2
           for i in range(grid.d)]
    w = u / u.sum()
    return float(np.sqrt(np.sum(w * off[0] ** 2)))


def green_matrix(coeffs: CoefficientField, grid: Grid, s_index: int, t_index: int,
                 theta: float = 0.5) -> np.ndarray:
    """Dense ``P[x, y] = G(t, x; s, y) dx^d`` for small grids (columns = sources)."""
    if grid.size > 4096:
        raise DomainError("dense Green matrices are limited to 4096 lattice points")
    if not 0 <= s_index < t_index <= grid.n_steps:
        raise DomainError("need 0 <= s < t <= n_steps")
    stepper = ThetaStepper(coeffs, grid, theta)
    P = np.empty((grid.size, grid.size))
    for col in range(grid.size):
        u = np.zeros(grid.size)
        u[col] = 1.0
        u = stepper.backward_euler(u.reshape(grid.shape), s_index * grid.dt)
        for n in range(s_index + 1, t_index):
            u = stepper.theta_step(u, n * grid.dt)
        P[:, col] = u.ravel()
    return P


def mass_bounds(coeffs: CoefficientField, grid: Grid, t: float) -> tuple[float, float]:
    """``exp(-/+ t sup|d_ij a^{ij} - d_i b^i|)``: the range of ``int G(t, x; s, y) dx``."""
    r = coeffs.mass_rate(grid)
    return math.exp(-t * r), math.exp(t * r)


@dataclass(frozen=True)
class GaussianBoundFit:
    """Fit of ``log G`` against ``q = |x - y|^2 / (t - s)``.

    ``slope`` and ``r_squared`` describe the regression; the envelope
    ``C (t-s)^(-d/2) exp(-c q)`` uses ``c = -slope / 2`` and the smallest
    ``C`` covering every probed value.
    """

    slope: float
    intercept: float
    r_squared: float
    C: float
    c: float
    holds: bool


def fit_gaussian_bound(columns, rel_floor: float = 1e-8,
                       min_time: float | None = None) -> GaussianBoundFit:
    """Fit Gaussian-bound constants over one or more :class:`GreenColumn` objects.

    Levels with elapsed time below ``min_time`` are skipped; the default,
    ten times the squared mollifier width, excludes the first steps where the
    column still remembers the lattice delta.
    """
    qs, logs = [], []
    for col in columns:
        g = col.grid
        t_min = 10 * col.width**2 if min_time is None else min_time
        y = np.array(col.source[1])
        off = [((g.coords[i] - y[i] * g.dx + g.L / 2) % g.L) - g.L / 2 for i in range(g.d)]
        r2 = sum(o**2 for o in off)
        inner = r2 < (0.4 * g.L) ** 2  # stay clear of the periodic images
        for n, tau in enumerate(col.times):
            if tau < t_min:
                continue
            v = col.values[n]
            keep = inner & (v > rel_floor * v.max())
            qs.append(r2[keep] / tau)
            logs.append(np.log(v[keep] * tau ** (g.d / 2)))
    q = np.concatenate(qs)
    lg = np.concatenate(logs)
    slope, intercept = np.polyfit(q, lg, 1)
    pred = slope * q + intercept
    r2 = 1 - np.sum((lg - pred) ** 2) / np.sum((lg - lg.mean()) ** 2)
    c = -slope / 2
    C = float(np.exp(np.max(lg + c * q)))
    holds = bool(slope < 0 and np.all(lg <= np.log(C) - c * q + 1e-12))
    return GaussianBoundFit(float(slope), float(intercept), float(r2), C, float(c), holds)


# ---------------------------------------------------------------------------
# Spectral bound
# ---------------------------------------------------------------------------

def _radial_weighted(model: CorrelationModel, weight, rtol=1e-10) -> float:
    d = model.d
    area = sphere_area(d)
    m0 = model.spectral_origin_exponent
    f = lambda k: k ** (d - 1) * float(spectral_density(model, k)) * weight(k)
    kw = dict(epsabs=0, epsrel=rtol, limit=400)
    if m0 < 0:
        a = d - 1 + m0
        lo = integrate.quad(lambda k: f(max(k, 1e-30)) * max(k, 1e-30) ** (-a), 0, 1,
                            weight="alg", wvar=(a, 0.0), **kw)[0]
    else:
        lo = integrate.quad(f, 0, 1, **kw)[0]
    hi = integrate.quad(f, 1, np.inf, **kw)[0]
    return area * (lo + hi)


def bound_constant(t: float) -> float:
    """``sup_x (1 + x)(1 - exp(-t x))/x``, the constant comparing the two sides."""
    if not t > 0:
        raise DomainError("t must be positive")
    fn = lambda lx: -(1 + math.exp(lx)) * -math.expm1(-t * math.exp(lx)) / math.exp(lx)
    res = optimize.minimize_scalar(fn, bounds=(-20, 20), method="bounded",
                                   options={"xatol": 1e-10})
    return max(-res.fun, t, 1.0)


def spectral_bound_lhs(model: CorrelationModel, t: float) -> float:
    """``int_0^t ds int mu(dxi) |F G_0(s)(xi)|^2`` by nested quadrature over ``s`` and ``|xi|``.

    Requires the Dalang integral at order 1 to be finite.
    """
    if dalang_integral(model, 1.0) == math.inf:
        raise AdmissibilityError(f"Dalang integral diverges for {model.label}")
    if not t > 0:
        raise DomainError("t must be positive")
    inner = lambda s: _radial_weighted(model, lambda k: math.exp(-s * k * k), rtol=1e-11)
    val, _ = integrate.quad(inner, 0.0, t, epsabs=0, epsrel=1e-9, limit=200)
    return val


def spectral_bound_check(model: CorrelationModel, t: float, eta: float = 1.0,
                         C: float | None = None) -> tuple[float, float]:
    """``(lhs, rhs)`` with ``rhs = C int mu(dxi)/(1 + |xi|^2)``.

    ``C`` defaults to :func:`bound_constant` at ``t``, which makes
    ``lhs <= rhs`` hold mode by mode.
    """
    if eta != 1.0:
        raise DomainError("the spectral bound is stated for eta = 1")
    lhs = spectral_bound_lhs(model, t)
    c = bound_constant(t) if C is None else C
    return lhs, c * dalang_integral(model, 1.0)


def stochastic_heat_variance(model: CorrelationModel, t: float, A=None) -> float:
    """Stationary-free variance of ``int_0^t int G(t-s, x-y) F(ds, dy)`` for constant ``a = A``.

    Computed as ``int mu(dxi) (1 - exp(-2 t xi^T A xi)) / (2 xi^T A xi)``; for
    ``A = I/2`` it coincides with :func:`spectral_bound_lhs`. Only isotropic
    ``A = a I`` is supported.
    """
    d = model.d
    A = np.eye(d) / 2 if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    a = A[0, 0]
    if not np.allclose(A, a * np.eye(d)):
        raise DomainError("only isotropic A = a I is supported")
    return _radial_weighted(model, lambda k: -math.expm1(-2 * t * a * k * k) / (2 * a * k * k)
                            if k > 0 else t)
