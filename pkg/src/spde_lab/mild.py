"""Mild solutions as Picard fixed points of the Green-function map.

For constant coefficients the Green function is the exact Gaussian kernel
of the continuum operator, applied on the torus as the Fourier multiplier
``E = exp(dt (-xi^T A xi + i b.xi))``. The space-time convolution is then
evaluated by the recursion ``acc_n = E acc_{n-1} + E w_{n-1}`` where
``w_m`` is the transformed source on ``[t_m, t_{m+1})``, which equals the
full sum over source times in ``O(n_steps)`` transforms.

For variable coefficients the numeric Green function of
:func:`spde_lab.green.numeric_green` is used: a source at ``s_m`` is
mollified by one backward-Euler step ``B`` and then carried by theta steps
``Theta``, so ``y_n = Theta y_{n-1} + B w_{n-1}`` with ``y_1 = B(u0 + w_0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correlation import dalang_integral
from .errors import AdmissibilityError, ConvergenceError, DomainError, GridMismatchError
from .green import ThetaStepper
from .grid import Grid
from .noise import NoiseIncrements
from .problem import ProblemSpec

QUADRATURES = ("left_point", "exponential")


@dataclass(frozen=True)
class SolutionField:
    """``u(t_n, x_j)`` for ``n = 0..n_steps`` with provenance metadata."""

    values: np.ndarray
    grid: Grid
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (self.grid.n_steps + 1,) + self.grid.shape:
            raise GridMismatchError("solution array does not match its grid")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("solution has non-finite entries")

    def norm(self, p: float = 2.0) -> float:
        return self.grid.spacetime_lp_norm(self.values, p)


def require_dalang(problem: ProblemSpec) -> float:
    """Finite ``int mu(dxi)/(1+|xi|^2)`` or :class:`AdmissibilityError`."""
    if problem.h_spec.is_zero:
        return 0.0
    val = dalang_integral(problem.model, 1.0)
    if math.isinf(val):
        raise AdmissibilityError(
            f"Dalang integral at order 1 diverges for {problem.model.label}")
    return val


class MildOperator:
    """The discretised map ``T`` for one problem and one noise realisation.

    Parameters
    ----------
    problem : ProblemSpec
    noise : NoiseIncrements
    stochastic_quadrature : {"left_point", "exponential"}
        ``left_point`` weights the source on ``[s_m, s_{m+1})`` by the
        kernel at ``s_m``. ``exponential`` integrates the kernel exactly over
        the step per Fourier mode (constant coefficients only): the noise term
        is scaled to the exact Ito isometry and the drift uses the exact
        time average. Both evaluate ``f`` and ``h`` at the left point.
    theta : float
        Theta of the numeric Green function (variable coefficients).
    """

    def __init__(self, problem: ProblemSpec, noise: NoiseIncrements,
                 stochastic_quadrature: str = "left_point", theta: float = 0.5):
        problem.grid.require_same(noise.grid)
        if problem.model != noise.model:
            raise GridMismatchError("noise was sampled for another correlation model")
        if stochastic_quadrature not in QUADRATURES:
            raise DomainError(f"unknown quadrature {stochastic_quadrature!r}")
        require_dalang(problem)
        self.problem, self.noise = problem, noise
        self.quadrature = stochastic_quadrature
        g = problem.grid
        c = problem.coeffs
        if c.is_constant:
            lam = c.continuum_symbol(g) * g.dt
            self._E = np.exp(lam)
            if stochastic_quadrature == "exponential":
                # kernel times step weight, written to avoid overflow for stiff modes:
                # noise  E sqrt(expm1(-2 Re)/(-2 Re)) = sqrt(-expm1(2 Re)/(-2 Re)) e^{i Im}
                # drift  E expm1(-lam)/(-lam)         = expm1(lam)/lam
                re = lam.real
                with np.errstate(divide="ignore", invalid="ignore"):
                    q2 = np.where(re < -1e-300, -np.expm1(2 * re) / (-2 * re), 1.0)
                    ef = np.where(lam != 0, np.expm1(lam) / lam, 1.0)
                self._Eh = np.sqrt(q2) * np.exp(1j * lam.imag)
                self._Ef = ef
            else:
                self._Eh = self._Ef = self._E
        else:
            if stochastic_quadrature == "exponential":
                raise DomainError("exponential quadrature needs constant coefficients")
            if c.random:
                raise DomainError("the mild path takes deterministic coefficients only")
            self._stepper = ThetaStepper(c, g, theta)

    def sources(self, u: np.ndarray):
        """Yield ``(dt f_m, h_m * dF_m)`` for ``m = 0..n_steps-1`` (left point)."""
        p, g = self.problem, self.problem.grid
        x = g.coords
        for m in range(g.n_steps):
            t = m * g.dt
            fm = None if p.f_spec.is_zero else g.dt * p.f_spec(t, x, u[m])
            hm = None if p.h_spec.is_zero else p.h_spec(t, x, u[m]) * self.noise.data[m]
            yield fm, hm

    def apply(self, u: np.ndarray) -> np.ndarray:
        g = self.problem.grid
        u = np.asarray(u, dtype=float)
        if u.shape != (g.n_steps + 1,) + g.shape:
            raise GridMismatchError("iterate does not match the grid")
        out = np.empty_like(u)
        out[0] = self.problem.u0
        if self.problem.coeffs.is_constant:
            acc = np.fft.fftn(self.problem.u0)
            for m, (fm, hm) in enumerate(self.sources(u)):
                acc = self._E * acc
                if fm is not None:
                    acc += self._Ef * np.fft.fftn(fm)
                if hm is not None:
                    acc += self._Eh * np.fft.fftn(hm)
                out[m + 1] = np.real(np.fft.ifftn(acc))
            return out
        st = self._stepper
        y = None
        for m, (fm, hm) in enumerate(self.sources(u)):
            w = np.zeros(g.shape)
            if fm is not None:
                w += fm
            if hm is not None:
                w += hm
            t = m * g.dt
            if m == 0:
                y = st.backward_euler(self.problem.u0 + w, t)
            else:
                y = st.theta_step(y, t) + st.backward_euler(w, t)
            out[m + 1] = y
        return out


def apply_T(u: SolutionField | np.ndarray, problem: ProblemSpec, noise: NoiseIncrements,
            stochastic_quadrature: str = "left_point") -> SolutionField:
    """One application of the fixed-point map on a shared noise realisation."""
    vals = u.values if isinstance(u, SolutionField) else u
    op = MildOperator(problem, noise, stochastic_quadrature)
    return SolutionField(op.apply(vals), problem.grid,
                         {"scheme": f"mild/{stochastic_quadrature}", "seed": noise.seed})


def initial_iterate(problem: ProblemSpec) -> np.ndarray:
    """``u0`` held constant in time."""
    g = problem.grid
    return np.broadcast_to(problem.u0, (g.n_steps + 1,) + g.shape).copy()


@dataclass(frozen=True)
class MildResult:
    solution: SolutionField
    iterations: int
    increments: list
    contraction: float


def solve_mild(problem: ProblemSpec, noise: NoiseIncrements, tol: float = 1e-8,
               max_iter: int = 50, p: float = 2.0,
               stochastic_quadrature: str = "left_point") -> SolutionField:
    """Picard iteration ``u_{k+1} = T u_k`` from the constant extension of ``u0``.

    Stops at the first ``k`` with ``||u_{k+1} - u_k||_p <= tol`` (space-time
    lattice norm), returns ``u_{k+1}`` and records ``k`` as the iteration
    count, so a map that ignores its argument converges in one iteration.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations without meeting ``tol``; carries the
        increment history.
    """
    return solve_mild_detailed(problem, noise, tol, max_iter, p,
                               stochastic_quadrature).solution


def solve_mild_detailed(problem, noise, tol=1e-8, max_iter=50, p=2.0,
                        stochastic_quadrature="left_point") -> MildResult:
    if not tol > 0:
        raise DomainError("tol must be positive")
    op = MildOperator(problem, noise, stochastic_quadrature)
    g = problem.grid
    prev = op.apply(initial_iterate(problem))
    history: list[float] = []
    for k in range(1, max_iter + 1):
        nxt = op.apply(prev)
        inc = g.spacetime_lp_norm(nxt - prev, p)
        history.append(inc)
        prev = nxt
        if inc <= tol:
            ratios = [b / a for a, b in zip(history, history[1:]) if a > 0]
            prov = {"scheme": f"mild/{stochastic_quadrature}", "seed": int(noise.seed),
                    "tol": tol, "p": p, "iterations": k, "increments": history,
                    "noise_version": noise.version}
            return MildResult(SolutionField(nxt, g, prov), k, history,
                              max(ratios) if ratios else 0.0)
    raise ConvergenceError(f"Picard iteration did not reach tol={tol:g} in {max_iter} "
                           f"iterations (last increment {history[-1]:.3e})", history)


def picard_residual(u: SolutionField | np.ndarray, problem: ProblemSpec,
                    noise: NoiseIncrements, p: float = 2.0,
                    stochastic_quadrature: str = "left_point") -> float:
    """``||u - T u||_p`` on the space-time lattice."""
    vals = u.values if isinstance(u, SolutionField) else np.asarray(u)
    if isinstance(u, SolutionField):
        stochastic_quadrature = u.provenance.get("scheme", "mild/" + stochastic_quadrature
                                                 ).split("/")[-1]
        if stochastic_quadrature not in QUADRATURES:
            stochastic_quadrature = "left_point"
    Tu = MildOperator(problem, noise, stochastic_quadrature).apply(vals)
    return problem.grid.spacetime_lp_norm(vals - Tu, p)
