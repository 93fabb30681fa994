"""Diffusion and drift coefficients and their lattice operator.

The operator is ``L u = a^{ij} D_ij u + b^i D_i u`` with centred second-order
differences. Its Fourier symbol on the lattice, for constant coefficients, is
``-sum_ij a^{ij} s_ij(xi) + i sum_i b^i sin(xi_i dx)/dx`` where
``s_ii = 4 sin^2(xi_i dx/2)/dx^2`` and ``s_ij = sin(xi_i dx) sin(xi_j dx)/dx^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

from .errors import DomainError
from .grid import Grid

# a(t, coords) -> (d, d, *shape);  b(t, coords) -> (d, *shape)
MatrixField = Callable[[float, tuple], np.ndarray]


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients ``a^{ij}(t, x)`` and ``b^i(t, x)`` with declared bounds.

    Use :meth:`constant`, :meth:`divergence_form` or :meth:`random_smooth`.
    ``coeff_alpha`` is the declared Holder order of ``a`` in ``x``, kept
    distinct from any Riesz exponent.
    """

    d: int
    a: MatrixField
    b: MatrixField
    ellipticity: tuple[float, float]
    coeff_alpha: float = 1.0
    constant_matrix: np.ndarray | None = None
    constant_drift: np.ndarray | None = None
    time_dependent: bool = False
    self_adjoint: bool = False
    random: bool = False
    description: dict = field(default_factory=dict)

    @property
    def is_constant(self) -> bool:
        return self.constant_matrix is not None

    @classmethod
    def constant(cls, A, b=None) -> "CoefficientField":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d) or not np.allclose(A, A.T):
            raise DomainError("A must be a symmetric square matrix")
        ev = np.linalg.eigvalsh(A)
        if ev[0] <= 0:
            raise DomainError("A must be positive definite")
        bv = np.zeros(d) if b is None else np.asarray(b, dtype=float).reshape(d)

        def a_fun(t, coords, A=A):
            return np.broadcast_to(A.reshape(d, d, *([1] * d)), (d, d) + coords[0].shape)

        def b_fun(t, coords, bv=bv):
            return np.broadcast_to(bv.reshape(d, *([1] * d)), (d,) + coords[0].shape)

        return cls(d, a_fun, b_fun, (float(ev[0]), float(ev[-1])), 1.0, A, bv,
                   self_adjoint=not np.any(bv),
                   description={"kind": "constant", "A": A.tolist(), "b": bv.tolist()})

    @classmethod
    def divergence_form(cls, d: int, scalar: Callable, grad: Callable,
                        bounds: tuple[float, float], coeff_alpha: float = 1.0
                        ) -> "CoefficientField":
        """``a = s(x) I`` with ``b^i = d_i s``, so that ``L u = div(s grad u)``.

        ``scalar(coords)`` returns ``s`` on the lattice, ``grad(coords)`` its
        gradient with a leading axis of length ``d``.
        """
        eye = np.eye(d)

        def a_fun(t, coords):
            s = scalar(coords)
            return eye.reshape(d, d, *([1] * d)) * s[None, None]

        def b_fun(t, coords):
            return np.asarray(grad(coords))

        return cls(d, a_fun, b_fun, bounds, coeff_alpha, self_adjoint=True,
                   description={"kind": "divergence_form"})

    @classmethod
    def random_smooth(cls, A0, eps: float, seed: int, coeff_alpha: float = 0.5,
                      n_modes: int = 8, L: float = 1.0) -> "CoefficientField":
        """``a(x) = A0 (1 + eps g(x))`` with ``g`` a random Fourier series, ``max|g| <= 1``.

        The amplitudes of ``g`` decay like ``(1 + |k|)^-(coeff_alpha + d + 1)``
        so that ``g`` is smooth (in particular ``C^coeff_alpha``). ``g`` is
        fixed by ``seed``; ``L`` is the period of the series.
        """
        A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        d = A0.shape[0]
        if not 0 <= eps < 1:
            raise DomainError("eps must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        ks = np.stack(np.meshgrid(*([np.arange(-n_modes, n_modes + 1)] * d), indexing="ij"),
                      -1).reshape(-1, d)
        ks = ks[np.any(ks != 0, axis=1)]
        amp = (1.0 + np.linalg.norm(ks, axis=1)) ** (-(coeff_alpha + d + 1))
        c = amp * rng.standard_normal(len(ks))
        s = amp * rng.standard_normal(len(ks))
        norm = float(np.sum(np.abs(c) + np.abs(s)))  # sup bound of the series
        ev = np.linalg.eigvalsh(A0)
        if ev[0] <= 0:
            raise DomainError("A0 must be positive definite")

        def g(coords):
            ph = sum(2 * np.pi * ks[:, i, None] * coords[i].ravel()[None] / L for i in range(d))
            val = (c[:, None] * np.cos(ph) + s[:, None] * np.sin(ph)).sum(0) / norm
            return val.reshape(coords[0].shape)

        def a_fun(t, coords):
            return A0.reshape(d, d, *([1] * d)) * (1 + eps * g(coords))[None, None]

        def b_fun(t, coords):
            return np.zeros((d,) + coords[0].shape)

        return cls(d, a_fun, b_fun, (float(ev[0] * (1 - eps)), float(ev[-1] * (1 + eps))),
                   coeff_alpha, random=True,
                   description={"kind": "random_smooth", "eps": eps, "seed": int(seed),
                                "coeff_alpha": coeff_alpha})

    # -- checks ----------------------------------------------------------

    def check_ellipticity(self, grid: Grid, times=(0.0,), n_probe: int = 64,
                          seed: int = 0) -> tuple[float, float]:
        """Sampled Rayleigh quotients; raise unless they respect the declared bounds."""
        rng = np.random.default_rng(seed)
        lo, hi = np.inf, -np.inf
        for t in times:
            a = self.a(t, grid.coords).reshape(self.d, self.d, -1)
            if not np.allclose(a, np.swapaxes(a, 0, 1)):
                raise DomainError("a is not symmetric")
            lam = rng.standard_normal((n_probe, self.d))
            lam /= np.linalg.norm(lam, axis=1, keepdims=True)
            q = np.einsum("pi,ijx,pj->px", lam, a, lam)
            lo, hi = min(lo, q.min()), max(hi, q.max())
        delta, K = self.ellipticity
        slack = 1e-12 * max(1.0, K)
        if lo < delta - slack or hi > K + slack:
            raise DomainError(f"Rayleigh quotients [{lo:g}, {hi:g}] violate [{delta:g}, {K:g}]")
        return float(lo), float(hi)

    def mass_rate(self, grid: Grid, t: float = 0.0) -> float:
        """``sup |d_ij a^{ij} - d_i b^i|`` by centred differences on the lattice."""
        a = self.a(t, grid.coords)
        b = self.b(t, grid.coords)
        h = grid.dx
        tot = np.zeros(grid.shape)
        for i in range(self.d):
            tot -= (np.roll(b[i], -1, i) - np.roll(b[i], 1, i)) / (2 * h)
            for j in range(self.d):
                tot += _mixed_difference(a[i, j], i, j, h)
        return float(np.abs(tot).max())

    # -- lattice operator ------------------------------------------------

    def symbol(self, grid: Grid) -> np.ndarray:
        """Fourier symbol of ``L_h`` (constant coefficients only)."""
        if not self.is_constant:
            raise DomainError("symbol requires constant coefficients")
        A, b, h = self.constant_matrix, self.constant_drift, grid.dx
        xi = grid.wavenumbers
        out = np.zeros(grid.shape, dtype=complex)
        for i in range(self.d):
            out -= A[i, i] * 4 * np.sin(xi[i] * h / 2) ** 2 / h**2
            out += 1j * b[i] * np.sin(xi[i] * h) / h
            for j in range(self.d):
                if i != j:
                    out -= A[i, j] * np.sin(xi[i] * h) * np.sin(xi[j] * h) / h**2
        return out

    def continuum_symbol(self, grid: Grid) -> np.ndarray:
        """``-xi^T A xi + i b.xi`` on the lattice frequencies (constant coefficients)."""
        if not self.is_constant:
            raise DomainError("symbol requires constant coefficients")
        A, b = self.constant_matrix, self.constant_drift
        xi = grid.wavenumbers
        out = np.zeros(grid.shape, dtype=complex)
        for i in range(self.d):
            out += 1j * b[i] * xi[i]
            for j in range(self.d):
                out -= A[i, j] * xi[i] * xi[j]
        return out

    def operator(self, grid: Grid, t: float = 0.0) -> sparse.csr_matrix:
        """Sparse matrix of ``L_h`` at time ``t`` acting on C-order flattened fields."""
        if grid.d != self.d:
            raise DomainError("grid and coefficient dimensions differ")
        a = self.a(t, grid.coords).reshape(self.d, self.d, -1)
        b = self.b(t, grid.coords).reshape(self.d, -1)
        h, M = grid.dx, grid.size
        idx = np.arange(M).reshape(grid.shape)
        rows, cols, vals = [], [], []

        def add(shift, weight):
            nb = idx
            for ax, s in enumerate(shift):
                if s:
                    nb = np.roll(nb, -s, ax)
            rows.append(idx.ravel())
            cols.append(nb.ravel())
            vals.append(weight)

        for i in range(self.d):
            e = [0] * self.d
            e[i] = 1
            add(tuple(e), a[i, i] / h**2 + b[i] / (2 * h))
            add(tuple(-x for x in e), a[i, i] / h**2 - b[i] / (2 * h))
            add((0,) * self.d, -2 * a[i, i] / h**2)
            for j in range(self.d):
                if j <= i:
                    continue
                w = 2 * a[i, j] / (4 * h**2)  # a^{ij} and a^{ji} share the stencil
                for si, sj, sg in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                    s = [0] * self.d
                    s[i], s[j] = si, sj
                    add(tuple(s), sg * w)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                          np.concatenate(cols))),
                                 shape=(M, M))

    def apply(self, u: np.ndarray, grid: Grid, t: float = 0.0) -> np.ndarray:
        """``L_h u`` by stencil arithmetic (no matrix assembly)."""
        a = self.a(t, grid.coords)
        b = self.b(t, grid.coords)
        h = grid.dx
        out = np.zeros(grid.shape)
        for i in range(self.d):
            up, dn = np.roll(u, -1, i), np.roll(u, 1, i)
            out += a[i, i] * (up - 2 * u + dn) / h**2 + b[i] * (up - dn) / (2 * h)
            for j in range(self.d):
                if j != i:
                    out += a[i, j] * _mixed_difference(u, i, j, h)
        return out


def _mixed_difference(u, i, j, h):
    if i == j:
        return (np.roll(u, -1, i) - 2 * u + np.roll(u, 1, i)) / h**2
    r = lambda si, sj: np.roll(np.roll(u, -si, i), -sj, j)
    return (r(1, 1) - r(1, -1) - r(-1, 1) + r(-1, -1)) / (4 * h**2)
