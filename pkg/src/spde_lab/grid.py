"""Periodic space-time lattice shared by every module."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, GridMismatchError, StabilityError


@dataclass(frozen=True)
class Grid:
    """Periodic lattice on ``[0, L)^d`` with a uniform time mesh.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 or 2.
    N : int
        Points per axis; must be a power of two.
    L : float
        Period length.
    dt : float
        Time step.
    n_steps : int
        Number of time steps; the horizon is ``T = n_steps * dt``.
    """

    d: int
    N: int
    L: float
    dt: float = 1.0
    n_steps: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 1 or (self.N & (self.N - 1)) != 0:
            raise DomainError(f"N must be a power of two, got {self.N}")
        if not self.L > 0:
            raise DomainError("L must be positive")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.n_steps < 0:
            raise DomainError("n_steps must be nonnegative")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def with_time(self, dt: float | None = None, n_steps: int | None = None) -> "Grid":
        return Grid(self.d, self.N, self.L,
                    self.dt if dt is None else dt,
                    self.n_steps if n_steps is None else n_steps)

    def same_lattice(self, other: "Grid") -> bool:
        return (self.d, self.N) == (other.d, other.N) and np.isclose(self.L, other.L)

    def require_same(self, other: "Grid") -> None:
        if not (self.same_lattice(other) and np.isclose(self.dt, other.dt)
                and self.n_steps == other.n_steps):
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")

    def check(self, u: np.ndarray) -> np.ndarray:
        """Return ``u`` as a float array of the lattice shape, or raise."""
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            if u.size == self.size:
                u = u.reshape(self.shape)
            else:
                raise GridMismatchError(f"array of shape {u.shape} is not on a {self.shape} lattice")
        if not np.all(np.isfinite(u)):
            raise DomainError("grid function has non-finite entries")
        return u

    # -- coordinates -----------------------------------------------------

    @cached_property
    def axis(self) -> np.ndarray:
        return self.dx * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of lattice coordinates in ``[0, L)``, ``ij`` indexing."""
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    @cached_property
    def offsets(self) -> tuple[np.ndarray, ...]:
        """Signed lattice offsets wrapped to ``[-L/2, L/2)`` per axis."""
        j = np.arange(self.N)
        j = np.where(j >= self.N // 2, j - self.N, j) if self.N > 1 else j
        off = self.dx * j
        return tuple(np.meshgrid(*([off] * self.d), indexing="ij"))

    @cached_property
    def offset_radius(self) -> np.ndarray:
        return np.sqrt(sum(o**2 for o in self.offsets))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular frequencies ``2*pi*k/L`` matching ``numpy.fft.fftn`` ordering."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        return tuple(np.meshgrid(*([k] * self.d), indexing="ij"))

    @cached_property
    def wavenumber_sq(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    # -- norms -----------------------------------------------------------

    def lp_norm(self, u: np.ndarray, p: float = 2.0) -> float:
        """Cell-weighted discrete L_p norm over the spatial lattice."""
        u = np.asarray(u)
        if p == 2:
            return float(np.sqrt(np.sum(np.abs(u) ** 2) * self.cell_volume))
        return float((np.sum(np.abs(u) ** p) * self.cell_volume) ** (1.0 / p))

    def spacetime_lp_norm(self, u: np.ndarray, p: float = 2.0) -> float:
        """Discrete L_p norm over ``[0, T] x torus`` of an array ``(n_t, *shape)``."""
        w = self.dt * self.cell_volume
        return float((np.sum(np.abs(u) ** p) * w) ** (1.0 / p))

    def explicit_stability(self, K: float, theta: float) -> None:
        """Raise unless the theta-scheme step is certified stable.

        ``theta >= 1/2`` is unconditionally stable; otherwise the explicit
        diffusion bound ``dt <= dx^2 / (2 d K)`` must hold.
        """
        if theta >= 0.5:
            return
        bound = self.dx**2 / (2 * self.d * K)
        if self.dt > bound:
            raise StabilityError(
                f"dt={self.dt:g} exceeds explicit bound {bound:g} for theta={theta}")
