"""Problem data shared by the mild and weak solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientField
from .correlation import CorrelationModel
from .errors import DomainError, GridMismatchError
from .grid import Grid

# name -> (function of u, Lipschitz constant of the unscaled function)
NONLINEARITIES: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    "sin": (np.sin, 1.0),
    "cos": (np.cos, 1.0),
    "tanh": (np.tanh, 1.0),
    "softsign": (lambda u: u / (1.0 + np.abs(u)), 1.0),
    "sqrt1p": (lambda u: np.sqrt(1.0 + u * u), 1.0),
}


@dataclass(frozen=True)
class FunctionSpec:
    """A reaction or noise coefficient ``(t, x, u) -> value``, Lipschitz in ``u``.

    ``affine`` gives ``c0 + c1 u``; ``named`` gives ``offset + scale * phi(u)``
    with ``phi`` from :data:`NONLINEARITIES`. ``lipschitz`` is the declared
    constant ``k``.
    """

    kind: str = "affine"
    c0: float = 0.0
    c1: float = 0.0
    name: str | None = None
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind == "named":
            if self.name not in NONLINEARITIES:
                raise DomainError(f"unknown nonlinearity {self.name!r}; "
                                  f"choose from {sorted(NONLINEARITIES)}")
        elif self.kind != "affine":
            raise DomainError(f"unknown function kind {self.kind!r}")

    @classmethod
    def affine(cls, c0: float = 0.0, c1: float = 0.0) -> "FunctionSpec":
        return cls("affine", float(c0), float(c1))

    @classmethod
    def named(cls, name: str, scale: float = 1.0, offset: float = 0.0) -> "FunctionSpec":
        return cls("named", name=name, scale=float(scale), offset=float(offset))

    @property
    def lipschitz(self) -> float:
        if self.kind == "affine":
            return abs(self.c1)
        return abs(self.scale) * NONLINEARITIES[self.name][1]

    @property
    def is_zero(self) -> bool:
        if self.kind == "affine":
            return self.c0 == 0 and self.c1 == 0
        return self.scale == 0 and self.offset == 0

    @property
    def is_constant(self) -> bool:
        return (self.kind == "affine" and self.c1 == 0) or (self.kind == "named"
                                                           and self.scale == 0)

    def __call__(self, t: float, x, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "affine":
            return self.c0 + self.c1 * u
        return self.offset + self.scale * NONLINEARITIES[self.name][0](u)

    def validate_lipschitz(self, n: int = 4096, spread: float = 10.0, seed: int = 0) -> float:
        """Largest sampled difference quotient; raise if it exceeds ``k (1 + 1e-6)``."""
        rng = np.random.default_rng(seed)
        u = rng.uniform(-spread, spread, n)
        v = u + rng.normal(0, 1, n) * np.exp(rng.uniform(-12, 1, n))
        num = np.abs(self(0.0, None, u) - self(0.0, None, v))
        q = float(np.max(num / np.abs(u - v)))
        if q > self.lipschitz * (1 + 1e-6) + 1e-12:
            raise DomainError(f"sampled difference quotient {q:g} exceeds declared "
                              f"Lipschitz constant {self.lipschitz:g}")
        return q

    def to_dict(self) -> dict:
        if self.kind == "affine":
            return {"kind": "affine", "c0": self.c0, "c1": self.c1}
        return {"kind": "named", "name": self.name, "scale": self.scale, "offset": self.offset}


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, nonlinearities, initial data and noise model on one grid."""

    coeffs: CoefficientField
    f_spec: FunctionSpec
    h_spec: FunctionSpec
    u0: np.ndarray
    model: CorrelationModel
    grid: Grid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coeffs.d != self.grid.d or self.model.d != self.grid.d:
            raise GridMismatchError("problem components disagree on the dimension")
        object.__setattr__(self, "u0", self.grid.check(self.u0))
        self.f_spec.validate_lipschitz()
        self.h_spec.validate_lipschitz()

    @property
    def lipschitz(self) -> float:
        return max(self.f_spec.lipschitz, self.h_spec.lipschitz)

    def on_grid(self, grid: Grid, u0: np.ndarray | None = None) -> "ProblemSpec":
        """Same problem on another grid; ``u0`` is resampled when not given."""
        if u0 is None:
            if grid.N == self.grid.N:
                u0 = self.u0
            elif grid.N < self.grid.N:
                step = self.grid.N // grid.N
                u0 = self.u0[(slice(None, None, step),) * grid.d]
            else:
                raise DomainError("refining u0 needs an explicit array")
        return ProblemSpec(self.coeffs, self.f_spec, self.h_spec, u0, self.model, grid,
                           dict(self.meta))
