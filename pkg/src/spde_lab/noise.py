"""Space-time Gaussian noise increments, white in time and homogeneous in space.

Random stream contract (``STREAM_VERSION = "philox4x64-v1"``): the standard
normals of time row ``step`` come from
``numpy.random.Generator(numpy.random.Philox(key=seed, counter=step << 192))``
drawn in C order over the lattice. Row ``step`` therefore depends only on
``(seed, step)``, and a lattice value only on ``(seed, step, cell)``, so any
subset of rows can be regenerated bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlation import CorrelationModel
from .errors import ConsistencyError, DomainError, GridMismatchError
from .grid import Grid
from .hilbert import CLIP_BUDGET, Cons, HilbertStructure, build_cons

STREAM_VERSION = "philox4x64-v1"
METHODS = ("spectral", "circulant_embedding")
_SEED_MAX = 2**64


def row_generator(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator for one time row."""
    if not 0 <= int(seed) < _SEED_MAX:
        raise DomainError("seed must be a 64-bit unsigned integer")
    if step < 0:
        raise DomainError("step must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed), counter=int(step) << 192))


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling method and the clipped-spectrum budget."""

    method: str = "spectral"
    clip_budget: float = CLIP_BUDGET

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown sampling method {self.method!r}")


@dataclass(frozen=True)
class NoiseIncrements:
    """Sampled increments ``Delta F(t_i, x_j)``.

    ``data`` has shape ``(n_steps, *grid.shape)``; row ``i`` is the increment
    over ``[t_i, t_{i+1})``, with covariance ``dt * C(x - y)``.
    """

    data: np.ndarray
    grid: Grid
    model: CorrelationModel
    seed: int
    method: str = "spectral"
    version: str = STREAM_VERSION
    clipped_mass: float = 0.0

    def __post_init__(self):
        if self.data.shape != (self.grid.n_steps,) + self.grid.shape:
            raise GridMismatchError(
                f"noise data {self.data.shape} does not match grid {self.grid}")

    @property
    def flat(self) -> np.ndarray:
        """View of shape ``(n_steps, N^d)``."""
        return self.data.reshape(self.grid.n_steps, -1)

    def header(self) -> dict:
        g = self.grid
        return {"d": g.d, "N": g.N, "L": g.L, "dt": g.dt, "n_steps": g.n_steps,
                "model": self.model.to_dict(), "seed": int(self.seed),
                "method": self.method, "version": self.version}


class NoiseSampler:
    """Precomputed square-root spectrum for one (grid, model) pair.

    Parameters
    ----------
    grid : Grid
    model : CorrelationModel
    config : SamplerConfig, optional
    H : HilbertStructure, optional
        Reused when given; otherwise built from ``(grid, model)``.
    """

    def __init__(self, grid: Grid, model: CorrelationModel,
                 config: SamplerConfig | None = None, H: HilbertStructure | None = None):
        self.grid = grid
        self.model = model
        self.config = config or SamplerConfig()
        if H is None:
            H = HilbertStructure.from_model(grid, model, clip_budget=self.config.clip_budget)
        elif not H.grid.same_lattice(grid) or H.model != model:
            raise GridMismatchError("Hilbert structure belongs to another grid or model")
        elif H.clipped_mass > self.config.clip_budget:
            raise ConsistencyError("clipped spectral mass exceeds the sampler budget")
        self.H = H
        # fft(C) = S / dx^d; scaling by sqrt(dt) turns unit rows into increments
        chat = H.spectral_weights / grid.cell_volume
        self._amp_full = np.sqrt(grid.dt * chat)
        half = grid.shape[:-1] + (grid.N // 2 + 1,)
        self._amp_half = np.ascontiguousarray(self._amp_full[..., :half[-1]])

    def row(self, seed: int, step: int) -> np.ndarray:
        """Increment row ``step`` for ``seed``."""
        if self.config.method == "spectral":
            eps = row_generator(seed, step).standard_normal(self.grid.shape)
            return np.fft.irfftn(self._amp_half * np.fft.rfftn(eps), s=self.grid.shape,
                                  axes=tuple(range(self.grid.d)))
        pair = self._embedding_pair(seed, step // 2)
        return pair[step % 2]

    def _embedding_pair(self, seed: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        # Complex white noise Z on the circulant torus: fft(amp * Z)/sqrt(M) has
        # independent real and imaginary parts, each with covariance dt*C.
        gen = row_generator(seed, j)
        z = gen.standard_normal((2,) + self.grid.shape)
        y = np.fft.fftn(self._amp_full * (z[0] + 1j * z[1])) / np.sqrt(self.grid.size)
        return y.real, y.imag

    def sample(self, seed: int, n_steps: int | None = None, start: int = 0) -> np.ndarray:
        """Rows ``start, ..., start + n_steps - 1`` stacked along axis 0."""
        n = self.grid.n_steps if n_steps is None else n_steps
        out = np.empty((n,) + self.grid.shape)
        if self.config.method == "spectral":
            for i in range(n):
                out[i] = self.row(seed, start + i)
            return out
        cache: dict[int, tuple] = {}
        for i in range(n):
            s = start + i
            if s // 2 not in cache:
                cache.clear()
                cache[s // 2] = self._embedding_pair(seed, s // 2)
            out[i] = cache[s // 2][s % 2]
        return out

    def increments(self, seed: int) -> NoiseIncrements:
        return NoiseIncrements(self.sample(seed), self.grid, self.model, int(seed),
                               self.config.method, STREAM_VERSION, self.H.clipped_mass)


def sample_noise(grid: Grid, model: CorrelationModel, seed: int,
                 method: str = "spectral", *, H: HilbertStructure | None = None
                 ) -> NoiseIncrements:
    """Deterministic noise increments for ``(grid, model, seed, method)``.

    Examples
    --------
    >>> g = Grid(1, 8, 1.0, dt=0.1, n_steps=2)
    >>> a = sample_noise(g, CorrelationModel.white_noise(1), seed=3)
    >>> b = sample_noise(g, CorrelationModel.white_noise(1), seed=3)
    >>> bool((a.data == b.data).all())
    True
    """
    return NoiseSampler(grid, model, SamplerConfig(method), H).increments(seed)


def pair_with_test_function(noise: NoiseIncrements, phi, t_index: int) -> float:
    """``F(t, phi) = sum_{s < t_index} sum_x phi(x) Delta F(s, x) dx^d`` with ``t = t_index dt``."""
    g = noise.grid
    if not 0 <= t_index <= g.n_steps:
        raise IndexError(f"t_index {t_index} outside [0, {g.n_steps}]")
    phi = g.check(phi)
    total = noise.data[:t_index].sum(axis=0)
    return float(np.sum(phi * total) * g.cell_volume)


def brownian_motions(noise: NoiseIncrements, cons: Cons, t_index: int) -> np.ndarray:
    """``W^k(t) = F(t, e_k)`` for every retained CONS element."""
    g = noise.grid
    if not 0 <= t_index <= g.n_steps:
        raise IndexError(f"t_index {t_index} outside [0, {g.n_steps}]")
    return cons.l2_coefficients(noise.data[:t_index].sum(axis=0))


def cons_expansion_check(noise: NoiseIncrements, phi, H: HilbertStructure, t_index: int,
                         cons: Cons | None = None) -> float:
    """``|sum_k <phi, e_k>_H W^k(t) - F(t, phi)|`` for the finite CONS."""
    if not H.grid.same_lattice(noise.grid):
        raise GridMismatchError("noise and Hilbert structure live on different lattices")
    cons = build_cons(H) if cons is None else cons
    series = float(np.dot(cons.coefficients(phi), brownian_motions(noise, cons, t_index)))
    return abs(series - pair_with_test_function(noise, phi, t_index))


def empirical_covariance(rows: np.ndarray, lags) -> tuple[np.ndarray, np.ndarray]:
    """Lag covariances along axis 1 of ``rows`` and their standard errors.

    Each row (leading axis) is one independent replica. Per replica the
    products ``X(x) X(x + lag)`` are averaged over all positions; the standard
    error is the across-replica standard deviation over ``sqrt(R)``.
    """
    rows = np.asarray(rows, dtype=float)
    R = rows.shape[0]
    if R < 2:
        raise DomainError("need at least two replicas")
    axes = tuple(range(1, rows.ndim))
    est, err = [], []
    for lag in lags:
        shifted = np.roll(rows, -int(lag), axis=1)
        per = np.mean(rows * shifted, axis=axes)
        est.append(per.mean())
        err.append(per.std(ddof=1) / np.sqrt(R))
    return np.array(est), np.array(err)


def coarsen(noise: NoiseIncrements, levels: int = 1) -> NoiseIncrements:
    """Couple fine increments onto a lattice with ``N / 2^levels`` points and ``2^levels dt``.

    Time: consecutive steps are summed, which is exact for increments of a
    martingale. Space: each coarse value is the (1/4, 1/2, 1/4) weighted
    average (per axis) of the fine values centred on the coarse point, so
    coarse and fine lattices stay aligned and total mass ``sum dF dx^d`` is
    preserved.
    """
    if levels == 0:
        return noise
    g = noise.grid
    if g.N % 2 or g.n_steps % 2:
        raise DomainError("cannot coarsen an odd lattice")
    x = noise.data.reshape((g.n_steps // 2, 2) + g.shape).sum(axis=1)
    for ax in range(1, g.d + 1):
        x = 0.25 * np.roll(x, 1, ax) + 0.5 * x + 0.25 * np.roll(x, -1, ax)
    x = x[(slice(None),) + (slice(None, None, 2),) * g.d]
    cg = Grid(g.d, g.N // 2, g.L, 2 * g.dt, g.n_steps // 2)
    out = NoiseIncrements(np.ascontiguousarray(x), cg, noise.model, noise.seed,
                          noise.method, noise.version, noise.clipped_mass)
    return coarsen(out, levels - 1)
