"""Discrete reproducing space of the noise on a periodic lattice.

The continuum inner product ``<f, g>_H = int Gamma(dx) (f * g~)(x)`` is
realised on the torus by a folded covariance ``C`` sampled at lattice
offsets. Its circulant Gram operator is diagonal in Fourier space with
eigenvalues ``S = Re(fft(C)) dx^d``, so for lattice functions::

    <f, g>_H = (dx^d / N^d) * sum_k S[k] fft(f)[k] conj(fft(g)[k]).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .correlation import (BesselKernelParams, CorrelationModel, admissibility,
                          bessel_kernel, gamma_density)
from .errors import AdmissibilityError, ConsistencyError, DomainError, GridMismatchError
from .grid import Grid

CLIP_BUDGET = 1e-6


# ---------------------------------------------------------------------------
# Folding
# ---------------------------------------------------------------------------

def _image_shifts(grid: Grid, reach: float) -> np.ndarray:
    m = int(math.ceil(reach / grid.L))
    rng = np.arange(-m, m + 1)
    return np.stack(np.meshgrid(*([rng] * grid.d), indexing="ij"), -1).reshape(-1, grid.d)


def _periodized(grid: Grid, radial, reach: float) -> np.ndarray:
    offs = np.stack(grid.offsets, -1)
    out = np.zeros(grid.shape)
    for n in _image_shifts(grid, reach):
        r = np.sqrt(np.sum((offs + grid.L * n) ** 2, axis=-1))
        out += radial(r)
    return out


def riesz_origin_cell_average(alpha: float, d: int, h: float) -> float:
    """Mean of ``|x|^-alpha`` over the cube of side ``h`` centred at 0."""
    if d == 1:
        return (h / 2) ** (-alpha) / (1 - alpha)
    # polar coordinates over one of eight congruent triangles of the square
    ang, _ = integrate.quad(lambda t: math.cos(t) ** (alpha - 2), 0.0, math.pi / 4,
                            epsabs=0, epsrel=1e-13)
    return 8.0 / (2 - alpha) * (h / 2) ** (2 - alpha) * ang / h**2


def fold_covariance(grid: Grid, model: CorrelationModel) -> tuple[np.ndarray, float]:
    """Torus covariance ``C`` at lattice offsets and the folded tail fraction.

    * gaussian and exponential: the periodic image sum of Gamma sampled at
      lattice points; the tail fraction is the share of Gamma's mass lying
      outside the fundamental cell (an upper bound in d=2 for exponential).
    * white noise: ``C[0] = dx^-d`` and zero elsewhere (tail fraction 0).
    * riesz: the image sum diverges, so the kernel is truncated and shifted,
      ``C(z) = |z|^-alpha - (L/2)^-alpha`` for ``|z| < L/2`` and 0 beyond;
      ``C[0]`` is the exact cell average. The tail fraction is reported as NaN
      because Gamma has infinite mass.
    """
    if grid.d != model.d:
        raise GridMismatchError("model and grid dimensions differ")
    h, L, d = grid.dx, grid.L, grid.d
    if model.kind == "white_noise":
        C = np.zeros(grid.shape)
        C[(0,) * d] = 1.0 / grid.cell_volume
        return C, 0.0
    if model.kind == "gaussian":
        s = model.sigma
        C = _periodized(grid, lambda r: gamma_density(model, r), 10 * s)
        tail = 1.0 - special.erf(L / (2 * math.sqrt(2) * s)) ** d
        return C, float(tail)
    if model.kind == "exponential":
        lam = model.rate
        C = _periodized(grid, lambda r: np.exp(-lam * r), 40.0 / lam)
        x = lam * L / 2
        tail = math.exp(-x) if d == 1 else (1 + x) * math.exp(-x)
        return C, float(tail)
    a = model.riesz_alpha
    r = grid.offset_radius
    cut = (L / 2) ** (-a)
    with np.errstate(divide="ignore"):
        C = np.where(r < L / 2, r ** (-a) - cut, 0.0)
    C[(0,) * d] = riesz_origin_cell_average(a, d, h) - cut
    return C, math.nan


# ---------------------------------------------------------------------------
# Hilbert structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HilbertStructure:
    """Folded covariance, Gram spectrum and clipping diagnostics on one grid.

    Build with :meth:`from_model`. Instances are immutable.
    """

    grid: Grid
    model: CorrelationModel
    correlation_on_torus: np.ndarray
    spectral_weights: np.ndarray
    clipped_mass: float
    tail_fraction: float
    raw_weights: np.ndarray = field(repr=False)

    @classmethod
    def from_model(cls, grid: Grid, model: CorrelationModel,
                   clip_budget: float | None = CLIP_BUDGET) -> "HilbertStructure":
        """Fold Gamma onto ``grid`` and diagonalise its Gram operator.

        Negative eigenvalues are clipped to 0. ``clipped_mass`` is their total
        absolute value relative to the sum of ``|S|``; a
        :class:`ConsistencyError` is raised when it exceeds ``clip_budget``
        (pass ``None`` to skip the check).
        """
        C, tail = fold_covariance(grid, model)
        raw = np.real(np.fft.fftn(C)) * grid.cell_volume
        neg = raw < 0
        total = float(np.sum(np.abs(raw)))
        clipped = float(np.sum(-raw[neg]) / total) if total > 0 else 0.0
        if clip_budget is not None and clipped > clip_budget:
            raise ConsistencyError(
                f"clipped spectral mass {clipped:.3e} exceeds budget {clip_budget:.1e}")
        S = np.where(neg, 0.0, raw)
        for arr in (C, S, raw):
            arr.setflags(write=False)
        return cls(grid, model, C, S, clipped, tail, raw)

    @property
    def spectral_total(self) -> float:
        return float(np.sum(self.spectral_weights))

    def covariance_of_values(self) -> np.ndarray:
        """Torus covariance consistent with the clipped spectrum, ``ifft(S)/dx^d``."""
        return np.real(np.fft.ifftn(self.spectral_weights)) / self.grid.cell_volume

    def inner(self, f, g) -> float:
        f = self.grid.check(f)
        g = self.grid.check(g)
        fh = np.fft.fftn(f)
        gh = fh if g is f else np.fft.fftn(g)
        val = np.sum(self.spectral_weights * fh * np.conj(gh))
        return float(np.real(val)) * self.grid.cell_volume / self.grid.size

    def norm_sq_rows(self, rows: np.ndarray) -> np.ndarray:
        """``||row||_H^2`` for a stack of lattice functions (leading axis = rows)."""
        axes = tuple(range(1, rows.ndim))
        fh = np.fft.fftn(rows, axes=axes)
        w = self.spectral_weights * self.grid.cell_volume / self.grid.size
        return np.sum(w * (fh.real**2 + fh.imag**2), axis=axes)

    def dump_spectrum_csv(self, path) -> None:
        """Write ``index, wavenumber..., S, raw`` rows for debugging."""
        ks = [k.ravel() for k in self.grid.wavenumbers]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *[f"k{i}" for i in range(self.grid.d)], "S", "raw"])
            for i, (s, r) in enumerate(zip(self.spectral_weights.ravel(),
                                           self.raw_weights.ravel())):
                w.writerow([i, *[repr(float(k[i])) for k in ks], repr(float(s)),
                            repr(float(r))])


def h_inner(f, g, H: HilbertStructure) -> float:
    """Discrete ``<f, g>_H = sum_z C(z) (f * g~)(z) dx^d`` evaluated by FFT."""
    return H.inner(f, g)


# ---------------------------------------------------------------------------
# CONS
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cons:
    """Real Fourier CONS of the retained span, orthonormal in ``<., .>_H``.

    Each retained mode ``i`` is ``sqrt(weight_norm / S_k) * cos(k.x)`` or
    ``... * sin(k.x)`` with ``k = index[i]``; ``weight_norm`` is ``2/L^d`` for
    paired frequencies and ``1/L^d`` for self-conjugate ones. Functions are
    generated on demand; :meth:`matrix` materialises all of them.
    """

    H: HilbertStructure
    index: np.ndarray          # (n, d) integer frequency multi-indices
    is_sine: np.ndarray        # (n,) bool
    weights: np.ndarray        # (n,) S_k of each retained mode
    dropped_mass: float
    drop_tol: float

    def __len__(self) -> int:
        return len(self.weights)

    @cached_property
    def _flat(self) -> np.ndarray:
        return np.ravel_multi_index(tuple((self.index % self.H.grid.N).T), self.H.grid.shape)

    @cached_property
    def _scale(self) -> np.ndarray:
        g = self.H.grid
        selfconj = np.all((2 * self.index) % g.N == 0, axis=1)
        norm = np.where(selfconj, 1.0, 2.0) / g.L**g.d
        return np.sqrt(norm / self.weights)

    def function(self, i: int) -> np.ndarray:
        g = self.H.grid
        phase = sum(2 * np.pi * self.index[i, a] * g.coords[a] / g.L for a in range(g.d))
        wave = np.sin(phase) if self.is_sine[i] else np.cos(phase)
        return self._scale[i] * wave

    def matrix(self) -> np.ndarray:
        """All retained functions as rows of a ``(n, *shape)`` array."""
        return np.stack([self.function(i) for i in range(len(self))])

    def l2_coefficients(self, f) -> np.ndarray:
        """Lattice L2 pairings ``sum_x f(x) e_i(x) dx^d`` for every retained mode."""
        g = self.H.grid
        fh = np.fft.fftn(g.check(f)).ravel()[self._flat] * g.cell_volume
        return self._scale * np.where(self.is_sine, -fh.imag, fh.real)

    def coefficients(self, f) -> np.ndarray:
        """``<f, e_i>_H`` for every retained mode, by a single FFT."""
        return self.weights * self.l2_coefficients(f)

    def synthesize(self, coef) -> np.ndarray:
        """``sum_i coef[i] e_i`` as a lattice function."""
        g = self.H.grid
        spec = np.zeros(g.size, dtype=complex)
        c = np.asarray(coef, dtype=float) * self._scale
        # cos(k.x) -> N^d/2 at +-k, sin(k.x) -> N^d/(2i) at +k and -N^d/(2i) at -k
        neg = np.ravel_multi_index(tuple((-self.index % g.N).T), g.shape)
        half = np.where(self.is_sine, -0.5j, 0.5) * c * g.size
        np.add.at(spec, self._flat, half)
        np.add.at(spec, neg, np.where(self.is_sine, -half, half))
        return np.real(np.fft.ifftn(spec.reshape(g.shape)))

    def v_fields(self) -> np.ndarray:
        """``v_i = S_k e_i`` for every retained mode (rows)."""
        return self.weights[:, None] * self.matrix().reshape(len(self), -1)


def _half_spectrum(N: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Frequency indices covering each conjugate pair once; and self-conjugacy flags."""
    idx = np.stack(np.meshgrid(*([np.arange(N)] * d), indexing="ij"), -1).reshape(-1, d)
    neg = (-idx) % N
    keys = np.ravel_multi_index(tuple(idx.T), (N,) * d)
    nkeys = np.ravel_multi_index(tuple(neg.T), (N,) * d)
    keep = keys <= nkeys
    return idx[keep], (keys == nkeys)[keep]


def build_cons(H: HilbertStructure, drop_tol: float = 0.0) -> Cons:
    """Eigenbasis of the circulant Gram operator, normalised in ``<., .>_H``.

    Modes with ``S_k <= drop_tol * max(S)`` (and always those with ``S_k = 0``)
    are dropped; ``dropped_mass`` is the sum of their ``S_k`` counted with
    multiplicity over the full lattice, relative to the total.
    """
    S = H.spectral_weights
    smax = float(S.max())
    if smax <= 0:
        raise DomainError("spectrum is identically zero; the covariance is degenerate")
    half, selfconj = _half_spectrum(H.grid.N, H.grid.d)
    Sk = S[tuple(half.T)]
    keep = Sk > drop_tol * smax
    mult = np.where(selfconj, 1.0, 2.0)
    dropped = float(np.sum((Sk * mult)[~keep]) / np.sum(S))
    rows_idx, rows_sin, rows_w = [], [], []
    for k, sc, s in zip(half[keep], selfconj[keep], Sk[keep]):
        rows_idx.append(k)
        rows_sin.append(False)
        rows_w.append(s)
        if not sc:
            rows_idx.append(k)
            rows_sin.append(True)
            rows_w.append(s)
    return Cons(H, np.array(rows_idx, dtype=int).reshape(-1, H.grid.d),
                np.array(rows_sin, dtype=bool), np.array(rows_w), dropped, drop_tol)


def v_field(e_k, H: HilbertStructure) -> np.ndarray:
    """``v(x) = sum_y C(y) e_k(x - y) dx^d``, the lattice form of ``Gamma * e_k``."""
    e = H.grid.check(e_k)
    return np.real(np.fft.ifftn(H.spectral_weights * np.fft.fftn(e)))


# ---------------------------------------------------------------------------
# Sobolev scale
# ---------------------------------------------------------------------------

class SobolevNormCalculator:
    """Bessel-potential multipliers ``(1 + |xi|^2)^(n/2)`` cached per order."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.multiplier_cache: dict[float, np.ndarray] = {}

    def multiplier(self, n: float) -> np.ndarray:
        key = float(n)
        if key not in self.multiplier_cache:
            m = (1.0 + self.grid.wavenumber_sq) ** (key / 2)
            m.setflags(write=False)
            self.multiplier_cache[key] = m
        return self.multiplier_cache[key]

    def potential(self, u, n: float) -> np.ndarray:
        u = self.grid.check(u)
        if n == 0:
            return u.copy()
        return np.real(np.fft.ifftn(self.multiplier(n) * np.fft.fftn(u)))

    def norm(self, u, n: float, p: float = 2.0) -> float:
        if p < 1:
            raise DomainError("p must be at least 1")
        return self.grid.lp_norm(self.potential(u, n), p)


def bessel_potential(u, n: float, grid: Grid) -> np.ndarray:
    """Apply ``(1 - Delta)^(n/2)`` on the torus as a Fourier multiplier."""
    return SobolevNormCalculator(grid).potential(u, n)


def sobolev_norm(u, n: float, p: float, grid: Grid) -> float:
    """Discrete ``||u||_{n,p} = ||(1 - Delta)^(n/2) u||_p`` with cell weights."""
    return SobolevNormCalculator(grid).norm(u, n, p)


def stencil_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of ``-Delta_h`` for the ``2d+1``-point stencil."""
    return sum(4.0 / grid.dx**2 * np.sin(k * grid.dx / 2) ** 2 for k in grid.wavenumbers)


def stencil_laplacian(u, grid: Grid) -> np.ndarray:
    u = grid.check(u)
    out = -2.0 * grid.d * u
    for ax in range(grid.d):
        out = out + np.roll(u, 1, ax) + np.roll(u, -1, ax)
    return out / grid.dx**2


def lemma11_ratio(psi, alpha: float, q: float, grid: Grid) -> float:
    """``||(1-Delta)^alpha psi||_q / (||Delta_h psi||_q + ||psi||_q)``.

    The numerator uses the spectral multiplier; ``Delta_h`` is the standard
    second-difference stencil.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not 1 < q < math.inf:
        raise DomainError("q must lie in (1, inf)")
    psi = grid.check(psi)
    den = grid.lp_norm(stencil_laplacian(psi, grid), q) + grid.lp_norm(psi, q)
    if den == 0:
        raise DomainError("psi is identically zero")
    return grid.lp_norm(bessel_potential(psi, 2 * alpha, grid), q) / den


def calibrate_lemma11_constant(grid: Grid, alpha: float, q: float, n_samples: int = 200,
                               seed: int = 0, decay: float = 2.0) -> float:
    """Largest :func:`lemma11_ratio` over random smooth fields (descriptive constant)."""
    rng = np.random.default_rng(seed)
    damp = (1.0 + grid.wavenumber_sq) ** (-decay / 2)
    best = 0.0
    for _ in range(n_samples):
        psi = np.real(np.fft.ifftn(damp * np.fft.fftn(rng.standard_normal(grid.shape))))
        best = max(best, lemma11_ratio(psi, alpha, q, grid))
    return best


# ---------------------------------------------------------------------------
# Bessel kernel on the lattice and h_bar
# ---------------------------------------------------------------------------

def _cell_average_2d(fun, cx: float, cy: float, h: float, nodes: int = 24) -> float:
    x, w = np.polynomial.legendre.leggauss(nodes)
    X, Y = np.meshgrid(cx + x * h / 2, cy + x * h / 2, indexing="ij")
    return float(np.sum(np.outer(w, w) * fun(np.hypot(X, Y))) / 4)


def _origin_cell_average(params: BesselKernelParams, h: float) -> float:
    exp = params.eta - 1  # R(r) r^(d-1) ~ r^(eta-1) near 0 in every dimension
    kern = lambda r: float(bessel_kernel(params, max(r, 1e-300)))
    opts = dict(epsabs=0, epsrel=1e-11, limit=200)

    def radial(rmax):
        if exp < 0:
            v, _ = integrate.quad(lambda r: kern(r) * r ** (params.d - 1) * r ** (-exp),
                                  0.0, rmax, weight="alg", wvar=(exp, 0.0), **opts)
        else:
            v, _ = integrate.quad(lambda r: kern(r) * r ** (params.d - 1), 0.0, rmax, **opts)
        return v

    if params.d == 1:
        return 2 * radial(h / 2) / h
    ang, _ = integrate.quad(lambda t: radial(h / (2 * math.cos(t))), 0.0, math.pi / 4, **opts)
    return 8 * ang / h**2


def lattice_bessel_kernel(grid: Grid, eta: float, near_cells: int = 2) -> np.ndarray:
    """``R_{eta,d}`` at lattice offsets, periodised, and cell-averaged near 0.

    Cells whose centre lies within ``near_cells`` lattice steps of the origin
    (per axis) carry the exact mean of the kernel over the cell; all other
    entries are point values. The result is the lattice convolution kernel
    used for ``(1 - Delta)^(-eta/2)`` in :func:`h_bar`.
    """
    params = BesselKernelParams(eta, grid.d)
    h = grid.dx

    def point(r):
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = bessel_kernel(params, r[pos])
        return out

    R = _periodized(grid, point, 40.0)
    near_cells = min(near_cells, (grid.N - 1) // 2)
    j = np.arange(-near_cells, near_cells + 1)
    for idx in np.stack(np.meshgrid(*([j] * grid.d), indexing="ij"), -1).reshape(-1, grid.d):
        centre = idx * h
        if not np.any(idx):
            val, point_val = _origin_cell_average(params, h), 0.0
        else:
            point_val = float(bessel_kernel(params, float(np.linalg.norm(centre))))
            if grid.d == 1:
                c = abs(centre[0])
                val = integrate.quad(lambda r: float(bessel_kernel(params, r)), c - h / 2,
                                     c + h / 2, epsabs=0, epsrel=1e-12)[0] / h
            else:
                val = _cell_average_2d(lambda r: bessel_kernel(params, r), centre[0],
                                       centre[1], h)
        # swap the central point value for the cell mean; distant images stay
        R[tuple(idx % grid.N)] += val - point_val
    return R


def _require_nu(H: HilbertStructure, eta: float) -> float:
    rep = admissibility(H.model, eta)
    if not rep.nu_finite:
        raise AdmissibilityError(f"nu_(eta={eta},d={H.grid.d}) is infinite for {H.model.label}")
    return rep.nu_value


def _shifted_rows(grid: Grid, K: np.ndarray, h: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Rows ``K(x - .) h(.)`` for the flat target indices ``rows``."""
    targets = np.stack(np.unravel_index(rows, grid.shape), -1)
    src = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), -1)
    diff = (targets[:, None, :] - src[None, :, :]) % grid.N
    flatK = K.ravel()[np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), grid.shape)]
    return (flatK * h.ravel()[None, :]).reshape((len(rows),) + grid.shape)


def h_bar(h, eta: float, H: HilbertStructure, *, kernel: np.ndarray | None = None,
          chunk: int = 256) -> np.ndarray:
    """``h_bar(x) = ||R_{eta,d}(x - .) h||_H`` at every lattice point.

    Raises :class:`AdmissibilityError` when ``nu_{eta,d}`` is infinite for
    the model of ``H``.
    """
    _require_nu(H, eta)
    g = H.grid
    h = g.check(h)
    K = lattice_bessel_kernel(g, eta) if kernel is None else kernel
    out = np.empty(g.size)
    for start in range(0, g.size, chunk):
        rows = np.arange(start, min(start + chunk, g.size))
        out[rows] = H.norm_sq_rows(_shifted_rows(g, K, h, rows))
    return np.sqrt(np.maximum(out, 0.0)).reshape(g.shape)


def cons_sequence_norm(h, eta: float, H: HilbertStructure, cons: Cons, p: float,
                       *, kernel: np.ndarray | None = None) -> float:
    """``|| (sum_k |(1-Delta)^(-eta/2)(v_k h)|^2)^(1/2) ||_p`` over the finite CONS."""
    g = H.grid
    h = g.check(h)
    K = lattice_bessel_kernel(g, eta) if kernel is None else kernel
    Kh = np.fft.fftn(K) * g.cell_volume
    acc = np.zeros(g.shape)
    for i in range(len(cons)):
        vk = cons.weights[i] * cons.function(i)
        gk = np.real(np.fft.ifftn(Kh * np.fft.fftn(vk * h)))
        acc += gk**2
    return g.lp_norm(np.sqrt(acc), p)


def discrete_nu(H: HilbertStructure, eta: float, *, kernel: np.ndarray | None = None) -> float:
    """``||R_lat||_H^2``, the lattice counterpart of ``nu_{eta,d}``."""
    K = lattice_bessel_kernel(H.grid, eta) if kernel is None else kernel
    return H.inner(K, K)


@dataclass(frozen=True)
class Lemma3Result:
    ratio: float           # ||h_bar||_p / ||h||_p
    bound: float           # nu^(1/2) of the continuum model
    slack: float           # bound - ratio
    hbar_norm: float
    h_norm: float


def lemma3_check(h, eta: float, H: HilbertStructure, p: float,
                 *, kernel: np.ndarray | None = None) -> Lemma3Result:
    """Compare ``||h_bar||_p`` with ``nu_{eta,d}^(1/2) ||h||_p``."""
    nu = _require_nu(H, eta)
    hb = h_bar(h, eta, H, kernel=kernel)
    a = H.grid.lp_norm(hb, p)
    b = H.grid.lp_norm(h, p)
    ratio = a / b
    return Lemma3Result(ratio, math.sqrt(nu), math.sqrt(nu) - ratio, a, b)
