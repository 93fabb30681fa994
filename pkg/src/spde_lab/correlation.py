"""Spatial covariances, their spectral measures, and Bessel-kernel integrals.

Transform convention used everywhere in the package::

    F phi(xi) = int exp(-i <xi, x>) phi(x) dx,      mu = (2 pi)^(-d) F Gamma.

With it, white noise (``Gamma = delta_0``) has the flat spectral density
``(2 pi)^(-d)``, and ``int Gamma(dx) (f * g~)(x) = int mu(dxi) Ff(xi) conj(Fg(xi))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ConsistencyError, DomainError, QuadratureError

KINDS = ("riesz", "gaussian", "exponential", "white_noise")

# Relative agreement demanded between the physical and spectral routes.
ROUTE_RTOL = 1e-4
_EQ_TOL = 1e-12
# QAWS samples the smooth remainder at the interval ends; it is evaluated just inside.
_TINY = 1e-30


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class CorrelationModel:
    """An analytic pair (Gamma, mu) of a radial covariance and its spectral density.

    Use the named constructors :meth:`riesz`, :meth:`gaussian`,
    :meth:`exponential` and :meth:`white_noise`.

    * ``riesz``: ``Gamma(x) = |x|^(-riesz_alpha)`` with ``0 < riesz_alpha < d``.
    * ``gaussian``: the centred normal density with covariance ``sigma^2 I``.
    * ``exponential``: ``Gamma(x) = exp(-rate |x|)``.
    * ``white_noise``: ``Gamma = delta_0``.
    """

    kind: str
    d: int
    riesz_alpha: float | None = None
    sigma: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown correlation kind {self.kind!r}")
        if self.d not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.d}")
        if self.kind == "riesz":
            a = self.riesz_alpha
            if a is None or not (0 < a < self.d):
                raise DomainError(f"riesz requires 0 < alpha < d={self.d}, got {a}")
        elif self.kind == "gaussian":
            if self.sigma is None or not self.sigma > 0:
                raise DomainError("gaussian requires sigma > 0")
        elif self.kind == "exponential":
            if self.rate is None or not self.rate > 0:
                raise DomainError("exponential requires rate > 0")

    @classmethod
    def riesz(cls, alpha: float, d: int) -> "CorrelationModel":
        return cls("riesz", d, riesz_alpha=float(alpha))

    @classmethod
    def gaussian(cls, sigma: float, d: int) -> "CorrelationModel":
        return cls("gaussian", d, sigma=float(sigma))

    @classmethod
    def exponential(cls, rate: float, d: int) -> "CorrelationModel":
        return cls("exponential", d, rate=float(rate))

    @classmethod
    def white_noise(cls, d: int) -> "CorrelationModel":
        return cls("white_noise", d)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrelationModel":
        keys = {"kind", "d", "riesz_alpha", "sigma", "rate"}
        unknown = set(doc) - keys
        if unknown:
            raise DomainError(f"unknown model keys {sorted(unknown)}")
        return cls(**{k: doc[k] for k in keys if k in doc})

    @property
    def label(self) -> str:
        if self.kind == "riesz":
            return f"riesz(alpha={self.riesz_alpha:g})"
        if self.kind == "gaussian":
            return f"gaussian(sigma={self.sigma:g})"
        if self.kind == "exponential":
            return f"exponential(rate={self.rate:g})"
        return "white_noise"

    # Power-law exponents of the radial spectral density mu(k) ~ k^m.
    @property
    def spectral_origin_exponent(self) -> float:
        return self.riesz_alpha - self.d if self.kind == "riesz" else 0.0

    @property
    def spectral_tail_exponent(self) -> float:
        """Exponent m with mu(k) ~ k^m as k -> infinity (-inf for super-polynomial decay)."""
        if self.kind == "riesz":
            return self.riesz_alpha - self.d
        if self.kind == "white_noise":
            return 0.0
        if self.kind == "exponential":
            return -(self.d + 1.0)
        return -math.inf


# ---------------------------------------------------------------------------
# Gamma and mu
# ---------------------------------------------------------------------------

def gamma_density(model: CorrelationModel, r):
    """Vectorised Lebesgue density of Gamma at radius ``r`` (0 for white noise)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be nonnegative")
    if model.kind == "riesz":
        if np.any(r == 0):
            raise DomainError("riesz density is singular at r = 0; use a cell average")
        return r ** (-model.riesz_alpha)
    if model.kind == "gaussian":
        s2 = model.sigma**2
        return (2 * math.pi * s2) ** (-model.d / 2) * np.exp(-(r**2) / (2 * s2))
    if model.kind == "exponential":
        return np.exp(-model.rate * r)
    return np.zeros_like(r)


def gamma_value(model: CorrelationModel, r: float) -> tuple[float, bool]:
    """Density of Gamma at radius ``r`` and whether Gamma carries an atom at 0.

    Examples
    --------
    >>> gamma_value(CorrelationModel.exponential(1.0, 1), 1.0)
    (0.36787944117144233, False)
    """
    return float(gamma_density(model, r)), model.kind == "white_noise"


@lru_cache(maxsize=None)
def riesz_spectral_constant(alpha: float, d: int) -> tuple[float, float]:
    """Calibrate ``c`` in ``mu(k) = c k^(alpha - d)`` for ``Gamma = |x|^-alpha``.

    The constant is obtained by testing both sides of the Parseval identity
    ``int Gamma g = int mu Fg`` against the standard Gaussian ``g``, each
    side reduced to a one-dimensional radial quadrature. Returns the constant
    and the propagated relative quadrature error.
    """
    if not 0 < alpha < d:
        raise DomainError("riesz constant requires 0 < alpha < d")
    phys, e1 = radial_integral(lambda r: r ** (d - 1 - alpha) * math.exp(-r * r / 2),
                               d - 1 - alpha, None)
    spec, e2 = radial_integral(lambda k: k ** (alpha - 1) * math.exp(-k * k / 2),
                               alpha - 1, None)
    c = phys / ((2 * math.pi) ** (d / 2) * spec)
    return c, abs(e1 / phys) + abs(e2 / spec)


def riesz_spectral_constant_closed_form(alpha: float, d: int) -> float:
    """Textbook value of the Riesz spectral constant; used only as a cross-check."""
    return (2.0**-alpha * math.pi ** (-d / 2) * math.gamma((d - alpha) / 2)
            / math.gamma(alpha / 2))


def spectral_density(model: CorrelationModel, k):
    """Vectorised density of mu at radial frequency ``k``."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise DomainError("frequency must be nonnegative")
    d = model.d
    if model.kind == "white_noise":
        return np.full_like(k, (2 * math.pi) ** (-d))
    if model.kind == "gaussian":
        return (2 * math.pi) ** (-d) * np.exp(-(model.sigma**2) * k**2 / 2)
    if model.kind == "exponential":
        lam = model.rate
        if d == 1:
            return lam / (math.pi * (lam**2 + k**2))
        return lam / (2 * math.pi * (lam**2 + k**2) ** 1.5)
    if np.any(k == 0):
        raise DomainError("riesz spectral density is singular at k = 0")
    c, _ = riesz_spectral_constant(model.riesz_alpha, d)
    return c * k ** (model.riesz_alpha - d)


def spectral_value(model: CorrelationModel, k: float) -> float:
    """Density of the spectral measure mu at ``|xi| = k``."""
    return float(spectral_density(model, k))


# ---------------------------------------------------------------------------
# Bessel kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BesselKernelParams:
    """Order and dimension of the kernel ``R_{eta,d}`` of ``(1 - Delta)^(-eta/2)``."""

    eta: float
    d: int
    normalization: float = field(init=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if self.d < 1:
            raise DomainError("dimension must be positive")
        c = 1.0 / (math.pi ** (self.d / 2) * 2 ** ((self.d + self.eta - 2) / 2)
                   * math.gamma(self.eta / 2))
        object.__setattr__(self, "normalization", c)

    @property
    def order(self) -> float:
        """Order of the Bessel function, ``(d - eta)/2``."""
        return (self.d - self.eta) / 2


def bessel_k(nu: float, r):
    """Modified Bessel function of the second kind ``K_nu(r)`` for ``r > 0``.

    Thin wrapper over the AMOS routines exposed by :func:`scipy.special.kve`
    (power series for small argument, asymptotic/continued-fraction forms for
    large argument), evaluated in scaled form so that large arguments
    underflow cleanly to 0 rather than producing NaN.
    """
    r = np.asarray(r, dtype=float)
    with np.errstate(under="ignore"):
        return special.kve(nu, r) * np.exp(-r)


def bessel_kernel(params: BesselKernelParams, r, *, with_flag: bool = False):
    """Evaluate ``R_{eta,d}(r) = C r^((eta-d)/2) K_{(d-eta)/2}(r)``.

    Parameters
    ----------
    params : BesselKernelParams
    r : float or array
        Radial distance, strictly positive.
    with_flag : bool
        Also return a boolean array marking values that underflowed to 0.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("bessel kernel requires r > 0")
    nu = abs(params.order)
    with np.errstate(under="ignore", divide="ignore"):
        log_val = (math.log(params.normalization) + ((params.eta - params.d) / 2) * np.log(r)
                   + np.log(special.kve(nu, r)) - r)
        val = np.exp(log_val)
    val = np.where(np.isfinite(log_val), val, 0.0)
    if with_flag:
        return val, val == 0.0
    return val


def bessel_kernel_at_origin(params: BesselKernelParams) -> float:
    """``R_{eta,d}(0)``; finite only for ``eta > d``."""
    if params.eta <= params.d:
        return math.inf
    nu = (params.eta - params.d) / 2
    return params.normalization * 2 ** (nu - 1) * math.gamma(nu)


def bessel_origin_exponent(eta: float, d: int) -> tuple[float, bool]:
    """Small-r behaviour of R_{eta,d}: exponent and whether a log factor is present."""
    if abs(eta - d) < _EQ_TOL:
        return 0.0, True
    return min(eta - d, 0.0), False


# ---------------------------------------------------------------------------
# Radial quadrature
# ---------------------------------------------------------------------------

def radial_integral(f, origin_exponent: float, tail_exponent: float | None,
                    *, log_origin: bool = False, rtol: float = 1e-11,
                    check: float = 1e-8) -> tuple[float, float]:
    """Integrate ``f`` over ``(0, inf)`` given its power-law behaviour at both ends.

    ``f(r) ~ r^origin_exponent`` as r -> 0 and ``f(r) ~ r^tail_exponent`` as
    r -> inf (``None`` for exponential decay). The algebraic endpoint factors
    are handed to QUADPACK's QAWS weight so that only the smooth remainder is
    integrated adaptively. Both exponents must already be known to give a
    convergent integral.
    """
    if origin_exponent <= -1:
        raise DomainError("origin exponent makes the integral divergent")
    if tail_exponent is not None and tail_exponent >= -1:
        raise DomainError("tail exponent makes the integral divergent")

    opts = dict(epsabs=0.0, epsrel=rtol, limit=400, full_output=1)
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if log_origin or origin_exponent >= 0:
            res = integrate.quad(f, 0.0, 1.0, **opts)
        else:
            a = origin_exponent
            res = integrate.quad(lambda r: f(max(r, _TINY)) * max(r, _TINY) ** (-a), 0.0, 1.0,
                                 weight="alg", wvar=(a, 0.0), **opts)
        total += res[0]
        err += res[1]
        if tail_exponent is None:
            res = integrate.quad(f, 1.0, np.inf, **opts)
        else:
            b = -tail_exponent - 2.0
            res = integrate.quad(lambda t: f(1.0 / max(t, _TINY)) * max(t, _TINY) ** (-2.0 - b),
                                 0.0, 1.0,
                                 weight="alg", wvar=(b, 0.0), **opts)
        total += res[0]
        err += res[1]
    if not np.isfinite(total) or err > check * max(abs(total), 1e-300):
        raise QuadratureError(f"radial quadrature inaccurate: value={total:g}, err={err:g}")
    return total, err


# ---------------------------------------------------------------------------
# nu_{eta,d} and the Dalang integral
# ---------------------------------------------------------------------------

def _spectral_exponents(model: CorrelationModel, eta: float) -> tuple[float, float]:
    d = model.d
    origin = d - 1 + model.spectral_origin_exponent
    tail = d - 1 + model.spectral_tail_exponent - 2 * eta
    return origin, tail


def spectral_route_finite(model: CorrelationModel, eta: float) -> bool:
    """Analytic convergence test for ``int mu(dxi) (1+|xi|^2)^-eta``."""
    origin, tail = _spectral_exponents(model, eta)
    return origin > -1 and tail < -1


def dalang_integral(model: CorrelationModel, eta: float, d: int | None = None) -> float:
    """``int mu(dxi) / (1 + |xi|^2)^eta`` by radial quadrature, or ``inf``.

    Divergence is decided from the analytic exponents of the integrand, never
    from a quadrature blow-up.

    Examples
    --------
    >>> round(dalang_integral(CorrelationModel.white_noise(1), 1.0), 12)
    0.5
    """
    _check_dim(model, d)
    if not eta > 0:
        raise DomainError("eta must be positive")
    if not spectral_route_finite(model, eta):
        return math.inf
    origin, tail = _spectral_exponents(model, eta)
    dd = model.d
    area = sphere_area(dd)
    if model.kind == "riesz":
        c, _ = riesz_spectral_constant(model.riesz_alpha, dd)
        a = model.riesz_alpha
        val, _ = radial_integral(lambda k: k ** (a - 1) * (1 + k * k) ** (-eta), origin,
                                 tail)
        return area * c * val
    tail_arg = None if math.isinf(tail) else tail
    val, _ = radial_integral(
        lambda k: k ** (dd - 1) * float(spectral_density(model, k)) * (1 + k * k) ** (-eta),
        origin, tail_arg)
    return area * val


def physical_route_finite(model: CorrelationModel, eta: float) -> bool:
    """Analytic convergence test for ``int Gamma(dx) R_{2 eta,d}(x)``."""
    d = model.d
    if model.kind == "white_noise":
        return 2 * eta > d + _EQ_TOL
    if model.kind == "riesz":
        return model.riesz_alpha < 2 * eta - _EQ_TOL
    return True


def nu_physical(model: CorrelationModel, eta: float) -> float:
    """``int Gamma(dx) R_{2 eta,d}(x)`` by radial quadrature, or ``inf``."""
    if not physical_route_finite(model, eta):
        return math.inf
    d = model.d
    kern = BesselKernelParams(2 * eta, d)
    if model.kind == "white_noise":
        return bessel_kernel_at_origin(kern)
    k_exp, k_log = bessel_origin_exponent(2 * eta, d)
    area = sphere_area(d)
    if model.kind == "riesz":
        a = model.riesz_alpha
        val, _ = radial_integral(lambda r: r ** (d - 1 - a) * float(bessel_kernel(kern, r)),
                                 d - 1 - a + k_exp, None, log_origin=k_log)
        return area * val
    val, _ = radial_integral(
        lambda r: r ** (d - 1) * float(gamma_density(model, r)) * float(bessel_kernel(kern, r)),
        d - 1 + k_exp, None, log_origin=k_log)
    return area * val


def nu_eta_d(model: CorrelationModel, eta: float, d: int | None = None,
             *, return_routes: bool = False):
    """``nu_{eta,d} = ||R_{eta,d}||_H^2`` computed along two independent routes.

    The physical route integrates ``Gamma`` against ``R_{2 eta,d}``; the
    spectral route integrates ``mu`` against ``(1 + |xi|^2)^-eta``. The
    spectral value is returned. A :class:`ConsistencyError` is raised when
    the routes disagree by more than ``ROUTE_RTOL`` relative, or when one is
    finite and the other is not.
    """
    _check_dim(model, d)
    if not eta > 0:
        raise DomainError("eta must be positive")
    phys = nu_physical(model, eta)
    spec = dalang_integral(model, eta)
    if math.isinf(phys) != math.isinf(spec):
        raise ConsistencyError(
            f"nu routes disagree on finiteness for {model.label}, eta={eta}: {phys} vs {spec}")
    if not math.isinf(spec) and abs(phys - spec) > ROUTE_RTOL * abs(spec):
        raise ConsistencyError(
            f"nu routes disagree for {model.label}, eta={eta}: {phys!r} vs {spec!r}")
    if return_routes:
        return spec, phys, spec
    return spec


def _check_dim(model: CorrelationModel, d: int | None) -> None:
    if d is not None and d != model.d:
        raise DomainError(f"model is {model.d}-dimensional, asked for d={d}")


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

REGIMES = ("eta_below_half_d", "eta_equal_half_d", "eta_above_half_d")


@dataclass(frozen=True)
class AdmissibilityReport:
    """Regime and finiteness of ``nu_{eta,d}`` for one (model, eta, d).

    ``on_boundary`` marks Riesz cells sitting exactly on ``alpha = 2 eta``,
    where the strict inequality makes ``nu`` infinite.
    """

    regime: str
    nu_finite: bool
    nu_value: float
    dalang_value: float
    on_boundary: bool = False

    def to_dict(self) -> dict:
        """JSON record with the four report fields (``on_boundary`` is kept separate)."""
        return {
            "regime": self.regime,
            "nu_finite": self.nu_finite,
            "nu_value": _json_number(self.nu_value),
            "dalang_value": _json_number(self.dalang_value),
        }


def _json_number(x: float):
    return "inf" if math.isinf(x) else x


def classify_regime(eta: float, d: int) -> str:
    if abs(eta - d / 2) <= _EQ_TOL:
        return "eta_equal_half_d"
    return "eta_below_half_d" if eta < d / 2 else "eta_above_half_d"


def riesz_rule(alpha: float, eta: float, d: int) -> bool:
    """Closed-form criterion ``alpha in (0, 2 eta ^ d)`` for Riesz covariances."""
    return 0 < alpha and alpha < min(2 * eta, d) - _EQ_TOL


def admissibility(model: CorrelationModel, eta: float, d: int | None = None
                  ) -> AdmissibilityReport:
    """Classify the eta-regime and decide/compute ``nu_{eta,d}`` and the Dalang integral."""
    _check_dim(model, d)
    dd = model.d
    regime = classify_regime(eta, dd)
    boundary = False
    if model.kind == "riesz":
        finite = riesz_rule(model.riesz_alpha, eta, dd)
        boundary = abs(model.riesz_alpha - 2 * eta) <= _EQ_TOL
        if finite != spectral_route_finite(model, eta):
            raise ConsistencyError("closed-form Riesz rule disagrees with exponent test")
    else:
        finite = spectral_route_finite(model, eta)
    if finite:
        nu = nu_eta_d(model, eta)
        return AdmissibilityReport(regime, True, nu, nu, boundary)
    return AdmissibilityReport(regime, False, math.inf, math.inf, boundary)


def riesz_admissibility(alpha: float, eta: float, d: int) -> AdmissibilityReport:
    """Admissibility for a Riesz exponent that may fall outside ``(0, d)``.

    For ``alpha >= d`` the density ``|x|^-alpha`` is not locally integrable,
    Gamma is not a tempered measure, and ``nu`` is reported infinite.
    """
    if 0 < alpha < d:
        return admissibility(CorrelationModel.riesz(alpha, d), eta)
    return AdmissibilityReport(classify_regime(eta, d), False, math.inf, math.inf,
                               abs(alpha - 2 * eta) <= _EQ_TOL)
