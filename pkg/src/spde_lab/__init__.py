"""Numerics laboratory for parabolic SPDEs with spatially homogeneous Gaussian noise."""

from .coefficients import CoefficientField
from .correlation import (AdmissibilityReport, BesselKernelParams, CorrelationModel, admissibility,
                          bessel_kernel, dalang_integral, gamma_density, nu_eta_d,
                          riesz_admissibility, spectral_density)
from .errors import (AdmissibilityError, ConfigError, ConsistencyError, ConvergenceError,
                     DomainError, GridMismatchError, HypothesisError, QuadratureError,
                     SpdeLabError, StabilityError)
from .grid import Grid
from .hilbert import (Cons, HilbertStructure, bessel_potential, build_cons, h_bar, h_inner,
                      lemma3_check, sobolev_norm)
from .mild import SolutionField, apply_T, picard_residual, solve_mild
from .noise import (NoiseIncrements, NoiseSampler, SamplerConfig, coarsen, cons_expansion_check,
                    pair_with_test_function, sample_noise)
from .problem import FunctionSpec, ProblemSpec
from .regularity import ExponentEstimate, StructureFunction, estimate_exponent, structure_fn
from .weak import SchemeConfig, solve_weak, time_dependent_pairing_residual, weak_pairing_residual

__version__ = "0.1.0"
