"""Experiment configuration, orchestration and reports.

A configuration is a flat key-value document (TOML). :func:`load_config`
validates every key before anything is computed; :func:`run` dispatches on
``kind``, writes CSV/JSON/SVG/binary outputs into the output directory and
finishes with a ``manifest.json`` of sha256 checksums. Every JSON output
carries the configuration hash and the library version.

Replicas are mapped over an optional process pool; results are gathered in
replica order and reduced sequentially so outputs do not depend on the
number of workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .coefficients import CoefficientField
from .correlation import (KINDS, CorrelationModel, dalang_integral, nu_eta_d, riesz_admissibility,
                          riesz_rule)
from .errors import ConfigError, HypothesisError, SpdeLabError
from .grid import Grid
from .hilbert import build_cons
from .mild import QUADRATURES, SolutionField, solve_mild_detailed
from .noise import METHODS, NoiseSampler, SamplerConfig, coarsen, cons_expansion_check
from .problem import NONLINEARITIES, FunctionSpec, ProblemSpec
from .regularity import (default_fit_range, dyadic_lags, estimate_exponent, replica_structure,
                         structure_from_rows)
from .weak import SchemeConfig, solve_weak

EXPERIMENTS = ("admissibility_table", "noise_validation", "solve", "equivalence", "regularity")
SOLVERS = ("mild", "weak", "both")
COEFFICIENTS = ("constant", "divergence")
INITIAL_DATA = ("zero", "bump")


def library_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0+unknown"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters; see the README for the meaning of each key."""

    kind: str
    model: str = "gaussian"
    alpha: float = 1.0
    sigma: float = 0.5
    rate: float = 1.0
    d: int = 1
    N: int = 128
    L: float = 8.0
    T: float = 0.5
    n_steps: int = 256
    a: float = 0.5
    coefficients: str = "constant"
    coeff_eps: float = 0.25
    f_c0: float = 0.0
    f_c1: float = 0.0
    h_c0: float = 1.0
    h_c1: float = 0.0
    h_name: str = ""
    h_scale: float = 1.0
    u0: str = "zero"
    solver: str = "both"
    quadrature: str = "left_point"
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 50
    method: str = "spectral"
    replicas: int = 8
    seed: int = 0
    out: str = "spde_lab_out"
    workers: int = 1
    alphas: tuple = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
    etas: tuple = (0.3, 0.5, 0.6, 0.75, 0.9)
    dims: tuple = (1, 2)
    lags: tuple = (0, 1, 2, 4, 8)
    levels: int = 3
    p_moment: int = 2
    space_max_lag: int = 0
    time_max_lag: int = 0
    save_fields: bool = False

    # -- construction ------------------------------------------------------

    @classmethod
    def from_mapping(cls, doc: dict, **overrides) -> "ExperimentConfig":
        """Build and validate; ``overrides`` with value ``None`` are ignored."""
        doc = dict(doc)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if "kind" not in doc:
            raise ConfigError("configuration must set 'kind'")
        vals = {}
        for name, value in doc.items():
            vals[name] = _coerce(name, value, known[name].default)
        cfg = cls(**vals)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.kind in EXPERIMENTS, f"kind must be one of {EXPERIMENTS}")
        need(self.model in KINDS, f"model must be one of {KINDS}")
        need(self.d in (1, 2), "d must be 1 or 2")
        need(self.N >= 4 and self.N % 2 == 0, "N must be an even integer >= 4")
        need(self.L > 0 and self.T > 0, "L and T must be positive")
        need(self.n_steps >= 1, "n_steps must be positive")
        need(self.a > 0, "a must be positive")
        need(self.coefficients in COEFFICIENTS, f"coefficients must be one of {COEFFICIENTS}")
        need(0 <= self.coeff_eps < 1, "coeff_eps must lie in [0, 1)")
        need(self.u0 in INITIAL_DATA, f"u0 must be one of {INITIAL_DATA}")
        need(self.solver in SOLVERS, f"solver must be one of {SOLVERS}")
        need(self.quadrature in QUADRATURES, f"quadrature must be one of {QUADRATURES}")
        need(0 <= self.theta <= 1, "theta must lie in [0, 1]")
        need(self.tol > 0 and self.max_iter >= 1, "tol and max_iter must be positive")
        need(self.method in METHODS, f"method must be one of {METHODS}")
        need(self.replicas >= 1 and self.workers >= 1, "replicas and workers must be >= 1")
        need(0 <= self.seed < 2**63, "seed must be a nonnegative 63-bit integer")
        need(self.h_name == "" or self.h_name in NONLINEARITIES,
             f"h_name must be empty or one of {sorted(NONLINEARITIES)}")
        need(self.levels >= 2, "levels must be at least 2")
        need(self.p_moment >= 2 and self.p_moment % 2 == 0, "p_moment must be even")
        need(all(x > 0 for x in self.alphas) and all(x > 0 for x in self.etas),
             "alphas and etas must be positive")
        need(all(x in (1, 2) for x in self.dims), "dims must contain only 1 and 2")
        need(all(x >= 0 for x in self.lags), "lags must be nonnegative")
        if self.kind == "noise_validation":
            need(max(self.lags) < self.N, "lags must be smaller than N")
            need(self.replicas >= 2, "noise_validation needs at least two replicas")
        if self.kind == "equivalence":
            need(self.N % 2 ** (self.levels - 1) == 0
                 and self.n_steps % 2 ** (self.levels - 1) == 0,
                 "N and n_steps must be divisible by 2^(levels-1)")
            need(self.N // 2 ** (self.levels - 1) >= 4, "coarsest level needs N >= 4")
        if self.kind == "regularity":
            for name, lags, limit in zip(("space", "time"), regularity_lags(self),
                                         (self.N, self.n_steps // 2)):
                fr = default_fit_range(len(lags))
                need(fr.stop - fr.start >= 4,
                     f"{name} lags {[int(x) for x in lags]} leave fewer than 4 lags in the fit range")
                need(lags[-1] < limit, f"{name} lag {lags[-1]} exceeds the available window")
        if self.kind != "admissibility_table":
            try:
                self.build_model()
                self.grid()
            except SpdeLabError as exc:
                raise ConfigError(str(exc)) from exc

    # -- derived objects ---------------------------------------------------

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}

    def content_dict(self) -> dict:
        """Configuration without the output directory and worker count, which
        change no result."""
        return {k: v for k, v in self.to_dict().items() if k not in ("out", "workers")}

    def config_hash(self) -> str:
        """sha256 of the canonical :meth:`content_dict`."""
        return hashlib.sha256(json.dumps(self.content_dict(), sort_keys=True).encode()
                              ).hexdigest()

    def build_model(self) -> CorrelationModel:
        if self.model == "riesz":
            return CorrelationModel.riesz(self.alpha, self.d)
        if self.model == "gaussian":
            return CorrelationModel.gaussian(self.sigma, self.d)
        if self.model == "exponential":
            return CorrelationModel.exponential(self.rate, self.d)
        return CorrelationModel.white_noise(self.d)

    def grid(self) -> Grid:
        return Grid(self.d, self.N, self.L, self.T / self.n_steps, self.n_steps)

    def build_coefficients(self) -> CoefficientField:
        d, a, eps, L = self.d, self.a, self.coeff_eps, self.L
        if self.coefficients == "constant":
            return CoefficientField.constant(a * np.eye(d))
        k = 2 * np.pi / L

        def scalar(coords):
            return a * (1 + eps * sum(np.cos(k * c) for c in coords) / d)

        def grad(coords):
            return np.stack([-a * eps * k / d * np.sin(k * c) for c in coords])

        return CoefficientField.divergence_form(d, scalar, grad, (a * (1 - eps), a * (1 + eps)))

    def build_problem(self, grid: Grid | None = None) -> ProblemSpec:
        g = self.grid() if grid is None else grid
        if self.u0 == "zero":
            u0 = np.zeros(g.shape)
        else:
            u0 = np.exp(sum(np.cos(2 * np.pi * c / g.L) for c in g.coords))
        h = (FunctionSpec.named(self.h_name, self.h_scale, self.h_c0) if self.h_name
             else FunctionSpec.affine(self.h_c0, self.h_c1))
        return ProblemSpec(self.build_coefficients(), FunctionSpec.affine(self.f_c0, self.f_c1),
                           h, u0, self.build_model(), g, {"config_hash": self.config_hash()})


def _coerce(name: str, value, default):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or not value:
                raise TypeError
            kind = type(default[0])
            return tuple(kind(v) if kind is float else _coerce(name, v, default[0])
                         for v in value)
        if not isinstance(value, str):
            raise TypeError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name!r}: {value!r}") from None


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a TOML configuration and apply command-line overrides."""
    import tomli

    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return ExperimentConfig.from_mapping(doc, **overrides)


# ---------------------------------------------------------------------------
# Replica dispatch
# ---------------------------------------------------------------------------


def _map_replicas(fn, cfg: ExperimentConfig, indices) -> list:
    """``[fn(cfg, r) for r in indices]``, optionally across processes, in order."""
    indices = list(indices)
    if cfg.workers == 1 or len(indices) == 1:
        return [fn(cfg, r) for r in indices]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, [cfg] * len(indices), indices))


@lru_cache(maxsize=4)
def _sampler(cfg: ExperimentConfig) -> NoiseSampler:
    return NoiseSampler(cfg.grid(), cfg.build_model(), SamplerConfig(cfg.method))


def replica_seed(cfg: ExperimentConfig, r: int) -> int:
    return cfg.seed + r


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


def minimal_eta(model: CorrelationModel) -> float:
    """Infimum of the ``eta`` with a finite Dalang integral (tail condition only)."""
    return max(0.0, (model.spectral_tail_exponent + model.d) / 2)


def check_dynamics(problem: ProblemSpec) -> None:
    """Ellipticity and, with noise, a finite Dalang integral at order 1."""
    try:
        problem.coeffs.check_ellipticity(problem.grid)
    except SpdeLabError as exc:
        raise HypothesisError(f"ellipticity certificate fails: {exc}") from exc
    if not problem.h_spec.is_zero and math.isinf(dalang_integral(problem.model, 1.0)):
        raise HypothesisError(f"Dalang integral diverges for {problem.model.label}")


def equivalence_hypotheses(problem: ProblemSpec) -> float:
    """Check the mild-weak equivalence preconditions; return a witnessing ``eta``.

    Requires a self-adjoint operator with deterministic coefficients and a
    finite ``int mu / (1 + |xi|^2)^eta`` for some ``eta`` in ``(1/2, 1)``.
    """
    c = problem.coeffs
    if not c.self_adjoint:
        raise HypothesisError("the operator is not self-adjoint (nonzero drift that is not "
                              "the divergence of a)")
    if c.random:
        raise HypothesisError("equivalence needs deterministic coefficients")
    check_dynamics(problem)
    eta_min = minimal_eta(problem.model)
    if eta_min >= 1:
        raise HypothesisError(f"no eta in (1/2, 1) has a finite Dalang integral "
                              f"(infimum {eta_min:g})")
    eta = max(0.75, (eta_min + 1) / 2)
    if math.isinf(dalang_integral(problem.model, eta)):
        raise HypothesisError(f"Dalang integral diverges at eta = {eta:g}")
    return eta


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    """Outcome of :func:`run`: exit status, output directory, files and summary."""

    status: int
    out_dir: Path
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    manifest: Path | None = None


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "library_version": library_version(),
            "numpy_version": np.__version__, "kind": cfg.kind, "seed": cfg.seed,
            "replicas": cfg.replicas, "schema": io.SCHEMA_VERSION}


def admissibility_table(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    """Riesz admissibility over the ``alphas x etas x dims`` grid."""
    header = ["model", "alpha", "eta", "d", "regime", "nu_finite", "nu_value", "dalang_value",
              "on_boundary", "closed_form_finite", "route_rel_diff"]
    rows, mismatches, worst = [], 0, 0.0
    for d in cfg.dims:
        for alpha in cfg.alphas:
            for eta in cfg.etas:
                rep = riesz_admissibility(alpha, eta, d)
                rule = riesz_rule(alpha, eta, d)
                rel = float("nan")
                if rep.nu_finite:
                    spec, phys, _ = nu_eta_d(CorrelationModel.riesz(alpha, d), eta,
                                             return_routes=True)
                    rel = abs(spec - phys) / abs(spec)
                    worst = max(worst, rel)
                mismatches += rule != rep.nu_finite
                rows.append(["riesz", alpha, eta, d, rep.regime, rep.nu_finite,
                             float(rep.nu_value), float(rep.dalang_value), rep.on_boundary,
                             rule, rel])
    files = [io.write_csv(out / "admissibility.csv", header, rows)]
    summary = {"cells": len(rows), "rule_mismatches": mismatches,
               "max_route_rel_diff": worst}
    return files, summary


def noise_validation(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    """Empirical lag covariances of one increment row per replica against the target."""
    from .noise import empirical_covariance

    g1 = cfg.grid().with_time(n_steps=1)
    sampler = NoiseSampler(g1, cfg.build_model(), SamplerConfig(cfg.method))
    rows = np.stack([sampler.row(replica_seed(cfg, r), 0) for r in range(cfg.replicas)])
    lags = list(cfg.lags)
    est, err = empirical_covariance(rows, lags)
    cov = sampler.H.covariance_of_values() * g1.dt
    idx = [(lag,) + (0,) * (cfg.d - 1) for lag in lags]
    target = np.array([cov[i] for i in idx])
    z = (est - target) / err
    files = [io.write_csv(out / "noise_covariance.csv",
                          ["lag", "target", "estimate", "stderr", "z"],
                          [[lag, t, e, s, zz] for lag, t, e, s, zz in
                           zip(lags, target, est, err, z)])]
    H = sampler.H
    cons = build_cons(H)
    rng = np.random.default_rng(cfg.seed)
    phi = cons.synthesize(rng.standard_normal(len(cons)))
    nz = sampler.increments(cfg.seed)
    resid = cons_expansion_check(nz, phi, H, 1, cons)
    summary = {"max_abs_z": float(np.max(np.abs(z))), "within_3_stderr": bool(np.all(
        np.abs(z) <= 3)), "cons_residual": resid, "clipped_mass": H.clipped_mass}
    return files, summary


def _solve_replica(cfg: ExperimentConfig, r: int) -> dict:
    problem = cfg.build_problem()
    nz = _sampler(cfg).increments(replica_seed(cfg, r))
    res = {}
    if cfg.solver in ("mild", "both"):
        mr = solve_mild_detailed(problem, nz, cfg.tol, cfg.max_iter,
                                 stochastic_quadrature=cfg.quadrature)
        res["mild"] = mr.solution
        res["iterations"] = mr.iterations
    if cfg.solver in ("weak", "both"):
        res["weak"] = solve_weak(problem, nz, SchemeConfig(cfg.theta))
    return res


def solve(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    """Run the requested solver(s) for every replica."""
    problem = cfg.build_problem()
    check_dynamics(problem)
    results = _map_replicas(_solve_replica, cfg, range(cfg.replicas))
    header = ["replica", "seed", "solver", "l2_norm", "final_mean", "final_var", "iterations"]
    rows, files = [], []
    for r, res in enumerate(results):
        for name in ("mild", "weak"):
            if name not in res:
                continue
            sol: SolutionField = res[name]
            last = sol.values[-1]
            rows.append([r, replica_seed(cfg, r), name, sol.norm(2), float(last.mean()),
                         float(last.var()), res.get("iterations", 0) if name == "mild" else 0])
            if cfg.save_fields:
                files.append(io.write_solution(out / f"{name}_{r:04d}.bin", sol))
                files.append(out / f"{name}_{r:04d}.bin.json")
    files.append(io.write_csv(out / "solve.csv", header, rows))
    summary = {"runs": len(rows)}
    if cfg.solver == "both":
        diffs = [res["mild"].grid.spacetime_lp_norm(res["mild"].values - res["weak"].values)
                 for res in results]
        summary["mean_mild_weak_l2"] = float(np.mean(diffs))
    return files, summary


def _equivalence_replica(cfg: ExperimentConfig, r: int) -> list:
    """Mild-weak ``L2`` distance per level for one coupled noise realisation."""
    fine = _sampler(cfg).increments(replica_seed(cfg, r))
    dists = []
    for lev in range(cfg.levels):
        nz = coarsen(fine, cfg.levels - 1 - lev)
        dists.append(_level_distance(cfg, nz))
    return dists


def _level_distance(cfg: ExperimentConfig, nz) -> float:
    p = cfg.build_problem(nz.grid)
    um = solve_mild_detailed(p, nz, cfg.tol, cfg.max_iter,
                             stochastic_quadrature=cfg.quadrature).solution.values
    uw = solve_weak(p, nz, SchemeConfig(cfg.theta)).values
    return nz.grid.spacetime_lp_norm(um - uw, 2)


def compare_mild_weak(cfg: ExperimentConfig) -> dict:
    """Coupled-noise mild-weak distances over ``levels`` joint refinements.

    The finest noise is sampled once per replica and coarsened with
    :func:`spde_lab.noise.coarsen` onto each coarser level (``dx`` and ``dt``
    doubled jointly), so all levels see the same driving noise. The
    replica-averaged distance is ``sqrt(mean_r ||u^M - u^W||_2^2)``. A
    deterministic companion run (``f = h = 0``, ``u0 = bump``) reports
    ``C = distance / (dx^2 + dt)`` per level.

    Raises
    ------
    HypothesisError
        Non-self-adjoint or random operator, or no ``eta`` in ``(1/2, 1)``
        with a finite Dalang integral.
    """
    eta = equivalence_hypotheses(cfg.build_problem())
    per = np.array(_map_replicas(_equivalence_replica, cfg, range(cfg.replicas)))
    sq = per ** 2
    dist = np.sqrt(sq.mean(0))
    se = (sq.std(0, ddof=1) / np.sqrt(len(per)) / (2 * dist) if len(per) > 1
          else np.full(cfg.levels, np.nan))
    levels = []
    fine = cfg.grid()
    for lev in range(cfg.levels):
        g = fine
        for _ in range(cfg.levels - 1 - lev):
            g = Grid(g.d, g.N // 2, g.L, 2 * g.dt, g.n_steps // 2)
        levels.append(g)
    ratios = dist[:-1] / dist[1:]
    det_cfg = dataclasses.replace(cfg, f_c0=0.0, f_c1=0.0, h_c0=0.0, h_c1=0.0, h_name="",
                                  u0="bump")
    fine_nz = _sampler(det_cfg).increments(cfg.seed)
    det = []
    for lev, g in enumerate(levels):
        dd = _level_distance(det_cfg, coarsen(fine_nz, cfg.levels - 1 - lev))
        det.append((dd, dd / (g.dx ** 2 + g.dt)))
    return {"eta": eta, "grids": levels, "distance": dist, "stderr": se, "ratios": ratios,
            "per_replica": per, "deterministic": det}


def equivalence(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    res = compare_mild_weak(cfg)
    rows = []
    for lev, g in enumerate(res["grids"]):
        ratio = res["ratios"][lev - 1] if lev else float("nan")
        dd, C = res["deterministic"][lev]
        rows.append([lev, g.N, g.dx, g.dt, float(res["distance"][lev]),
                     float(res["stderr"][lev]), float(ratio), dd, C])
    files = [io.write_csv(out / "equivalence.csv",
                          ["level", "N", "dx", "dt", "distance", "stderr", "ratio",
                           "deterministic_distance", "deterministic_C"], rows)]
    dx = [g.dx for g in res["grids"]]
    files.append(_plot_lines(out / "equivalence.svg", dx,
                             {"coupled noise": res["distance"],
                              "f = h = 0": [d for d, _ in res["deterministic"]]},
                             "dx", "mild-weak distance"))
    C = [c for _, c in res["deterministic"]]
    dist = res["distance"]
    summary = {"witness_eta": res["eta"], "distances": dist, "ratios": res["ratios"],
               "monotone": bool(np.all(np.diff(dist) < 0)),
               "min_ratio": float(np.min(res["ratios"])),
               "deterministic_C": C, "deterministic_C_max": float(max(C))}
    return files, summary


def _regularity_replica(cfg: ExperimentConfig, r: int):
    problem = cfg.build_problem()
    nz = _sampler(cfg).increments(replica_seed(cfg, r))
    u = solve_mild_detailed(problem, nz, cfg.tol, cfg.max_iter,
                            stochastic_quadrature=cfg.quadrature).solution.values
    s_lags, t_lags = regularity_lags(cfg)
    out = {}
    for p in sorted({cfg.p_moment, 4}):
        out[("space", p)] = replica_structure(u, "space", p, s_lags)
        out[("time", p)] = replica_structure(u, "time", p, t_lags)
    return out


def regularity_lags(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Dyadic spatial lags up to ``N/2`` and temporal lags up to ``n_steps/4`` by default."""
    s_max = cfg.space_max_lag or cfg.N // 2
    t_max = cfg.time_max_lag or cfg.n_steps // 4
    return dyadic_lags(s_max), dyadic_lags(t_max)


def regularity_study(cfg: ExperimentConfig) -> dict:
    """Structure functions and exponent estimates in space and time.

    Returns estimates for ``p_moment`` (and ``p = 4`` as a consistency
    check), the structure functions, the targets ``1 - eta_min`` (space) and
    ``(1 - eta_min)/2`` (time), and the estimate with the largest lag removed.
    """
    problem = cfg.build_problem()
    check_dynamics(problem)
    if problem.h_spec.is_zero:
        raise HypothesisError("a regularity study needs a nonzero noise coefficient")
    eta_min = minimal_eta(problem.model)
    if problem.model.kind == "riesz":
        eta_min = problem.model.riesz_alpha / 2
    reps = _map_replicas(_regularity_replica, cfg, range(cfg.replicas))
    s_lags, t_lags = regularity_lags(cfg)
    g = cfg.grid()
    out = {"eta_min": eta_min, "targets": {"space": 1 - eta_min, "time": (1 - eta_min) / 2},
           "structure": {}, "estimate": {}, "drop_largest": {}}
    for axis, lags, spacing in (("space", s_lags, g.dx), ("time", t_lags, g.dt)):
        for p in sorted({cfg.p_moment, 4}):
            rows = [rep[(axis, p)][0] for rep in reps]
            counts = sum(rep[(axis, p)][1] for rep in reps)
            S = structure_from_rows(axis, p, lags, spacing, rows, counts)
            out["structure"][(axis, p)] = S
            out["estimate"][(axis, p)] = estimate_exponent(S)
            fr = default_fit_range(len(lags))
            out["drop_largest"][(axis, p)] = (
                estimate_exponent(S, slice(fr.start, fr.stop - 1))
                if fr.stop - 1 - fr.start >= 4 else None)
    return out


def regularity(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    res = regularity_study(cfg)
    files, summary = [], {"eta_min": res["eta_min"], "targets": res["targets"],
                          "p_moment": cfg.p_moment, "fit_policy":
                          "drop the smallest lag and the top quarter of lags"}
    curves = {}
    for (axis, p), S in res["structure"].items():
        files.append(io.write_csv(out / f"structure_{axis}_p{p}.csv", ["lag", "value", "count"],
                                  S.to_rows()))
        est = res["estimate"][(axis, p)]
        key = axis if p == cfg.p_moment else f"{axis}_p{p}"
        drop = res["drop_largest"][(axis, p)]
        target = res["targets"][axis]
        upper = (1 - res["eta_min"]) / (2 if axis == "time" else 1)
        summary[key] = dict(est.to_dict(), target=target,
                            drop_largest_gamma_hat=drop.gamma_hat if drop else None,
                            positive=est.gamma_hat > 0,
                            open_range_not_rejected=est.gamma_hat - est.ci_half_width < upper)
        if p == cfg.p_moment:
            curves[axis] = (S, est)
    files.append(_plot_structure(out / "structure.svg", curves))
    return files, summary


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "spde-lab"
    return plt


def _save_svg(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _plot_structure(path: Path, curves: dict) -> Path:
    """``log S_p`` against ``log lag`` with the fitted line over the fit range."""
    plt = _figure()
    fig, axes = plt.subplots(1, len(curves), figsize=(4.5 * len(curves), 3.6), squeeze=False)
    for ax, (axis, (S, est)) in zip(axes[0], sorted(curves.items())):
        ax.loglog(S.lags, S.values, "o", label=f"S_{S.p_moment}")
        fl = np.asarray(est.fit_range)
        lv = S.values[np.isin(S.lags, fl)]
        icpt = np.mean(np.log(lv) - est.raw_slope * np.log(fl))
        ax.loglog(fl, np.exp(icpt) * fl ** est.raw_slope, "-",
                  label=f"gamma = {est.gamma_hat:.3f} +/- {est.ci_half_width:.3f}")
        ax.set_xlabel(f"{axis} lag")
        ax.set_ylabel("structure function")
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)
    return path


def _plot_lines(path: Path, x, series: dict, xlabel: str, ylabel: str) -> Path:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    for name, y in series.items():
        ax.loglog(x, y, "o-", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_RUNNERS = {"admissibility_table": admissibility_table, "noise_validation": noise_validation,
            "solve": solve, "equivalence": equivalence, "regularity": regularity}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def emit_report(out: Path, cfg: ExperimentConfig, summary: dict, status: str = "ok") -> Path:
    """``summary.json`` with provenance fields."""
    return io.write_json(out / "summary.json", dict(_provenance(cfg), status=status,
                                                    config=cfg.content_dict(), results=summary))


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute one experiment and write its manifest.

    Unmet hypotheses give exit status 2 with ``refusal.json``; numerical
    failures give status 3 with ``diagnostics.json``. The manifest lists
    every file written in either case.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files, summary = _RUNNERS[cfg.kind](cfg, out)
        files.append(emit_report(out, cfg, summary))
        status = EXIT_OK
    except HypothesisError as exc:
        summary = {"error": type(exc).__name__, "message": str(exc)}
        files = [io.write_json(out / "refusal.json", dict(_provenance(cfg), **summary))]
        status = EXIT_CONFIG
    except SpdeLabError as exc:
        summary = {"error": type(exc).__name__, "message": str(exc),
                   "history": getattr(exc, "history", [])}
        files = [io.write_json(out / "diagnostics.json", dict(_provenance(cfg), **summary))]
        status = EXIT_NUMERICAL
    manifest = io.write_manifest(out, files, dict(_provenance(cfg), status=status))
    return RunResult(status, out, files, summary, manifest)
