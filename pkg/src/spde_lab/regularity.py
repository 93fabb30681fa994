"""Structure functions and Holder-exponent estimates for sample paths."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import DomainError

AXES = ("time", "space")
MAX_BATCHES = 8


@dataclass(frozen=True)
class StructureFunction:
    """``S_p(l)``: mean of ``|u(. + l) - u(.)|^p`` along one axis.

    ``lags`` are physical (``l dx`` or ``l dt``); ``steps`` the same lags in
    lattice units. ``per_replica`` holds one row of ``S_p`` per replica and
    ``counts`` the number of increments averaged per lag (all replicas).
    """

    axis: str
    p_moment: int
    lags: np.ndarray
    steps: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    per_replica: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.lags) <= 0):
            raise DomainError("lags must be strictly increasing")
        if np.any(self.values < 0):
            raise DomainError("structure function values must be nonnegative")

    def to_rows(self) -> list[tuple]:
        return [(float(l), float(v), int(c)) for l, v, c in
                zip(self.lags, self.values, self.counts)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "value", "count"])
            for row in self.to_rows():
                w.writerow([repr(row[0]), repr(row[1]), row[2]])


@dataclass(frozen=True)
class ExponentEstimate:
    """Fitted exponent, its 95% half-width and the lags used."""

    gamma_hat: float
    ci_half_width: float
    fit_range: list
    r_squared: float
    raw_slope: float
    n_batches: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def dyadic_lags(max_lag: int) -> np.ndarray:
    """``1, 2, 4, ...`` up to ``max_lag`` inclusive."""
    if max_lag < 1:
        raise DomainError("max_lag must be at least 1")
    return 2 ** np.arange(int(np.log2(max_lag)) + 1)


def _as_replicas(fields) -> list[np.ndarray]:
    if hasattr(fields, "values") and hasattr(fields, "grid"):
        return [np.asarray(fields.values)]
    if isinstance(fields, np.ndarray):
        return [fields]
    return [np.asarray(f.values if hasattr(f, "values") else f) for f in fields]


def replica_structure(u: np.ndarray, axis: str, p_moment: int, steps,
                      time_index: int | None = None, t_start: int | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Per-lag mean of ``|increment|^p`` and increment counts for one replica.

    ``u`` has shape ``(n_t, *space)``. For ``space`` the increments are taken
    along every spatial axis of the slice ``u[time_index]`` (default: last
    level) with periodic wrap. For ``time`` they are taken at every lattice
    point between levels ``n`` and ``n + l`` for ``n >= t_start`` (default:
    half the horizon).
    """
    u = np.asarray(u, dtype=float)
    out = np.empty(len(steps))
    cnt = np.empty(len(steps), dtype=np.int64)
    if axis == "space":
        sl = u[-1 if time_index is None else time_index]
        for i, l in enumerate(steps):
            tot, n = 0.0, 0
            for ax in range(sl.ndim):
                inc = np.abs(np.roll(sl, -int(l), ax) - sl) ** p_moment
                tot += inc.sum()
                n += inc.size
            out[i], cnt[i] = tot / n, n
    elif axis == "time":
        n_t = u.shape[0]
        start = n_t // 2 if t_start is None else t_start
        for i, l in enumerate(steps):
            if start + l >= n_t:
                raise DomainError(f"time lag {l} exceeds the available window")
            inc = np.abs(u[start + l:] - u[start:n_t - l]) ** p_moment
            out[i], cnt[i] = inc.mean(), inc.size
    else:
        raise DomainError(f"axis must be one of {AXES}")
    return out, cnt


def structure_fn(fields, axis: str, p_moment: int = 2, lags=None, *, spacing: float = 1.0,
                 time_index: int | None = None, t_start: int | None = None
                 ) -> StructureFunction:
    """Structure function averaged over positions and replicas.

    Parameters
    ----------
    fields : SolutionField, ndarray or sequence of them
        One entry per replica, each of shape ``(n_t, *space)``.
    axis : {"time", "space"}
    p_moment : int
        Positive even moment.
    lags : sequence of int, optional
        Lattice lags; dyadic up to a quarter of the axis length by default.
    spacing : float
        ``dx`` or ``dt``; taken from the grid when fields carry one.
    """
    if p_moment < 2 or p_moment % 2:
        raise DomainError("p_moment must be a positive even integer")
    reps = _as_replicas(fields)
    if not reps:
        raise DomainError("no replicas to average")
    first = fields if hasattr(fields, "grid") else (
        fields[0] if not isinstance(fields, np.ndarray) else None)
    if first is not None and hasattr(first, "grid"):
        spacing = first.grid.dx if axis == "space" else first.grid.dt
    length = reps[0].shape[1] if axis == "space" else reps[0].shape[0] // 2
    steps = dyadic_lags(max(1, length // 4)) if lags is None else np.asarray(lags, dtype=int)
    if len(steps) == 0 or np.any(steps < 1):
        raise DomainError("lags must be positive")
    if axis == "space" and np.any(steps >= reps[0].shape[1]):
        raise DomainError("spatial lag exceeds the lattice")
    rows, counts = [], np.zeros(len(steps), dtype=np.int64)
    for u in reps:
        v, c = replica_structure(u, axis, p_moment, steps, time_index, t_start)
        rows.append(v)
        counts += c
    per = np.array(rows)
    return StructureFunction(axis, p_moment, steps * spacing, steps, per.mean(0), counts, per)


def structure_from_rows(axis: str, p_moment: int, steps, spacing: float, per_replica,
                        counts) -> StructureFunction:
    """Assemble a :class:`StructureFunction` from per-replica rows computed elsewhere."""
    per = np.asarray(per_replica, dtype=float)
    steps = np.asarray(steps, dtype=int)
    return StructureFunction(axis, p_moment, steps * spacing, steps, per.mean(0),
                             np.asarray(counts, dtype=np.int64), per)


def default_fit_range(n_lags: int) -> slice:
    """Drop the smallest lag and the top quarter of lags."""
    return slice(1, n_lags - n_lags // 4)


def _slope(lags, vals):
    # normalising by the first value makes the fit blind to a constant factor in S
    x, y = np.log(lags / lags[0]), np.log(vals / vals[0])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else 1.0
    return slope, icpt, r2, resid


def estimate_exponent(S: StructureFunction, fit_range: slice | None = None,
                      max_batches: int = MAX_BATCHES) -> ExponentEstimate:
    """Log-log slope of ``S_p`` divided by ``p`` with a replica-batched 95% CI.

    Replicas are split into up to ``max_batches`` contiguous batches; the
    exponent is re-fitted per batch and the half-width is the Student-t
    quantile times the standard error of the batch estimates. With a single
    replica the regression standard error of the slope is used instead.
    ``gamma_hat`` is clipped to ``[0, 1]``.
    """
    fr = default_fit_range(len(S.lags)) if fit_range is None else fit_range
    lags = S.lags[fr]
    vals = S.values[fr]
    if len(lags) < 4:
        raise DomainError(f"need at least 4 lags in the fit range, have {len(lags)}")
    if np.any(vals <= 0) or np.allclose(vals, vals[0], rtol=1e-14, atol=0):
        raise DomainError("degenerate structure function: values are constant or zero")
    p = S.p_moment
    slope, _, r2, resid = _slope(lags, vals)
    R = S.per_replica.shape[0]
    nb = min(max_batches, R)
    if nb >= 2:
        est = []
        for idx in np.array_split(np.arange(R), nb):
            bv = S.per_replica[idx][:, fr].mean(0)
            est.append(_slope(lags, bv)[0] / p)
        half = float(stats.t.ppf(0.975, nb - 1) * np.std(est, ddof=1) / np.sqrt(nb))
    else:
        x = np.log(lags)
        se = np.sqrt(np.sum(resid**2) / (len(x) - 2) / np.sum((x - x.mean()) ** 2))
        half = float(stats.t.ppf(0.975, len(x) - 2) * se / p)
        nb = 1
    gamma = float(np.clip(slope / p, 0.0, 1.0))
    return ExponentEstimate(gamma, half, [float(l) for l in lags], float(r2),
                            float(slope), nb)
