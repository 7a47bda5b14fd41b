"""Parabolic Hölder norms, interpolation inequality checks and invariant
suites.

Space-time samples live in a :class:`TimeSeries`: an array of shape
``(n_times, *components, *grid)`` plus the time stamps.  All sampled
estimators are lower bounds of their continuum suprema and are seeded, so
identical inputs give bit-identical reports.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .grid import Grid, MetricField, TensorField

BLOCK = 1024
STRATA = ("near", "far", "time")


@dataclass
class TimeSeries:
    """Time-indexed grid data: ``data[k]`` is the field at ``times[k]``."""

    grid: Grid
    times: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape[0] != self.times.size:
            raise UsageError("one data slice per time stamp is required")
        if self.data.shape[-self.grid.dim:] != self.grid.sizes:
            raise UsageError("trailing data axes must match the grid")
        if np.any(np.diff(self.times) <= 0):
            raise UsageError("times must increase strictly")

    @classmethod
    def from_fields(cls, times, fields):
        fields = list(fields)
        return cls(fields[0].grid, times, np.stack([f.data for f in fields]))

    @property
    def n_times(self):
        return self.times.size

    @property
    def component_shape(self):
        return self.data.shape[1 : self.data.ndim - self.grid.dim]

    def flat_components(self):
        """``(n_times, n_components, *grid)`` view."""
        return self.data.reshape((self.n_times, -1) + self.grid.sizes)

    def __sub__(self, other):
        return TimeSeries(self.grid, self.times, self.data - other.data)


# ----------------------------------------------------------------------
# distance


def parabolic_distance(p1, p2, order_2m: int, periods=None) -> float:
    """``max(|x1 - x2|, |t1 - t2|^{1/2m})`` with the periodic spatial distance.

    ``p1`` and ``p2`` are ``(x, t)`` pairs; ``periods`` (one per axis) enables
    wrapping, otherwise the plain Euclidean distance is used.
    """
    (x1, t1), (x2, t2) = p1, p2
    return float(parabolic_distances(np.atleast_2d(x1), np.atleast_1d(t1),
                                     np.atleast_2d(x2), np.atleast_1d(t2),
                                     order_2m, periods)[0])


def periodic_displacement(dx, periods):
    if periods is None:
        return dx
    L = np.asarray(periods, dtype=float)
    return dx - L * np.round(dx / L)


def parabolic_distances(x1, t1, x2, t2, order_2m, periods=None):
    """Vectorised :func:`parabolic_distance` over rows."""
    dx = periodic_displacement(np.asarray(x1, float) - np.asarray(x2, float), periods)
    dspace = np.sqrt(np.sum(dx * dx, axis=-1))
    dtime = np.abs(np.asarray(t1, float) - np.asarray(t2, float)) ** (1.0 / order_2m)
    return np.maximum(dspace, dtime)


# ----------------------------------------------------------------------
# norms


def ck_norm(arr, grid: Grid, k: int) -> float:
    """``sum_{i <= k} max_{|beta| = i} sup |D^beta arr|`` with spectral
    derivatives, over all leading components."""
    spectral = grid.with_scheme("spectral")
    spec = spectral._diff_spectrum(arr)
    total = float(np.max(np.abs(arr)))
    for i in range(1, k + 1):
        best = 0.0
        for beta in _multi_indices(grid.dim, i):
            d = spectral.irfft(spec * spectral.derivative_symbol(beta))
            best = max(best, float(np.max(np.abs(d))))
        total += best
    return total


def _multi_indices(dim, order):
    for combo in itertools.combinations_with_replacement(range(dim), order):
        beta = [0] * dim
        for a in combo:
            beta[a] += 1
        yield tuple(beta)


def top_derivatives(series: TimeSeries, order: int) -> TimeSeries:
    """Stack of all ``D^beta`` with ``|beta| = order`` as extra components."""
    spectral = series.grid.with_scheme("spectral")
    flat = series.flat_components()
    spec = spectral._diff_spectrum(flat)
    parts = [spectral.irfft(spec * spectral.derivative_symbol(b))
             for b in _multi_indices(series.grid.dim, order)]
    return TimeSeries(series.grid, series.times, np.concatenate(parts, axis=1))


def sup_norm(series: TimeSeries) -> float:
    return float(np.max(np.abs(series.data)))


def time_derivative_norm(series: TimeSeries) -> float:
    """Largest slope between consecutive slices."""
    if series.n_times < 2:
        return 0.0
    dv = np.abs(np.diff(series.data, axis=0))
    dt = np.diff(series.times).reshape((-1,) + (1,) * (series.data.ndim - 1))
    return float(np.max(dv / dt))


def gradient_norm(series: TimeSeries) -> float:
    """Largest Euclidean norm of the spectral gradient of any component."""
    spectral = series.grid.with_scheme("spectral")
    flat = series.flat_components()
    sq = np.zeros(flat.shape)
    for _, d in spectral.iter_derivatives(flat):
        sq += d * d
    return float(np.sqrt(np.max(sq)))


# ----------------------------------------------------------------------
# sampled Hölder seminorm


def _stratum_pairs(series: TimeSeries, stratum: int, count: int, seed: int):
    """Index pairs for one stratum, generated block by block so a larger
    count always extends a smaller one."""
    grid = series.grid
    nt = series.n_times
    sizes = np.array(grid.sizes)
    out_a, out_b = [], []
    blocks = -(-count // BLOCK)
    for blk in range(blocks):
        rng = np.random.default_rng([seed, stratum, blk])
        a_x = rng.integers(0, sizes, size=(BLOCK, grid.dim))
        a_t = rng.integers(0, nt, size=BLOCK)
        if STRATA[stratum] == "near":
            off = rng.integers(-3, 4, size=(BLOCK, grid.dim))
            b_x = (a_x + off) % sizes
            b_t = np.clip(a_t + rng.integers(-1, 2, size=BLOCK), 0, nt - 1)
        elif STRATA[stratum] == "far":
            b_x = rng.integers(0, sizes, size=(BLOCK, grid.dim))
            b_t = rng.integers(0, nt, size=BLOCK)
        else:
            b_x = a_x
            b_t = rng.integers(0, nt, size=BLOCK)
        out_a.append((a_t, a_x))
        out_b.append((b_t, b_x))
    at = np.concatenate([a[0] for a in out_a])[:count]
    ax = np.concatenate([a[1] for a in out_a])[:count]
    bt = np.concatenate([b[0] for b in out_b])[:count]
    bx = np.concatenate([b[1] for b in out_b])[:count]
    return at, ax, bt, bx


def _quotients(series: TimeSeries, alpha, order_2m, at, ax, bt, bx):
    grid = series.grid
    h = np.array(grid.spacing)
    flat = series.flat_components()
    # advanced indices split by a slice: result is (pairs, components)
    va = flat[(at, slice(None)) + tuple(ax.T)]
    vb = flat[(bt, slice(None)) + tuple(bx.T)]
    diff = np.max(np.abs(va - vb), axis=1)
    d = parabolic_distances(ax * h, series.times[at], bx * h, series.times[bt],
                            order_2m, grid.periods)
    mask = d > 0
    q = np.zeros_like(diff)
    q[mask] = diff[mask] / d[mask] ** alpha
    return q


@dataclass
class HolderReport:
    alpha: float
    order_2m: int
    seminorm: float
    full_norm: float
    pair_budget: int
    strata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "order_2m": self.order_2m,
            "seminorm": self.seminorm,
            "full_norm": self.full_norm,
            "pair_budget": self.pair_budget,
            "strata": self.strata,
        }


def sampled_seminorm(series: TimeSeries, alpha, order_2m, pair_budget=20000, seed=0):
    """Largest sampled difference quotient and the per-stratum maxima."""
    if not 0 < alpha < 1:
        raise UsageError("alpha must lie in (0, 1)")
    per = [pair_budget // 3 + (1 if s < pair_budget % 3 else 0) for s in range(3)]
    best, strata = 0.0, {}
    for s, count in enumerate(per):
        if count == 0:
            strata[STRATA[s]] = 0.0
            continue
        at, ax, bt, bx = _stratum_pairs(series, s, count, seed)
        top = 0.0
        for start in range(0, count, 8 * BLOCK):
            sl = slice(start, start + 8 * BLOCK)
            q = _quotients(series, alpha, order_2m, at[sl], ax[sl], bt[sl], bx[sl])
            top = max(top, float(q.max()) if q.size else 0.0)
        strata[STRATA[s]] = top
        best = max(best, top)
    return best, strata


def holder_seminorm(u, alpha: float, order_2m: int, pair_budget: int = 20000, seed: int = 0,
                    times=None) -> HolderReport:
    """Sampled parabolic Hölder seminorm ``[u]_alpha`` and the full norm
    ``sum_{i <= 2m} max_beta |D^beta u|_sup + [u]_alpha``.

    ``u`` is a :class:`TimeSeries`, a single :class:`TensorField` (static) or
    a list of fields with ``times``.
    """
    series = as_series(u, times)
    semi, strata = sampled_seminorm(series, alpha, order_2m, pair_budget, seed)
    ck = max(ck_norm(series.data[k], series.grid, order_2m) for k in range(series.n_times))
    return HolderReport(alpha, order_2m, semi, ck + semi, pair_budget, strata)


def as_series(u, times=None) -> TimeSeries:
    if isinstance(u, TimeSeries):
        return u
    if isinstance(u, TensorField):
        return TimeSeries(u.grid, [0.0], u.data[None])
    fields = list(u)
    if times is None:
        raise UsageError("times are required for a list of fields")
    return TimeSeries.from_fields(times, fields)


def surrogate_norm(series: TimeSeries, order_2m: int, alpha: float = 0.5, pair_budget: int = 3000,
                   seed: int = 0) -> float:
    """Discrete stand-in for the ``C^{2m,0;alpha}`` norm: the largest
    ``C^{2m}`` sup-norm over time slices plus the sampled parabolic seminorm
    of the top-order derivatives.  A lower bound of the continuum norm."""
    ck = max(ck_norm(series.data[k], series.grid, order_2m) for k in range(series.n_times))
    if pair_budget <= 0:
        return ck
    top = top_derivatives(series, order_2m)
    semi, _ = sampled_seminorm(top, alpha, order_2m, pair_budget, seed)
    return ck + semi


# ----------------------------------------------------------------------
# interpolation inequality


@dataclass
class InterpolationResult:
    lhs: float
    rhs: float
    margin: float
    passed: bool
    parts: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "pass": self.passed, "parts": self.parts}


def interpolation_check(u, alpha: float, order_2m: int = 2, pair_budget: int = 20000,
                        seed: int = 0, slack: float = 0.05, times=None) -> InterpolationResult:
    """Check ``[u]_alpha <= (2|u|)^{1-alpha/2} |u_t|^{alpha/2} + (2|u|)^{1-alpha} |grad u|^alpha``.

    The left side is the sampled seminorm; sup norms on the right are taken
    over the stored slices, ``|u_t|`` as the largest slope between
    consecutive slices.  The time term with exponent ``alpha/2`` dominates
    the sharper ``alpha/2m`` bound whenever ``|u_t| >= 2|u|``, which holds
    for fields vanishing at ``t = 0`` on horizons up to ``1/2``.
    """
    series = as_series(u, times)
    if series.n_times < 3:
        raise UsageError("interpolation_check needs at least three time slices")
    lhs, _ = sampled_seminorm(series, alpha, order_2m, pair_budget, seed)
    un = sup_norm(series)
    ut = time_derivative_norm(series)
    ux = gradient_norm(series)
    t_part = (2 * un) ** (1 - alpha / 2) * ut ** (alpha / 2)
    x_part = (2 * un) ** (1 - alpha) * ux**alpha
    rhs = t_part + x_part
    passed = lhs <= (1 + slack) * rhs
    return InterpolationResult(lhs, rhs, rhs - lhs, bool(passed),
                               {"sup": un, "dt": ut, "grad": ux, "time_term": t_part,
                                "space_term": x_part})


# ----------------------------------------------------------------------
# invariant suites


@dataclass
class InvariantReport:
    """Named residuals; ``rates`` only when two or more resolutions were given."""

    residuals: dict
    resolutions: list
    rates: dict = field(default_factory=dict)

    def to_dict(self):
        return {"residuals": self.residuals, "resolutions": self.resolutions,
                "rates": self.rates}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def convergence_rate(errors, sizes):
    """Observed orders ``log(e_i / e_{i+1}) / log(N_{i+1} / N_i)``."""
    out = []
    for (e1, n1), (e2, n2) in zip(zip(errors, sizes), zip(errors[1:], sizes[1:])):
        if e1 <= 0 or e2 <= 0:
            out.append(math.inf if e2 <= 0 < e1 else 0.0)
        else:
            out.append(math.log(e1 / e2) / math.log(n2 / n1))
    return out


SUITE_NAMES = ("trace_free", "div_free", "conformal_covariance", "naturality", "stationarity",
               "steady_state")


def _metric_residuals(g: MetricField, which, rho, diffeo, seed):
    from . import curvature as cv
    from . import flows

    out = {}
    need_bach = bool({"trace_free", "div_free", "conformal_covariance"} & set(which))
    if need_bach and g.dim != 4:
        raise UsageError("Bach checks need a four-dimensional metric")
    B = cv.bach(g) if need_bach else None
    if "trace_free" in which:
        out["trace_free"] = float(np.max(np.abs(np.einsum("ij...,ij...->...", g.ginv, B.data))))
    if "div_free" in which:
        out["div_free"] = cv.divergence(B, g, 1).sup()
    if "conformal_covariance" in which:
        if rho is None:
            raise UsageError("conformal_covariance needs a conformal factor rho")
        r = np.broadcast_to(np.asarray(rho, dtype=float), g.grid.sizes)
        Bs = cv.bach(g.scaled(r * r))
        out["conformal_covariance"] = float(np.max(np.abs(Bs.data - B.data / (r * r))))
    if "naturality" in which:
        f = diffeo if diffeo is not None else flows.ShearMap.random(g.dim, 0.05, seed=seed)
        op = "bach" if g.dim == 4 else "ricci"
        out["naturality"] = flows.naturality_check(op, g, f)
    if "steady_state" in which:
        S = cv._scalar(g)
        out["steady_state"] = float(np.var(S))
    return out


def invariant_suite(subject, which=("trace_free", "div_free"), rho=None, diffeo=None,
                    seed: int = 0) -> InvariantReport:
    """Residuals of the structural identities.

    ``subject`` is a metric, a list of metrics sampling the same continuum
    metric at increasing resolution, or a trajectory (for
    ``stationarity``).  ``rho`` is a constant or a scalar grid array
    (resampled per resolution by the caller when it is an array).
    """
    which = tuple(which)
    unknown = set(which) - set(SUITE_NAMES)
    if unknown:
        raise UsageError(f"unknown invariant names {sorted(unknown)}")
    if hasattr(subject, "metrics") and hasattr(subject, "times"):
        res = {}
        if "stationarity" in which:
            g0 = subject.metrics[0].g
            res["stationarity"] = [max(float(np.max(np.abs(m.g - g0))) for m in subject.metrics)]
        other = [w for w in which if w != "stationarity"]
        if other:
            last = _metric_residuals(subject.metrics[-1], other, rho, diffeo, seed)
            res.update({k: [v] for k, v in last.items()})
        return InvariantReport(res, [subject.metrics[0].grid.sizes[0]])
    metrics = [subject] if isinstance(subject, MetricField) else list(subject)
    if "stationarity" in which:
        raise UsageError("stationarity needs a trajectory")
    per = [_metric_residuals(g, which, rho, diffeo, seed) for g in metrics]
    sizes = [g.grid.sizes[0] for g in metrics]
    residuals = {k: [p[k] for p in per] for k in per[0]}
    rates = {}
    if len(metrics) >= 2:
        rates = {k: convergence_rate(v, sizes) for k, v in residuals.items()}
    return InvariantReport(residuals, sizes, rates)
