"""Time evolution of the gauge-adjusted flows.

Both solvers split the adjusted operator as ``T(h + v) = L0 v + G(v)``,
where ``L0`` is the constant-coefficient principal part at a flat metric
(Fourier symbol ``-c |k|^{2m}``).  Its semigroup is an exact Fourier
multiplier, and ``G`` collects everything else, so the fixed points are
those of the full equation.

* :func:`picard_solve` iterates the Duhamel map
  ``v(t) = int_0^t H(t - s) G(v(s)) ds`` on a stored time grid.
* :func:`imex_evolve` steps ``L0`` implicitly and ``G`` explicitly.
* :func:`deturck_pullback` undoes the gauge term by transporting along the
  flow of ``-W``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flows
from .diagnostics import TimeSeries, surrogate_norm
from .errors import DegenerateMetricError, DiffeomorphismError, UsageError
from .flows import FlowSpec, _adjusted, _sym
from .grid import Grid, MetricField, TensorField, interpolate, read_snapshot, write_snapshot
from .symbol import TaylorSplit, taylor_split


def _principal_symbol(grid: Grid, order_2m: int, scale: float = 1.0):
    """``c |k|^{2m}`` on the real-transform spectrum."""
    return scale * grid.k_squared ** (order_2m // 2)


def heat_semigroup(v: TensorField, t: float, order_2m: int, scale: float = 1.0) -> TensorField:
    """Componentwise multiplier ``exp(-t c |k|^{2m})``."""
    if t < 0:
        raise UsageError("the heat semigroup runs forward in time only")
    if order_2m % 2 or order_2m <= 0:
        raise UsageError("order must be a positive even integer")
    grid = v.grid
    if t == 0:
        return TensorField(grid, v.data.copy(), v.variance, v.symmetric)
    mult = np.exp(-t * _principal_symbol(grid, order_2m, scale))
    out = grid.irfft(grid.rfft(v.data) * mult)
    sym = v.symmetric
    if sym:
        out = 0.5 * (out + np.swapaxes(out, 0, 1))
    return TensorField(grid, out, v.variance, sym)


def apply_L0(arr, grid: Grid, spec: FlowSpec):
    """Flat principal part ``L0`` (symbol ``-c |k|^{2m}``) applied componentwise."""
    return grid.irfft(grid.rfft(arr) * -_principal_symbol(grid, spec.order, spec.principal_scale))


# ----------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Stored metrics of one run; ``adjusted`` marks gauge-adjusted solutions."""

    times: list
    metrics: list
    spec: FlowSpec
    adjusted: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.metrics):
            raise UsageError("one metric per stored time is required")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise UsageError("trajectory times must increase")

    @property
    def grid(self):
        return self.metrics[0].grid

    def as_series(self) -> TimeSeries:
        return TimeSeries(self.grid, self.times, np.stack([m.g for m in self.metrics]))

    def perturbation(self, h: MetricField | None = None) -> TimeSeries:
        h = self.metrics[0] if h is None else h
        return TimeSeries(self.grid, self.times, np.stack([m.g - h.g for m in self.metrics]))

    def export(self, directory) -> Path:
        """Write one snapshot per slice plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        g0 = self.metrics[0].g
        files, norms = [], []
        for k, (t, m) in enumerate(zip(self.times, self.metrics)):
            name = f"slice_{k:05d}.snap"
            write_snapshot(d / name, m.value, t)
            files.append(name)
            norms.append({"sup_dev": float(np.max(np.abs(m.g - g0))),
                          "min_eig": m.min_eigenvalue()})
        manifest = {
            "times": [float(t) for t in self.times],
            "files": files,
            "spec": {"flow": self.spec.label(), "deturck": self.spec.deturck,
                     "laplacian_metric": self.spec.laplacian_metric},
            "adjusted": self.adjusted,
            "norms": norms,
            "contraction_history": self.meta.get("contraction_history", []),
            "meta": {k: v for k, v in self.meta.items() if k != "contraction_history"},
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return d

    @classmethod
    def load(cls, directory, background: MetricField | None = None):
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        metrics, times = [], []
        for name in manifest["files"]:
            f, t = read_snapshot(d / name)
            metrics.append(MetricField.from_field(f))
            times.append(t)
        s = manifest["spec"]
        spec = FlowSpec.parse(s["flow"], background=background, deturck=s["deturck"],
                              laplacian_metric=s.get("laplacian_metric", "g"))
        meta = dict(manifest.get("meta", {}))
        meta["contraction_history"] = manifest.get("contraction_history", [])
        return cls(times, metrics, spec, manifest["adjusted"], meta)


def _metric_or_abort(grid, data, t):
    try:
        return MetricField(grid, _sym(data))
    except DegenerateMetricError as exc:
        raise DegenerateMetricError(f"metric lost positivity at t = {t:.6g}: {exc}",
                                    exc.index, exc.eigenvalue) from exc


# ----------------------------------------------------------------------
# IMEX


def imex_evolve(h: MetricField, spec: FlowSpec, dt: float, steps: int, g0: MetricField | None = None,
                store_every: int = 1) -> Trajectory:
    """Linearly implicit Euler for ``dg/dt = T(g) + L_W g``.

    Each step solves ``(1 - dt L0)(w^{n+1} - w^n) = dt T(g^n)`` with
    ``w = g - h``, i.e. the flat principal part is implicit and the
    remainder ``T(g) - L0 w`` explicit.  Metrics are re-symmetrised and
    checked for positivity every step.
    """
    if dt <= 0 or steps < 0:
        raise UsageError("dt must be positive and steps non-negative")
    if not spec.deturck:
        raise UsageError("the IMEX integrator needs the DeTurck adjustment")
    bg = spec.background if spec.background is not None else h
    spec = spec.with_background(bg)
    grid = h.grid
    spec.check_grid(grid)
    g = h if g0 is None else g0
    filt = 1.0 / (1.0 + dt * _principal_symbol(grid, spec.order, spec.principal_scale))
    times, metrics = [0.0], [g]
    t = 0.0
    for n in range(1, steps + 1):
        rhs = _adjusted(g, spec)
        data = g.g + dt * grid.irfft(grid.rfft(rhs) * filt)
        t = n * dt
        g = _metric_or_abort(grid, data, t)
        if n % store_every == 0 or n == steps:
            times.append(t)
            metrics.append(g)
    return Trajectory(times, metrics, spec, True, {"dt": dt, "steps": steps,
                                                   "store_every": store_every})


# ----------------------------------------------------------------------
# Picard iteration


@dataclass
class PicardConfig:
    """Parameters of the fixed-point iteration in the ball ``|v| <= mu``."""

    mu: float = 1.0
    t_final: float = 1e-4
    time_steps: int = 16
    quadrature: str = "trapezoid"
    max_iters: int = 30
    tol: float = 1e-10
    alpha: float = 0.5
    pair_budget: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.mu <= 0 or self.t_final <= 0 or self.tol <= 0:
            raise UsageError("mu, t_final and tol must be positive")
        if self.time_steps < 16:
            raise UsageError("the Duhamel quadrature needs at least 16 time steps")
        if self.quadrature not in ("trapezoid", "midpoint"):
            raise UsageError("quadrature must be 'trapezoid' or 'midpoint'")
        if self.max_iters < 1:
            raise UsageError("max_iters must be at least 1")

    @property
    def times(self):
        return np.linspace(0.0, self.t_final, self.time_steps + 1)


@dataclass
class PicardState:
    iterates: list
    contraction_history: list
    converged: bool
    stop_reason: str
    update_norms: list = field(default_factory=list)
    iterate_norms: list = field(default_factory=list)
    fixed_point_residual: float = float("nan")
    trajectory: Trajectory | None = None


def _ball_norm(series: TimeSeries, spec: FlowSpec, cfg: PicardConfig):
    """``C^{2m,0;alpha}`` surrogate used for the ball bound."""
    return surrogate_norm(series, spec.order, cfg.alpha, cfg.pair_budget, cfg.seed)


def _step_norm(series: TimeSeries, spec: FlowSpec):
    """Sup over time of the ``C^{2m}`` norm; used for updates and residuals."""
    return surrogate_norm(series, spec.order, pair_budget=0)


def psi_apply(u: TimeSeries, split: TaylorSplit, cfg: PicardConfig) -> TimeSeries:
    """One application of the Duhamel map on the stored time grid.

    ``G(u) = T(h + u) - L0 u``, which equals ``I_h + Q(u) + (L_h - L0) u``.
    """
    grid = split.h.grid
    spec = split.spec
    times = np.asarray(u.times)
    if times.size != cfg.time_steps + 1 or not np.allclose(times, cfg.times, rtol=0,
                                                            atol=1e-15 * cfg.t_final):
        raise UsageError("u must live on the configuration's time grid")
    if np.any(u.data[0] != 0):
        raise UsageError("u must vanish at t = 0")
    sym = _principal_symbol(grid, spec.order, spec.principal_scale)
    G = []
    for k, t in enumerate(times):
        m = _metric_or_abort(grid, split.h.g + u.data[k], t)
        G.append(grid.rfft(_adjusted(m, spec) - apply_L0(u.data[k], grid, spec)))
    out = np.zeros_like(u.data)
    dt = np.diff(times)
    for j in range(1, times.size):
        acc = 0
        if cfg.quadrature == "trapezoid":
            for i in range(j + 1):
                w = 0.5 * (dt[i - 1] if i > 0 else 0.0) + 0.5 * (dt[i] if i < j else 0.0)
                acc = acc + w * np.exp(-(times[j] - times[i]) * sym) * G[i]
        else:
            for i in range(j):
                mid = 0.5 * (times[i] + times[i + 1])
                acc = acc + dt[i] * np.exp(-(times[j] - mid) * sym) * 0.5 * (G[i] + G[i + 1])
        out[j] = _sym(grid.irfft(acc))
    return TimeSeries(grid, times, out)


def picard_solve(h: MetricField, spec: FlowSpec, cfg: PicardConfig) -> PicardState:
    """Iterate ``v <- Psi(v)`` from ``v = 0``.

    Stops on the first of: update below ``tol`` (converged), ``max_iters``,
    or an iterate leaving the ball of radius ``mu``.  Updates are measured
    in the sup-over-time ``C^{2m}`` norm, the ball in the
    ``C^{2m,0;alpha}`` surrogate.  Round-off in ``T`` amplified by ``2m``
    spectral derivatives puts a floor near ``1e-10`` under the update
    norm on 64-point grids, so tolerances much below that cannot be met.
    """
    if not spec.deturck:
        raise UsageError("the Picard solver needs the DeTurck adjustment")
    spec = spec if spec.background is not None else spec.with_background(h)
    split = taylor_split(h, spec)
    grid = h.grid
    times = cfg.times
    v = TimeSeries(grid, times, np.zeros((times.size, grid.dim, grid.dim) + grid.sizes))
    iterates, ratios, updates, norms = [v], [], [], [0.0]
    reason, converged = "max_iters", False
    for _ in range(cfg.max_iters):
        new = psi_apply(v, split, cfg)
        upd = _step_norm(new - v, spec)
        nrm = _ball_norm(new, spec, cfg)
        iterates.append(new)
        updates.append(upd)
        norms.append(nrm)
        if len(updates) >= 2 and updates[-2] > 0:
            ratios.append(upd / updates[-2])
        v = new
        if nrm > cfg.mu:
            reason = "ball_exit"
            break
        if upd < cfg.tol:
            reason, converged = "tol", True
            break
    state = PicardState(iterates, ratios, converged, reason, updates, norms)
    if converged:
        state.fixed_point_residual = _step_norm(psi_apply(v, split, cfg) - v, spec)
        metrics = [MetricField(grid, h.g + v.data[k]) for k in range(times.size)]
        state.trajectory = Trajectory(list(times), metrics, spec, True,
                                      {"contraction_history": ratios, "solver": "picard"})
    return state


# ----------------------------------------------------------------------
# DeTurck pull-back


def _sample_vector(W, grid, pts, method):
    return interpolate(TensorField(grid, W, "u"), pts, method=method)


def deturck_pullback(traj: Trajectory, method: str = "fourier") -> Trajectory:
    """Transport an adjusted-flow trajectory back to the original flow.

    Integrates ``d theta/dt = -W(theta, t)`` from the identity with the
    classical four-stage Runge-Kutta method on the stored time grid (``W``
    linear in time between slices, interpolated in space), then returns
    ``gbar = theta^* g``.
    """
    if not traj.adjusted:
        raise UsageError("trajectory is already un-adjusted")
    spec = traj.spec
    if spec.background is None:
        raise UsageError("the trajectory's spec must carry its background metric")
    grid = traj.grid
    n = grid.dim
    xs = np.stack([x.ravel() for x in grid.mesh()], axis=1)
    Ws = [flows._W(g, spec.background, spec) for g in traj.metrics]
    disp = np.zeros((xs.shape[0], n))

    def field_at(W, d):
        return -_sample_vector(W, grid, xs + d, method).T

    out = [_pulled(traj.metrics[0], disp, grid, method)]
    displacements = [disp.copy()]
    for i in range(len(traj.times) - 1):
        step = traj.times[i + 1] - traj.times[i]
        Wm = 0.5 * (Ws[i] + Ws[i + 1])
        k1 = field_at(Ws[i], disp)
        k2 = field_at(Wm, disp + 0.5 * step * k1)
        k3 = field_at(Wm, disp + 0.5 * step * k2)
        k4 = field_at(Ws[i + 1], disp + step * k3)
        disp = disp + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(_pulled(traj.metrics[i + 1], disp, grid, method, traj.times[i + 1]))
        displacements.append(disp.copy())
    meta = dict(traj.meta)
    meta["max_displacement"] = float(max(np.max(np.abs(d)) for d in displacements))
    return Trajectory(list(traj.times), out, spec.with_deturck(False), False, meta)


def _pulled(g: MetricField, disp, grid, method, t=0.0):
    n = grid.dim
    if not np.any(disp):
        return g
    d = disp.T.reshape((n,) + grid.sizes)
    J = grid.with_scheme("spectral").gradient(d)  # J[a, j] = d_j d^a
    for a in range(n):
        J[a, a] += 1.0
    det = np.linalg.det(np.moveaxis(J.reshape(n, n, -1), -1, 0))
    if det.min() <= 0:
        raise DiffeomorphismError(f"pull-back map stopped being invertible at t = {t:.6g}")
    pts = np.stack([x.ravel() for x in grid.mesh()], axis=1) + disp
    gc = interpolate(g.value, pts, method=method).reshape((n, n) + grid.sizes)
    gbar = np.einsum("ai...,ab...,bj...->ij...", J, gc, J, optimize=True)
    return _metric_or_abort(grid, gbar, t)


def pullback_residual(traj: Trajectory, spec: FlowSpec | None = None) -> float:
    """``sup |d_t gbar - T(gbar)|`` over interior slices, centred differences."""
    spec = (spec or traj.spec).with_deturck(False)
    t = traj.times
    worst = 0.0
    for i in range(1, len(t) - 1):
        dg = (traj.metrics[i + 1].g - traj.metrics[i - 1].g) / (t[i + 1] - t[i - 1])
        T = flows._rhs_array(traj.metrics[i], spec)
        worst = max(worst, float(np.max(np.abs(dg - T))))
    return worst


def conformal_factor(g: MetricField) -> np.ndarray:
    """``u`` with ``det g = e^{2 n u}``, i.e. the factor of ``e^{2u} delta``."""
    n = g.dim
    det = np.linalg.det(np.moveaxis(g.g.reshape(n, n, -1), -1, 0)).reshape(g.grid.sizes)
    return np.log(det) / (2 * n)
