"""Flow right-hand sides, DeTurck vector fields, Lie derivatives and
diffeomorphism-naturality checks.

Two families are supported: the Laplacian-of-Ricci flows
``dg/dt = 2 (-1)^{p+1} Delta^p Ric`` (order ``2(p+1)``) and, in dimension
four, the Bach flow ``dg/dt = B + (1/12) (Delta S) g`` (order four).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import curvature as cv
from .errors import DiffeomorphismError, UsageError
from .grid import Grid, MetricField, TensorField, interpolate

KINDS = ("plap_ric", "obstruction4")


@dataclass(frozen=True)
class FlowSpec:
    """Which flow to run and how to gauge-fix it.

    Args:
        kind: ``"plap_ric"`` or ``"obstruction4"``.
        p: power of the Laplacian (``plap_ric`` only).
        background: reference metric ``h`` for the DeTurck field.
        deturck: add ``L_W g`` to the right-hand side.
        laplacian_metric: ``"g"`` (default) or ``"h"``, the metric whose
            Laplacian enters ``W``.
    """

    kind: str
    p: int = 0
    background: MetricField | None = field(default=None, compare=False)
    deturck: bool = True
    laplacian_metric: str = "g"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown flow kind {self.kind!r}")
        if self.p < 0:
            raise UsageError("p must be non-negative")
        if self.laplacian_metric not in ("g", "h"):
            raise UsageError("laplacian_metric must be 'g' or 'h'")
        if self.kind == "obstruction4" and self.background is not None and self.background.dim != 4:
            raise UsageError("the obstruction flow needs a four-dimensional grid")

    @classmethod
    def parse(cls, text: str, background=None, deturck=True, **kw):
        """``"plap:2"``, ``"plap"`` (p = 0) or ``"obstruction4"``."""
        text = text.strip()
        if text.startswith("plap"):
            _, _, p = text.partition(":")
            try:
                p = int(p) if p else 0
            except ValueError as exc:
                raise UsageError(f"bad flow {text!r}") from exc
            return cls("plap_ric", p, background, deturck, **kw)
        if text in ("obstruction4", "bach"):
            return cls("obstruction4", 0, background, deturck, **kw)
        raise UsageError(f"bad flow {text!r}; use plap:p or obstruction4")

    def with_background(self, h):
        return FlowSpec(self.kind, self.p, h, self.deturck, self.laplacian_metric)

    def with_deturck(self, on):
        return FlowSpec(self.kind, self.p, self.background, on, self.laplacian_metric)

    @property
    def order(self) -> int:
        """Differential order ``2m``."""
        return 2 * (self.p + 1) if self.kind == "plap_ric" else 4

    @property
    def m(self) -> int:
        return self.order // 2

    @property
    def principal_scale(self) -> float:
        """``c`` such that the flat principal part of the adjusted operator
        has Fourier symbol ``-c |k|^{2m}``."""
        return 1.0 if self.kind == "plap_ric" else 0.25

    def label(self):
        return f"plap:{self.p}" if self.kind == "plap_ric" else "obstruction4"

    def check_grid(self, grid: Grid):
        if self.kind == "obstruction4" and grid.dim != 4:
            raise UsageError("the obstruction flow needs a four-dimensional grid")
        if self.background is not None:
            grid.check_compatible(self.background.grid)


@dataclass(frozen=True)
class VectorFieldW:
    """A gauge vector field ``W^k`` with a tag naming how it was built."""

    field: TensorField
    provenance: str = "V"

    def __post_init__(self):
        if self.field.variance != "u":
            raise UsageError("a vector field has variance 'u'")
        if self.provenance not in ("V", "plap_W", "obstruction_W"):
            raise UsageError(f"unknown provenance {self.provenance!r}")

    @property
    def data(self):
        return self.field.data

    @property
    def grid(self):
        return self.field.grid


# ----------------------------------------------------------------------
# right-hand sides


def cn(n: int) -> float:
    """``1 / (2^{n/2-1} (n/2-2)! (n-2)(n-1))``."""
    if n % 2 or n < 4:
        raise UsageError("c_n is defined for even n >= 4")
    q = n // 2
    return 1.0 / (2 ** (q - 1) * math.factorial(q - 2) * (n - 2) * (n - 1))


def _plapric(g: MetricField, p: int):
    lap = cv._laplacian(cv._ricci(g), "dd", g, p) if p else cv._ricci(g)
    return 2.0 * (-1) ** (p + 1) * lap


def _obstruction(g: MetricField):
    B = cv._bach(g)
    B = 0.5 * (B + np.swapaxes(B, 0, 1))
    lapS = cv._laplacian(cv._scalar(g), "", g, 1)
    return B + cn(4) * lapS * g.g


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, 0, 1))


def plapric_rhs(g: MetricField, p: int) -> TensorField:
    """``2 (-1)^{p+1} Delta^p Ric``."""
    if p < 0:
        raise UsageError("p must be non-negative")
    return TensorField(g.grid, _sym(_plapric(g, p)), "dd", symmetric=True)


def obstruction_rhs(g: MetricField) -> TensorField:
    """``B + (1/12) (Delta_g S) g`` in dimension four."""
    if g.dim != 4:
        raise UsageError("the obstruction flow needs a four-dimensional grid")
    return TensorField(g.grid, _sym(_obstruction(g)), "dd", symmetric=True)


def _rhs_array(g: MetricField, spec: FlowSpec):
    if spec.kind == "plap_ric":
        return _plapric(g, spec.p)
    if g.dim != 4:
        raise UsageError("the obstruction flow needs a four-dimensional grid")
    return _obstruction(g)


def flow_rhs(g: MetricField, spec: FlowSpec) -> TensorField:
    """Unadjusted right-hand side ``T(g)``."""
    return TensorField(g.grid, _sym(_rhs_array(g, spec)), "dd", symmetric=True)


# ----------------------------------------------------------------------
# DeTurck fields


def _V(g: MetricField, h: MetricField):
    A = cv._gamma_array(g) - cv._gamma_array(h)
    return np.einsum("pq...,kpq...->k...", g.ginv, A)


def deturck_V(g: MetricField, h: MetricField) -> VectorFieldW:
    """``V^k = g^{pq} (Gamma^k_pq - Gamma~^k_pq)``."""
    g.grid.check_compatible(h.grid)
    return VectorFieldW(TensorField(g.grid, _V(g, h), "u"), "V")


def _W(g: MetricField, h: MetricField, spec: FlowSpec):
    V = _V(g, h)
    lm = g if spec.laplacian_metric == "g" else h
    if spec.kind == "plap_ric":
        if spec.p == 0:
            return V
        return (-1) ** spec.p * cv._laplacian(V, "u", lm, spec.p)
    c = cn(4)
    dS = g.grid.gradient(cv._scalar(g))
    gradS = np.einsum("kl...,l...->k...", g.ginv, dS)
    return -3.0 * c * cv._laplacian(V, "u", lm, 1) + c * gradS


def deturck_W(g: MetricField, h: MetricField | None, spec: FlowSpec) -> VectorFieldW:
    """Gauge field for the adjusted flow.

    ``plap_ric``: ``W = (-1)^p Delta^p V``.  ``obstruction4``:
    ``W = -(1/4) Delta V + (1/12) grad S``, the scalar term entering through
    its gradient vector field.
    """
    h = spec.background if h is None else h
    if h is None:
        raise UsageError("a background metric is required for the DeTurck field")
    spec.check_grid(g.grid)
    g.grid.check_compatible(h.grid)
    tag = "plap_W" if spec.kind == "plap_ric" else "obstruction_W"
    if spec.kind == "plap_ric" and spec.p == 0:
        tag = "V"
    return VectorFieldW(TensorField(g.grid, _W(g, h, spec), "u"), tag)


def _lie(Wu, g: MetricField):
    Wd = np.einsum("jk...,k...->j...", g.g, Wu)
    nab = cv._cov_grad(Wd, "d", cv._gamma_array(g), g.grid)  # nab[j, i] = nabla_i W_j
    return nab + np.swapaxes(nab, 0, 1)


def lie_derivative_metric(W, g: MetricField) -> TensorField:
    """``(L_W g)_ij = nabla_i W_j + nabla_j W_i``."""
    data = W.data if isinstance(W, (VectorFieldW, TensorField)) else np.asarray(W)
    return TensorField(g.grid, _sym(_lie(data, g)), "dd", symmetric=True)


def _adjusted(g: MetricField, spec: FlowSpec):
    out = _rhs_array(g, spec)
    if spec.deturck:
        if spec.background is None:
            raise UsageError("the adjusted flow needs spec.background")
        out = out + _lie(_W(g, spec.background, spec), g)
    return _sym(out)


def adjusted_rhs(g: MetricField, spec: FlowSpec) -> TensorField:
    """``T(g) + L_W g`` (or ``T(g)`` alone when ``spec.deturck`` is off)."""
    spec.check_grid(g.grid)
    return TensorField(g.grid, _adjusted(g, spec), "dd", symmetric=True)


# ----------------------------------------------------------------------
# diffeomorphisms


def _pull_covariant(T, J):
    """``J^a_i J^b_j ... T_ab...`` for a covariant array already composed with f."""
    order = T.ndim - J.ndim + 2
    out = T
    for s in range(order):
        idx = "abcdefgh"[:order]
        src = idx[:s] + "z" + idx[s + 1 :]
        out = np.einsum(f"z{idx[s]}...,{src}...->{idx}...", J, out)
    return out


@dataclass(frozen=True)
class Shear:
    """``f(x) = x + A sin(k . x + phase) e_axis`` with ``k_axis = 0``.

    Every such map is a volume-preserving diffeomorphism of the torus, and
    composition with it is an exact per-line translation, so pull-backs are
    computed spectrally without interpolation error.
    """

    axis: int
    amplitude: float
    k: tuple
    phase: float = 0.0

    def __post_init__(self):
        if self.k[self.axis] != 0:
            raise UsageError("a shear may not vary along its own axis")

    def _argument(self, grid):
        xs = grid.mesh()
        ks = [2 * np.pi * m / L for m, L in zip(self.k, grid.periods)]
        return sum(k * x for k, x in zip(ks, xs)) + self.phase, ks

    def displacement(self, grid):
        theta, _ = self._argument(grid)
        d = np.zeros((grid.dim,) + grid.sizes)
        d[self.axis] = self.amplitude * np.sin(theta)
        return d

    def jacobian(self, grid):
        theta, ks = self._argument(grid)
        n = grid.dim
        J = np.zeros((n, n) + grid.sizes)
        for i in range(n):
            J[i, i] = 1.0
        c = self.amplitude * np.cos(theta)
        for i in range(n):
            J[self.axis, i] += ks[i] * c
        return J

    def compose_field(self, arr, grid):
        """``arr(f(x))`` by a spectral phase shift along the shear axis."""
        theta, _ = self._argument(grid)
        s = self.amplitude * np.sin(theta)
        ax = arr.ndim - grid.dim + self.axis
        n, L = grid.sizes[self.axis], grid.periods[self.axis]
        spec = np.fft.fft(arr, axis=ax)
        k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
        shape = [1] * arr.ndim
        shape[ax] = n
        k = k.reshape(shape)
        if n % 2 == 0:
            # split the Nyquist mode symmetrically so the result stays real
            nyq = np.take(spec, [n // 2], axis=ax)
            shifted = spec * np.exp(1j * k * s)
            idx = [slice(None)] * arr.ndim
            idx[ax] = n // 2
            s_line = np.take(s, [0], axis=self.axis)  # s is constant along the axis
            shifted[tuple(idx)] = (nyq * np.cos(np.pi * n / L * s_line)).squeeze(ax)
        else:
            shifted = spec * np.exp(1j * k * s)
        return np.fft.ifft(shifted, axis=ax).real

    def pullback(self, T: TensorField) -> TensorField:
        if "u" in T.variance:
            raise UsageError("pull-back implemented for covariant tensors")
        grid = T.grid
        comp = self.compose_field(T.data, grid)
        if T.order == 0:
            return TensorField(grid, comp, "")
        out = _pull_covariant(comp, self.jacobian(grid))
        if T.order == 2:
            return TensorField(grid, _sym(out), T.variance, T.symmetric)
        return TensorField(grid, out, T.variance)


@dataclass(frozen=True)
class ShearMap:
    """Composition ``f = s_1 o s_2 o ... o s_r`` of shears."""

    shears: tuple

    @classmethod
    def random(cls, dim, amplitude=0.05, count=None, max_mode=1, seed=0):
        """Random small shears; ``amplitude`` is the sup of each displacement
        in units of the coordinate period."""
        rng = np.random.default_rng(seed)
        count = dim if count is None else count
        out = []
        for c in range(count):
            axis = c % dim
            k = rng.integers(-max_mode, max_mode + 1, size=dim)
            k[axis] = 0
            if not np.any(k):
                k[(axis + 1) % dim] = 1
            out.append(
                Shear(axis, float(amplitude * rng.uniform(0.5, 1.0)), tuple(int(x) for x in k),
                      float(rng.uniform(0, 2 * np.pi)))
            )
        return cls(tuple(out))

    def pullback(self, T: TensorField) -> TensorField:
        # (s1 o s2)^* = s2^* s1^*
        for s in self.shears:
            T = s.pullback(T)
        return T

    def pullback_metric(self, g: MetricField) -> MetricField:
        return MetricField.from_field(self.pullback(g.value))


@dataclass(frozen=True)
class DisplacementMap:
    """``f(x) = x + d(x)`` for a smooth periodic displacement ``d``.

    Composition uses trigonometric interpolation; the Jacobian comes from
    the spectral gradient of ``d``.
    """

    displacement: TensorField
    method: str = "fourier"

    def __post_init__(self):
        if self.displacement.variance != "u":
            raise UsageError("a displacement is a vector field (variance 'u')")

    def jacobian(self):
        grid = self.displacement.grid
        J = grid.gradient(self.displacement.data)  # J[a, i] = d_i d^a
        for i in range(grid.dim):
            J[i, i] += 1.0
        det = np.linalg.det(np.moveaxis(J.reshape(grid.dim, grid.dim, -1), -1, 0))
        if det.min() <= 0:
            raise DiffeomorphismError(f"Jacobian determinant reaches {det.min():.3e}")
        return J

    def compose(self, T: TensorField):
        grid = T.grid
        pts = np.stack([x.ravel() for x in grid.mesh()], axis=1)
        pts = pts + self.displacement.data.reshape(grid.dim, -1).T
        vals = interpolate(T, pts, method=self.method)
        return vals.reshape(vals.shape[:-1] + grid.sizes)

    def pullback(self, T: TensorField) -> TensorField:
        if "u" in T.variance:
            raise UsageError("pull-back implemented for covariant tensors")
        J = self.jacobian()
        comp = self.compose(T)
        if T.order == 0:
            return TensorField(T.grid, comp, "")
        out = _pull_covariant(comp, J)
        if T.order == 2:
            return TensorField(T.grid, _sym(out), T.variance, T.symmetric)
        return TensorField(T.grid, out, T.variance)

    def pullback_metric(self, g: MetricField) -> MetricField:
        return MetricField.from_field(self.pullback(g.value))


def natural_operator(kind) -> Callable[[MetricField], TensorField]:
    """Resolve a right-hand-side name to a natural operator of the metric.

    Accepted names: ``"ricci"``, ``"scalar"``, ``"plap:p"``, ``"bach"``,
    ``"obstruction4"``; callables pass through.
    """
    if callable(kind):
        return kind
    if kind == "ricci":
        return cv.ricci
    if kind == "scalar":
        return cv.scalar_curvature
    if kind == "bach":
        return cv.bach
    if kind == "obstruction4":
        return obstruction_rhs
    if isinstance(kind, str) and kind.startswith("plap"):
        spec = FlowSpec.parse(kind, deturck=False)
        return lambda g: plapric_rhs(g, spec.p)
    raise UsageError(f"unknown natural operator {kind!r}")


def naturality_check(rhs_kind, g: MetricField, f) -> float:
    """``sup |T(f^* g) - f^*(T(g))|`` for a natural operator ``T``."""
    op = natural_operator(rhs_kind)
    lhs = op(f.pullback_metric(g))
    rhs = f.pullback(op(g))
    return float(np.max(np.abs(lhs.data - rhs.data)))


# ----------------------------------------------------------------------
# conformal rescaling along a Bach-flow trajectory


def conformal_phi(g: MetricField, n: int = 4):
    """``phi = c_n (-1)^{n/2} Delta^{n/2-1} S``."""
    q = n // 2
    S = cv._scalar(g)
    lap = cv._laplacian(S, "", g, q - 1) if q > 1 else S
    return cn(n) * (-1) ** q * lap


def conformal_rho(g_path, n: int = 4) -> list[TensorField]:
    """``rho(t) = exp(-1/2 int_0^t phi)`` by the trapezoid rule.

    ``g_path`` is a trajectory (``.times`` and ``.metrics``) or a sequence of
    ``(t, MetricField)`` pairs.
    """
    if hasattr(g_path, "times"):
        times, metrics = list(g_path.times), list(g_path.metrics)
    else:
        pairs = list(g_path)
        times = [t for t, _ in pairs]
        metrics = [m for _, m in pairs]
    if not metrics:
        raise UsageError("empty trajectory")
    grid = metrics[0].grid
    phis = [conformal_phi(m, n) for m in metrics]
    acc = np.zeros(grid.sizes)
    out = [TensorField(grid, np.ones(grid.sizes), "")]
    for i in range(1, len(metrics)):
        acc = acc + 0.5 * (times[i] - times[i - 1]) * (phis[i] + phis[i - 1])
        out.append(TensorField(grid, np.exp(-0.5 * acc), ""))
    return out
