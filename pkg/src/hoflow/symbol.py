"""Linearization of the adjusted flow operator, its Taylor split and
principal-symbol measurements.

Sign convention: for the adjusted operator ``T`` and a plane wave
``v = eta cos(xi . x)`` at a constant background, the linear response is
``-sigma(xi)(eta) cos(xi . x)`` at top order, and ``principal_symbol``
returns ``<eta, sigma(xi)(eta)>``.  A strongly parabolic flow therefore has
positive symbol values; the Laplacian-of-Ricci flows give exactly
``|xi|^{2(p+1)} |eta|^2``.  Norms of ``xi`` and ``eta`` are taken in the
frozen background metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DegenerateMetricError, InconclusiveSymbolError, UsageError
from .flows import FlowSpec, _adjusted
from .grid import Grid, MetricField, TensorField

RICHARDSON_RTOL = 1e-8
FIT_RTOL = 1e-6
HARMONICS = (1, 2, 3)


def _with_background(h, spec):
    return spec if spec.background is not None else spec.with_background(h)


def _evaluate(h_data, grid, spec):
    return _adjusted(MetricField(grid, h_data), spec)


@dataclass
class LinearizationInfo:
    steps: list
    estimates_diff: list
    converged: bool


def _linearize(h: MetricField, spec: FlowSpec, v: np.ndarray, levels=6, rel_step=1e-3):
    """Central differences at ``s0, s0/2, ...`` combined in a Richardson
    tableau (the odd part of ``T(h + s v)`` has only even powers of ``s``
    in its quotient).  Stops once two successive diagonal estimates agree to
    ``RICHARDSON_RTOL``."""
    grid = h.grid
    vmax = float(np.max(np.abs(v)))
    if vmax == 0.0:
        return np.zeros_like(v), LinearizationInfo([], [], True)
    hscale = float(np.max(np.sqrt(np.einsum("ij...,ij...->...", h.g, h.g))))
    s = rel_step * hscale / vmax
    steps, diffs = [], []
    row = []
    best = None
    tops = []
    for lev in range(levels):
        try:
            plus = _evaluate(h.g + s * v, grid, spec)
            minus = _evaluate(h.g - s * v, grid, spec)
        except DegenerateMetricError as exc:
            raise DegenerateMetricError(
                f"h +/- s v is degenerate at s = {s:.3e}", exc.index, exc.eigenvalue
            ) from exc
        steps.append(s)
        new = [(plus - minus) / (2 * s)]
        for j, prev in enumerate(row):
            f = 4.0 ** (j + 1)
            new.append((f * new[j] - prev) / (f - 1))
        row = new
        tops.append(row[-1])
        if best is not None:
            scale = max(float(np.max(np.abs(row[-1]))), 1e-300)
            d = float(np.max(np.abs(row[-1] - best))) / scale
            diffs.append(d)
            if d < RICHARDSON_RTOL:
                return row[-1], LinearizationInfo(steps, diffs, True)
        best = row[-1]
        s *= 0.5
    # round-off took over before the tolerance was met: keep the most stable estimate
    k = int(np.argmin(diffs)) + 1 if diffs else len(tops) - 1
    return tops[k], LinearizationInfo(steps, diffs, False)


def linearize_at(h: MetricField, spec: FlowSpec, v: TensorField) -> TensorField:
    """``d/ds T(h + s v)`` at ``s = 0`` by Richardson-extrapolated central
    differences.  The DeTurck background defaults to ``h`` itself."""
    h.grid.check_compatible(v.grid)
    spec = _with_background(h, spec)
    data = 0.5 * (v.data + np.swapaxes(v.data, 0, 1))
    out, _ = _linearize(h, spec, data)
    return TensorField(h.grid, 0.5 * (out + np.swapaxes(out, 0, 1)), "dd", symmetric=True)


@dataclass
class TaylorSplit:
    """``T(h + v) = I_h + L_h v + Q(v)``."""

    h: MetricField
    spec: FlowSpec
    inhomogeneous: TensorField

    def evaluate(self, v: TensorField) -> TensorField:
        data = _evaluate(self.h.g + v.data, self.h.grid, self.spec)
        return TensorField(self.h.grid, data, "dd")

    def linear_apply(self, v: TensorField) -> TensorField:
        return linearize_at(self.h, self.spec, v)

    def quadratic_apply(self, v: TensorField) -> TensorField:
        full = self.evaluate(v).data
        return TensorField(
            self.h.grid, full - self.inhomogeneous.data - self.linear_apply(v).data, "dd"
        )

    def quadratic_constant(self, vs, norm=None) -> float:
        """Largest ``|Q(v)|_sup / |v|^2`` over a family (``norm`` defaults to
        the ``C^{2m}`` sup surrogate)."""
        from .diagnostics import ck_norm

        norm = norm or (lambda a: ck_norm(a, self.h.grid, self.spec.order))
        return max(self.quadratic_apply(v).sup() / norm(v.data) ** 2 for v in vs)

    def lipschitz_constant(self, pairs, norm=None) -> float:
        """Largest ``|Q(u) - Q(v)| / (max(|u|, |v|) |u - v|)`` over pairs."""
        from .diagnostics import ck_norm

        norm = norm or (lambda a: ck_norm(a, self.h.grid, self.spec.order))
        best = 0.0
        for u, v in pairs:
            num = np.max(np.abs(self.quadratic_apply(u).data - self.quadratic_apply(v).data))
            den = max(norm(u.data), norm(v.data)) * norm(u.data - v.data)
            best = max(best, float(num / den))
        return best


def taylor_split(h: MetricField, spec: FlowSpec) -> TaylorSplit:
    spec = _with_background(h, spec)
    I = TensorField(h.grid, _evaluate(h.g, h.grid, spec), "dd")
    return TaylorSplit(h, spec, I)


# ----------------------------------------------------------------------
# principal symbols


def frozen_metric(h: MetricField, at=None) -> MetricField:
    """Constant metric equal to ``h`` at grid index ``at`` (default origin)."""
    grid = h.grid
    at = (0,) * grid.dim if at is None else tuple(at)
    val = h.g[(Ellipsis,) + at]
    return MetricField(grid, np.broadcast_to(val[(Ellipsis,) + (None,) * grid.dim],
                                             h.g.shape).copy())


def _is_constant(h: MetricField):
    ref = h.g[(Ellipsis,) + (0,) * h.dim]
    return np.allclose(h.g, ref[(Ellipsis,) + (None,) * h.dim], rtol=0, atol=1e-14)


def _hnorms(H, xi_phys, eta):
    hinv = np.linalg.inv(H)
    xi2 = float(xi_phys @ hinv @ xi_phys)
    eta2 = float(np.einsum("ia,jb,ij,ab->", hinv, hinv, eta, eta))
    return xi2, eta2, hinv


def _max_mode(grid):
    lim = [n // 8 // HARMONICS[-1] for n in grid.sizes]
    if max(lim) < 1:
        raise UsageError("grid too coarse for symbol extraction (needs N >= 24)")
    return lim


def allowed_wavevectors(grid: Grid):
    """Lattice vectors whose harmonics up to the third stay in the lowest
    quarter of the Nyquist range; one representative per +/- pair."""
    lim = _max_mode(grid)
    out = []
    for m in product(*[range(-l, l + 1) for l in lim]):
        m = np.array(m)
        if not np.any(m):
            continue
        first = m[np.nonzero(m)[0][0]]
        if first > 0:
            out.append(tuple(int(x) for x in m))
    return out


def _check_xi(grid, xi):
    xi = tuple(int(x) for x in xi)
    if len(xi) != grid.dim:
        raise UsageError("wave-vector needs one integer per axis")
    if not any(xi):
        return xi
    for x, n in zip(xi, grid.sizes):
        if abs(x) * HARMONICS[-1] > n / 8:
            raise UsageError(f"harmonics of {xi} leave the lowest quarter of the Nyquist range")
    return xi


def _batches(xis):
    """Greedy grouping of samples with pairwise disjoint harmonic sets."""
    batches, used = [], []
    for s, xi in enumerate(xis):
        freqs = set()
        for t in HARMONICS:
            f = tuple(t * x for x in xi)
            freqs.add(f)
            freqs.add(tuple(-x for x in f))
        for b, u in zip(batches, used):
            if not (u & freqs):
                b.append(s)
                u |= freqs
                break
        else:
            batches.append([s])
            used.append(set(freqs))
    return batches


@dataclass
class SymbolSample:
    xi: tuple
    eta: np.ndarray
    value: float
    normalized: float
    fit_residual: float


def principal_symbols(h: MetricField, spec: FlowSpec, xis, etas, at=None):
    """Batched principal symbol values for lists of lattice wave-vectors and
    symmetric ``eta`` matrices.

    Samples with disjoint harmonic sets share one linearization (a constant
    background does not couple Fourier modes).  Returns a list of
    :class:`SymbolSample`.
    """
    grid = h.grid
    if len(xis) != len(etas):
        raise UsageError("xis and etas must have equal length")
    H = frozen_metric(h, at) if not _is_constant(h) else h
    spec = spec.with_background(H)
    Hmat = H.g[(Ellipsis,) + (0,) * grid.dim]
    m2 = spec.order
    xs = grid.mesh()
    twopi_L = [2 * np.pi / L for L in grid.periods]
    xis = [_check_xi(grid, xi) for xi in xis]
    etas = [0.5 * (np.asarray(e, float) + np.asarray(e, float).T) for e in etas]
    out = [None] * len(xis)

    todo = []
    for s, (xi, eta) in enumerate(zip(xis, etas)):
        if not any(xi) or not np.any(eta):
            out[s] = SymbolSample(xi, eta, 0.0, 0.0, 0.0)
        else:
            todo.append(s)

    for batch in _batches([xis[s] for s in todo]):
        idx = [todo[b] for b in batch]
        v = np.zeros((grid.dim, grid.dim) + grid.sizes)
        phases = {}
        for s in idx:
            for t in HARMONICS:
                arg = sum(t * x * k * X for x, k, X in zip(xis[s], twopi_L, xs))
                c = np.cos(arg)
                phases[(s, t)] = c
                v += np.multiply.outer(etas[s], c)
        resp, _ = _linearize(H, spec, v)
        for s in idx:
            xi_phys = np.array([x * k for x, k in zip(xis[s], twopi_L)])
            xi2, eta2, hinv = _hnorms(Hmat, xi_phys, etas[s])
            eta_up = hinv @ etas[s] @ hinv
            sig = []
            for t in HARMONICS:
                c = phases[(s, t)]
                proj = np.tensordot(resp, c, axes=c.ndim) / np.sum(c * c)
                sig.append(float(np.sum(eta_up * proj)))
            sig = np.array(sig)
            ts = np.array(HARMONICS, float)
            A = np.stack([ts**m2, ts ** (m2 - 2)], axis=1)
            coef, *_ = np.linalg.lstsq(A, sig, rcond=None)
            scale = xi2 ** (m2 / 2) * eta2 * ts[-1] ** m2
            resid = float(np.max(np.abs(A @ coef - sig))) / scale
            if resid > FIT_RTOL:
                raise InconclusiveSymbolError(
                    f"symbol fit residual {resid:.2e} at xi={xis[s]}: response is not of order {m2}"
                )
            value = -float(coef[0])
            out[s] = SymbolSample(xis[s], etas[s], value,
                                  value / (xi2 ** (m2 / 2) * eta2), resid)
    return out


def principal_symbol(h: MetricField, spec: FlowSpec, xi, eta, at=None) -> float:
    """Top-order symbol ``<eta, sigma(xi) eta>`` of the linearized adjusted
    operator at the frozen background, from a fit over harmonics
    ``xi, 2 xi, 3 xi``."""
    return principal_symbols(h, spec, [xi], [eta], at)[0].value


@dataclass
class SymbolReport:
    order_2m: int
    samples: list
    lambda_est: float
    passed: bool
    argmin: int = -1
    families: list = field(default_factory=list)

    @property
    def pass_(self):
        return self.passed

    def to_dict(self):
        return {
            "order": self.order_2m,
            "lambda_est": self.lambda_est,
            "pass": self.passed,
            "argmin": self.argmin,
            "samples": [
                {
                    "xi": list(s.xi),
                    "eta": np.asarray(s.eta).tolist(),
                    "value": s.value,
                    "normalized": s.normalized,
                    "family": fam,
                }
                for s, fam in zip(self.samples, self.families or [""] * len(self.samples))
            ],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


ETA_FAMILIES = ("random", "gauge", "longitudinal")


def sample_directions(grid: Grid, count: int, seed=0):
    """Random ``(xi, eta, family)`` triples.

    Wave-vectors are drawn without replacement from the admissible lattice
    (reshuffled when exhausted), so samples pack into few disjoint batches.

    ``eta`` cycles through a random symmetric matrix, a gauge direction
    ``xi (x) zeta + zeta (x) xi`` and ``xi (x) xi + a delta``.
    """
    rng = np.random.default_rng(seed)
    lattice = allowed_wavevectors(grid)
    n = grid.dim
    xis, etas, fams = [], [], []
    order = []
    for s in range(count):
        # stratified: every lattice direction is used once before any repeats
        if not order:
            order = list(rng.permutation(len(lattice)))
        xi = lattice[order.pop()]
        fam = ETA_FAMILIES[s % 3]
        x = np.array(xi, float)
        if fam == "random":
            a = rng.normal(size=(n, n))
            eta = a + a.T
        elif fam == "gauge":
            z = rng.normal(size=n)
            eta = np.outer(x, z) + np.outer(z, x)
        else:
            eta = np.outer(x, x) + rng.normal() * np.eye(n)
        eta /= np.linalg.norm(eta)
        xis.append(xi)
        etas.append(eta)
        fams.append(fam)
    return xis, etas, fams


def ellipticity_check(h: MetricField, spec: FlowSpec, sample_count: int = 100, seed=0,
                      threshold=1e-6, at=None) -> SymbolReport:
    """Sample the principal symbol and estimate the ellipticity constant."""
    if sample_count < 50:
        raise UsageError("ellipticity_check needs at least 50 samples")
    xis, etas, fams = sample_directions(h.grid, sample_count, seed)
    samples = principal_symbols(h, spec, xis, etas, at)
    norms = np.array([s.normalized for s in samples])
    k = int(np.argmin(norms))
    lam = float(norms[k])
    return SymbolReport(spec.order, samples, lam, bool(lam >= threshold), k, fams)


# ----------------------------------------------------------------------
# leading-order cancellation


def _power_coefficients(hinv, power):
    """Coefficients ``c_beta`` of ``(h^{rs} xi_r xi_s)^power`` as a dict keyed
    by multi-index; each coefficient is a grid array."""
    n = hinv.shape[0]
    terms = {(0,) * n: np.ones(hinv.shape[2:])}
    for _ in range(power):
        new = {}
        for beta, c in terms.items():
            for r in range(n):
                for s in range(n):
                    b = list(beta)
                    b[r] += 1
                    b[s] += 1
                    b = tuple(b)
                    new[b] = new.get(b, 0.0) + c * hinv[r, s]
        terms = new
    return terms


def leading_operator(h: MetricField, v: np.ndarray, p: int):
    """``(-1)^p Ltilde^{p+1} v`` with ``Ltilde = h^{rs} d_r d_s`` and all
    coefficients kept in front of the derivatives."""
    grid = h.grid
    out = np.zeros_like(v)
    for beta, c in _power_coefficients(h.ginv, p + 1).items():
        out += c * grid.multi_derivative(v, beta)
    return (-1) ** p * out


@dataclass
class CancellationReport:
    modes: list
    residuals: list
    ratios: list

    def to_dict(self):
        return {"modes": self.modes, "residuals": self.residuals, "ratios": self.ratios}


def verify_leading_cancellation(h: MetricField, p: int, xi=None, modes=(4, 8, 16), eta=None,
                                spec: FlowSpec | None = None) -> CancellationReport:
    """Relative gap between ``L_h v`` and ``(-1)^p Ltilde^{p+1} v`` for single
    modes ``v = eta cos(k xi . x)``; a lower-order remainder makes the gap
    shrink like ``1/k``."""
    grid = h.grid
    n = grid.dim
    xi = np.array((1,) + (0,) * (n - 1) if xi is None else xi, float)
    eta = np.eye(n) if eta is None else np.asarray(eta, float)
    spec = FlowSpec("plap_ric", p, h, True) if spec is None else spec.with_background(h)
    xs = grid.mesh()
    residuals = []
    for k in modes:
        arg = sum(k * x * 2 * np.pi / L * X for x, L, X in zip(xi, grid.periods, xs))
        v = np.multiply.outer(eta, np.cos(arg))
        lin, _ = _linearize(h, spec, v)
        lead = leading_operator(h, v, p)
        residuals.append(float(np.max(np.abs(lin - lead)) / np.max(np.abs(lead))))
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(residuals, residuals[1:])]
    return CancellationReport(list(modes), residuals, ratios)
