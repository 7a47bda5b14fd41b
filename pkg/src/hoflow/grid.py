"""Periodic grids, tensor-valued grid functions and differentiation.

Arrays are stored component-axes first and grid axes last, so a metric on
a 3-torus with 32 points per axis has shape ``(3, 3, 32, 32, 32)``.  All
derivative, transform and interpolation routines act on the trailing
``grid.dim`` axes and broadcast over everything in front.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import DegenerateMetricError, GridMismatchError, NonFiniteError, UsageError

SCHEMES = ("central-2", "central-4", "spectral")
EIGEN_FLOOR = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on an n-torus.

    Args:
        dim: spatial dimension, 2, 3 or 4.
        sizes: points per axis, each at least 8.
        periods: coordinate period of each axis.
        scheme: ``"spectral"``, ``"central-4"`` or ``"central-2"``.
    """

    dim: int
    sizes: tuple
    periods: tuple
    scheme: str = "spectral"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if self.dim not in (2, 3, 4):
            raise UsageError(f"dim must be 2, 3 or 4, got {self.dim}")
        if len(self.sizes) != self.dim or len(self.periods) != self.dim:
            raise UsageError("sizes and periods must have one entry per axis")
        if min(self.sizes) < 8:
            raise UsageError(f"every axis needs at least 8 points, got {self.sizes}")
        if min(self.periods) <= 0:
            raise UsageError("periods must be positive")
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    @classmethod
    def cube(cls, dim, n, period=2 * np.pi, scheme="spectral"):
        return cls(dim, (n,) * dim, (period,) * dim, scheme)

    @property
    def scheme_order(self) -> float:
        """Formal accuracy order of the derivative scheme (inf for spectral)."""
        return {"central-2": 2.0, "central-4": 4.0}.get(self.scheme, float("inf"))

    def with_scheme(self, scheme):
        return Grid(self.dim, self.sizes, self.periods, scheme)

    def with_sizes(self, sizes):
        if np.isscalar(sizes):
            sizes = (sizes,) * self.dim
        return Grid(self.dim, tuple(sizes), self.periods, self.scheme)

    @property
    def shape(self):
        return self.sizes

    @property
    def axes(self):
        return tuple(range(-self.dim, 0))

    @cached_property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.periods, self.sizes))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.periods))

    def coords(self):
        """Per-axis 1-D coordinate arrays on ``[0, L_i)``."""
        return [np.arange(n) * h for n, h in zip(self.sizes, self.spacing)]

    def mesh(self):
        """Coordinate arrays of shape ``sizes``, one per axis."""
        return np.meshgrid(*self.coords(), indexing="ij")

    # ------------------------------------------------------------------
    # Fourier machinery (real transforms; last axis is the half axis)

    @cached_property
    def _spectral_shape(self):
        return self.sizes[:-1] + (self.sizes[-1] // 2 + 1,)

    @cached_property
    def wavenumbers(self):
        """Angular wavenumbers ``2*pi*m/L`` per axis, shaped to broadcast
        against an ``rfftn`` spectrum."""
        ks = []
        for a, (n, L) in enumerate(zip(self.sizes, self.periods)):
            if a == self.dim - 1:
                k = 2 * np.pi * sfft.rfftfreq(n, d=L / n)
            else:
                k = 2 * np.pi * sfft.fftfreq(n, d=L / n)
            shape = [1] * self.dim
            shape[a] = k.size
            ks.append(k.reshape(shape))
        return ks

    @cached_property
    def _nyquist_masks(self):
        masks = []
        for a, n in enumerate(self.sizes):
            shape = [1] * self.dim
            length = self._spectral_shape[a]
            shape[a] = length
            m = np.ones(length)
            if n % 2 == 0:
                m[n // 2] = 0.0
            masks.append(m.reshape(shape))
        return masks

    @cached_property
    def k_squared(self):
        return sum(k**2 for k in self.wavenumbers)

    def first_derivative_symbol(self, axis):
        """``i k_axis`` with the Nyquist bin removed."""
        return 1j * self.wavenumbers[axis] * self._nyquist_masks[axis]

    def derivative_symbol(self, multi_index):
        """Fourier symbol of ``D^beta``; odd powers lose the Nyquist bin."""
        sym = np.ones(self._spectral_shape, dtype=complex)
        for a, b in enumerate(multi_index):
            if b == 0:
                continue
            k = self.wavenumbers[a]
            factor = (1j * k) ** b
            if b % 2:
                factor = factor * self._nyquist_masks[a]
            sym = sym * factor
        return sym

    def rfft(self, arr):
        return sfft.rfftn(arr, axes=self.axes)

    def _diff_spectrum(self, arr):
        """Transform with the per-component mean removed first.  Derivatives
        ignore the mean anyway, and removing it keeps the round-off of an
        O(1) background out of the highly amplified high modes."""
        return self.rfft(arr - arr.mean(axis=self.axes, keepdims=True))

    def irfft(self, spec):
        return sfft.irfftn(spec, s=self.sizes, axes=self.axes)

    # ------------------------------------------------------------------
    # Finite-difference and spectral derivatives on raw arrays

    def _central(self, arr, axis, order):
        ax = arr.ndim - self.dim + axis
        h = self.spacing[axis]

        def r(s):
            return np.roll(arr, -s, axis=ax)

        if self.scheme == "central-2":
            if order == 1:
                return (r(1) - r(-1)) / (2 * h)
            return (r(1) - 2 * arr + r(-1)) / h**2
        if order == 1:
            return (8 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12 * h)
        return (-(r(2) + r(-2)) + 16 * (r(1) + r(-1)) - 30 * arr) / (12 * h**2)

    def diff(self, arr, axis, order=1):
        """Periodic derivative of a raw array along a grid axis."""
        if order not in (1, 2):
            raise UsageError("derivative order must be 1 or 2")
        if self.scheme != "spectral":
            return self._central(arr, axis, order)
        beta = [0] * self.dim
        beta[axis] = order
        return self.irfft(self._diff_spectrum(arr) * self.derivative_symbol(beta))

    def iter_derivatives(self, arr):
        """Yield ``(axis, d arr / d x_axis)``; one forward transform when spectral."""
        if self.scheme != "spectral":
            for a in range(self.dim):
                yield a, self._central(arr, a, 1)
            return
        spec = self._diff_spectrum(arr)
        for a in range(self.dim):
            yield a, self.irfft(spec * self.first_derivative_symbol(a))

    def divergence_along(self, X):
        """``sum_a d_a X[a]`` for an array whose first axis indexes the grid
        direction; a single inverse transform when spectral."""
        if self.scheme != "spectral":
            return sum(self._central(X[a], a, 1) for a in range(self.dim))
        spec = self._diff_spectrum(X)
        acc = spec[0] * self.first_derivative_symbol(0)
        for a in range(1, self.dim):
            acc = acc + spec[a] * self.first_derivative_symbol(a)
        return self.irfft(acc)

    def gradient(self, arr):
        """All first derivatives; the new index is placed last among the
        component axes: ``out[..., a, *grid] = d_a arr``."""
        parts = [d for _, d in self.iter_derivatives(arr)]
        return np.stack(parts, axis=arr.ndim - self.dim)

    def hessian(self, arr):
        """All second derivatives, two new trailing component indices:
        ``out[..., a, b, *grid] = d_a d_b arr``.  Pure second derivatives use
        the compact stencil for the central schemes."""
        lead = arr.shape[: arr.ndim - self.dim]
        out = np.empty(lead + (self.dim, self.dim) + self.sizes)
        spec = self._diff_spectrum(arr) if self.scheme == "spectral" else None
        for a in range(self.dim):
            for b in range(a, self.dim):
                if spec is not None:
                    beta = [0] * self.dim
                    beta[a] += 1
                    beta[b] += 1
                    d = self.irfft(spec * self.derivative_symbol(beta))
                elif a == b:
                    d = self._central(arr, a, 2)
                else:
                    d = self._central(self._central(arr, a, 1), b, 1)
                out[(Ellipsis, a, b) + (slice(None),) * self.dim] = d
                out[(Ellipsis, b, a) + (slice(None),) * self.dim] = d
        return out

    def multi_derivative(self, arr, multi_index):
        """``D^beta arr`` for a multi-index (tuple of per-axis orders)."""
        if self.scheme == "spectral":
            if sum(multi_index) == 0:
                return arr.copy()
            return self.irfft(self._diff_spectrum(arr) * self.derivative_symbol(multi_index))
        out = arr
        for a, b in enumerate(multi_index):
            for _ in range(b // 2):
                out = self._central(out, a, 2)
            if b % 2:
                out = self._central(out, a, 1)
        return out if out is not arr else arr.copy()

    def check_compatible(self, other):
        if other != self:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def packed_apply(arr, fn, dim):
    """Apply ``fn`` to the packed upper triangle of a symmetric ``(n, n, ...)``
    array and unpack, halving the work for symmetric inputs."""
    pairs = _packed_pairs(dim)
    packed = np.stack([arr[i, j] for i, j in pairs])
    res = fn(packed)
    out = np.empty((dim, dim) + res.shape[1:])
    for p, (i, j) in enumerate(pairs):
        out[i, j] = res[p]
        out[j, i] = res[p]
    return out


def _check_finite(data, what="field"):
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteError(f"{what} has a non-finite component at index {tuple(bad)}")


def _variance_ok(variance):
    return all(c in "ud" for c in variance)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Tensor-valued grid function.

    ``variance`` lists the slots in storage order, ``"u"`` for contravariant
    and ``"d"`` for covariant, so a Christoffel field is ``"udd"`` and a
    metric is ``"dd"``.  Data has shape ``(dim,) * rank + grid.sizes``.
    """

    grid: Grid
    data: np.ndarray
    variance: str = ""
    symmetric: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        if not _variance_ok(self.variance):
            raise UsageError(f"variance must use 'u'/'d' only, got {self.variance!r}")
        expected = (self.grid.dim,) * len(self.variance) + self.grid.sizes
        if data.shape != expected:
            raise UsageError(f"data shape {data.shape} does not match {expected}")
        _check_finite(data)
        if self.symmetric:
            if len(self.variance) != 2 or self.variance[0] != self.variance[1]:
                raise UsageError("symmetric flag needs a same-variance rank-2 field")
            if not np.array_equal(data, np.swapaxes(data, 0, 1)):
                raise UsageError("field flagged symmetric is not exactly symmetric")

    @property
    def rank(self):
        return (self.variance.count("u"), self.variance.count("d"))

    @property
    def order(self):
        return len(self.variance)

    def _like(self, data, symmetric=None):
        sym = self.symmetric if symmetric is None else symmetric
        return TensorField(self.grid, data, self.variance, sym)

    def _other(self, other):
        if isinstance(other, TensorField):
            self.grid.check_compatible(other.grid)
            if other.variance != self.variance:
                raise UsageError("variance mismatch in field arithmetic")
            return other.data, self.symmetric and other.symmetric
        return other, self.symmetric

    def __add__(self, other):
        d, s = self._other(other)
        return self._like(self.data + d, s)

    __radd__ = __add__

    def __sub__(self, other):
        d, s = self._other(other)
        return self._like(self.data - d, s)

    def __neg__(self):
        return self._like(-self.data)

    def __mul__(self, c):
        if isinstance(c, TensorField):
            return NotImplemented
        return self._like(self.data * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._like(self.data / c)

    def sup(self):
        """Sup norm over grid points and components."""
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def symmetrized(self):
        d = 0.5 * (self.data + np.swapaxes(self.data, 0, 1))
        return TensorField(self.grid, d, self.variance, True)


def scalar_field(grid, data):
    return TensorField(grid, data, "")


def _metric_inverse(grid, g):
    """Pointwise inverse and eigenvalue floor check for a ``(n, n, *grid)`` array."""
    n = grid.dim
    m = np.moveaxis(g.reshape(n, n, -1), -1, 0)
    eig = np.linalg.eigvalsh(m)
    lo = eig[:, 0]
    worst = int(np.argmin(lo))
    if not lo[worst] > EIGEN_FLOOR:
        idx = np.unravel_index(worst, grid.sizes)
        raise DegenerateMetricError(
            f"metric degenerate at grid point {tuple(int(i) for i in idx)}: "
            f"smallest eigenvalue {lo[worst]:.3e}",
            index=tuple(int(i) for i in idx),
            eigenvalue=float(lo[worst]),
        )
    inv = np.linalg.inv(m)
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    return np.ascontiguousarray(np.moveaxis(inv, 0, -1).reshape(g.shape))


class MetricField:
    """Pointwise positive-definite symmetric (0,2) field with cached inverse.

    Derived connection data (Christoffel symbols) is cached on first use;
    instances are treated as immutable.
    """

    def __init__(self, grid: Grid, data):
        data = np.asarray(data, dtype=float)
        data = 0.5 * (data + np.swapaxes(data, 0, 1))
        self.value = TensorField(grid, data, "dd", symmetric=True)
        self.inverse = TensorField(grid, _metric_inverse(grid, data), "uu", symmetric=True)
        self._cache = {}

    @classmethod
    def from_field(cls, field: TensorField):
        if field.variance != "dd":
            raise UsageError("a metric must be a covariant rank-2 field")
        return cls(field.grid, field.data)

    @classmethod
    def flat(cls, grid, diag=None):
        n = grid.dim
        diag = np.ones(n) if diag is None else np.asarray(diag, dtype=float)
        data = np.zeros((n, n) + grid.sizes)
        for i in range(n):
            data[i, i] = diag[i]
        return cls(grid, data)

    @property
    def grid(self):
        return self.value.grid

    @property
    def g(self):
        return self.value.data

    @property
    def ginv(self):
        return self.inverse.data

    @property
    def dim(self):
        return self.grid.dim

    def min_eigenvalue(self):
        n = self.dim
        m = np.moveaxis(self.g.reshape(n, n, -1), -1, 0)
        return float(np.linalg.eigvalsh(m)[:, 0].min())

    def identity_residual(self):
        """``max |g g^{-1} - delta|`` over the grid."""
        prod = np.einsum("ij...,jk...->ik...", self.g, self.ginv)
        eye = np.eye(self.dim).reshape((self.dim, self.dim) + (1,) * self.dim)
        return float(np.max(np.abs(prod - eye)))

    def cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def __add__(self, other):
        d = other.data if isinstance(other, TensorField) else other
        return MetricField(self.grid, self.g + d)

    def __sub__(self, other):
        d = other.data if isinstance(other, TensorField) else other
        return MetricField(self.grid, self.g - d)

    def scaled(self, factor):
        """``factor * g`` where factor is a number or a scalar array on the grid."""
        return MetricField(self.grid, self.g * factor)

    def __repr__(self):
        return f"MetricField(grid={self.grid}, min_eig={self.min_eigenvalue():.3g})"


# ----------------------------------------------------------------------
# Public grid operations


def partial_derivative(f: TensorField, axis: int, order: int = 1) -> TensorField:
    """Componentwise periodic derivative along one coordinate axis."""
    if not 0 <= axis < f.grid.dim:
        raise UsageError(f"axis {axis} out of range for dim {f.grid.dim}")
    _check_finite(f.data)
    return TensorField(f.grid, f.grid.diff(f.data, axis, order), f.variance, f.symmetric)


def _bspline_coefficients(grid, arr):
    """Periodic cubic B-spline coefficients along every grid axis."""
    spec = grid.rfft(arr)
    denom = np.ones(grid._spectral_shape)
    for k, h in zip(grid.wavenumbers, grid.spacing):
        denom = denom * (4.0 + 2.0 * np.cos(k * h)) / 6.0
    return grid.irfft(spec / denom)


def _bspline_weights(theta):
    t2 = theta * theta
    t3 = t2 * theta
    return np.stack(
        [
            (1 - theta) ** 3 / 6,
            (3 * t3 - 6 * t2 + 4) / 6,
            (-3 * t3 + 3 * t2 + 3 * theta + 1) / 6,
            t3 / 6,
        ]
    )


def _interp_cubic(grid, arr, pts):
    coef = _bspline_coefficients(grid, arr)
    lead = arr.shape[: arr.ndim - grid.dim]
    m = pts.shape[0]
    base, weights = [], []
    for a in range(grid.dim):
        s = pts[:, a] / grid.spacing[a]
        i0 = np.floor(s)
        base.append(i0.astype(np.int64))
        weights.append(_bspline_weights(s - i0))
    out = np.zeros(lead + (m,))
    for offs in itertools.product(range(4), repeat=grid.dim):
        idx = tuple((base[a] + offs[a] - 1) % grid.sizes[a] for a in range(grid.dim))
        w = np.ones(m)
        for a, o in enumerate(offs):
            w = w * weights[a][o]
        out += coef[(Ellipsis,) + idx] * w
    return out


def _interp_fourier(grid, arr, pts, chunk=2048):
    """Evaluate the trigonometric interpolant (full FFT) at scattered points."""
    lead = arr.shape[: arr.ndim - grid.dim]
    flat = arr.reshape((-1,) + grid.sizes)
    spec = sfft.fftn(flat, axes=grid.axes) / np.prod(grid.sizes)
    ks = [2 * np.pi * sfft.fftfreq(n, d=L / n) for n, L in zip(grid.sizes, grid.periods)]
    m = pts.shape[0]
    out = np.empty((flat.shape[0], m))
    for start in range(0, m, chunk):
        p = pts[start : start + chunk]
        # contract one axis at a time, innermost (last) first
        cur = spec  # (C, N0, ..., N_{d-1})
        e_last = np.exp(1j * np.outer(p[:, -1], ks[-1]))  # (mc, N_{d-1})
        cur = np.einsum("c...k,mk->cm...", cur, e_last)  # (C, mc, N0..N_{d-2})
        for a in range(grid.dim - 2, -1, -1):
            e = np.exp(1j * np.outer(p[:, a], ks[a]))
            cur = np.einsum("cm...k,mk->cm...", cur, e)
        out[:, start : start + chunk] = cur.real
    return out.reshape(lead + (m,))


def interpolate(f: TensorField, points, method: str = "cubic") -> np.ndarray:
    """Periodic interpolation of every component at arbitrary points.

    Args:
        f: field to sample.
        points: array ``(M, dim)`` of coordinates; wrapped into the
            fundamental domain.
        method: ``"cubic"`` (periodic cubic spline, C2, fourth-order
            accurate) or ``"fourier"`` (trigonometric interpolant, exact for
            band-limited data).

    Returns:
        Array of shape ``(dim,) * rank + (M,)``.  Both methods reproduce grid
        values exactly at grid nodes.
    """
    _check_finite(f.data)
    grid = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.dim:
        raise UsageError("points must have one coordinate per axis")
    pts = np.mod(pts, np.asarray(grid.periods))
    if method == "cubic":
        return _interp_cubic(grid, f.data, pts)
    if method == "fourier":
        return _interp_fourier(grid, f.data, pts)
    raise UsageError(f"unknown interpolation method {method!r}")


def fourier_multiplier(f: TensorField, m: Callable) -> TensorField:
    """Apply a real Fourier multiplier componentwise.

    ``m`` receives the list of per-axis angular wavenumber arrays (already
    broadcast against the real-transform spectrum) and returns the symbol.
    """
    grid = f.grid
    sym = np.asarray(m(grid.wavenumbers))
    if np.iscomplexobj(sym) and np.any(sym.imag != 0):
        raise UsageError("multiplier must be real-valued")
    sym = np.real(sym)
    out = grid.irfft(grid.rfft(f.data) * sym)
    return TensorField(grid, out, f.variance, False)


# ----------------------------------------------------------------------
# Snapshot files: one JSON header line, then row-major float64 payload.
# Symmetric rank-2 fields store only the packed upper triangle.


def _packed_pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def write_snapshot(path, f: TensorField, time: float = 0.0) -> Path:
    path = Path(path)
    grid = f.grid
    header = {
        "dim": grid.dim,
        "sizes": list(grid.sizes),
        "periods": list(grid.periods),
        "scheme": grid.scheme,
        "rank": list(f.rank),
        "variance": f.variance,
        "symmetric": bool(f.symmetric),
        "time": float(time),
    }
    if f.symmetric:
        payload = np.stack([f.data[i, j] for i, j in _packed_pairs(grid.dim)])
    else:
        payload = f.data
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())
    return path


def read_snapshot(path):
    """Return ``(TensorField, time)`` from a snapshot file."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    grid = Grid(header["dim"], header["sizes"], header["periods"], header.get("scheme", "spectral"))
    n = grid.dim
    variance = header["variance"]
    values = np.frombuffer(raw, dtype="<f8").astype(float)
    if header["symmetric"]:
        pairs = _packed_pairs(n)
        packed = values.reshape((len(pairs),) + grid.sizes)
        data = np.empty((n, n) + grid.sizes)
        for p, (i, j) in enumerate(pairs):
            data[i, j] = packed[p]
            data[j, i] = packed[p]
    else:
        data = values.reshape((n,) * len(variance) + grid.sizes)
    return TensorField(grid, data, variance, header["symmetric"]), header["time"]
