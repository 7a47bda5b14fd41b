"""Smooth test metrics on periodic grids."""

from __future__ import annotations

import numpy as np

from .grid import Grid, MetricField


def flat_metric(grid: Grid, diag=None) -> MetricField:
    return MetricField.flat(grid, diag)


def conformal_metric(grid: Grid, u) -> MetricField:
    """``e^{2u} delta`` for a scalar array ``u``."""
    n = grid.dim
    eye = np.eye(n).reshape((n, n) + (1,) * n)
    return MetricField(grid, np.exp(2 * np.asarray(u)) * eye)


def conformal_factor_metric(grid: Grid, factor) -> MetricField:
    """``factor^2 delta``, e.g. ``(1 + 0.01 sin x)^2 delta``."""
    return conformal_metric(grid, np.log(np.asarray(factor)))


def smooth_scalar(grid: Grid, amplitude=0.1, max_mode=1, seed=0, modes=4):
    """Sum of a few random low Fourier modes with sup-norm at most ``amplitude``."""
    rng = np.random.default_rng(seed)
    xs = grid.mesh()
    out = np.zeros(grid.sizes)
    for _ in range(modes):
        k = rng.integers(-max_mode, max_mode + 1, size=grid.dim)
        if not np.any(k):
            k[rng.integers(grid.dim)] = 1
        arg = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, xs, grid.periods))
        out += rng.normal() * np.sin(arg + rng.uniform(0, 2 * np.pi))
    peak = np.max(np.abs(out))
    return amplitude * out / peak if peak > 0 else out


def random_smooth_metric(grid: Grid, amplitude=0.05, max_mode=1, seed=0) -> MetricField:
    """``delta + eps`` with every entry of ``eps`` a smooth random scalar of
    sup-norm ``amplitude``; low modes keep finite-difference errors in
    their asymptotic regime on coarse grids."""
    n = grid.dim
    data = np.zeros((n, n) + grid.sizes)
    for i in range(n):
        data[i, i] = 1.0
        for j in range(i, n):
            f = smooth_scalar(grid, amplitude, max_mode, seed=(seed, i, j), modes=2)
            data[i, j] += f
            if i != j:
                data[j, i] += f
    return MetricField(grid, data)
