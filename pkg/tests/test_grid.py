import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoflow.errors import DegenerateMetricError, GridMismatchError, NonFiniteError, UsageError
from hoflow.grid import (Grid, MetricField, TensorField, fourier_multiplier, interpolate,
                         partial_derivative, read_snapshot, scalar_field, write_snapshot)

L = 3.0


def line(n, scheme="spectral"):
    """Effectively one-dimensional grid: x resolved, y minimal."""
    return Grid(2, (n, 8), (L, L), scheme)


def sine(grid, axis=0, k=1):
    x = grid.mesh()[axis]
    return np.sin(2 * np.pi * k * x / L)


def test_constant_field_has_zero_derivative():
    for scheme in ("spectral", "central-2", "central-4"):
        g = Grid.cube(2, 16, L, scheme)
        f = scalar_field(g, np.full(g.sizes, 2.5))
        assert np.max(np.abs(partial_derivative(f, 0).data)) == 0.0


def test_spectral_derivative_of_sine():
    g = line(64)
    x = g.mesh()[0]
    d = partial_derivative(scalar_field(g, sine(g)), 0).data
    assert np.max(np.abs(d - 2 * np.pi / L * np.cos(2 * np.pi * x / L))) < 1e-12


@pytest.mark.parametrize("scheme,order", [("central-2", 2), ("central-4", 4)])
def test_central_schemes_converge_at_their_order(scheme, order):
    errs = []
    for n in (32, 64):
        g = line(n, scheme)
        x = g.mesh()[0]
        d = g.diff(sine(g), 0)
        errs.append(np.max(np.abs(d - 2 * np.pi / L * np.cos(2 * np.pi * x / L))))
    ratio = errs[0] / errs[1]
    assert abs(ratio / 2**order - 1) < 0.1


def test_hessian_matches_repeated_first_derivatives():
    g = Grid.cube(2, 32, L)
    x, y = g.mesh()
    u = np.sin(2 * np.pi * x / L) * np.cos(4 * np.pi * y / L)
    H = g.hessian(u)
    assert np.allclose(H[0, 1], g.diff(g.diff(u, 0), 1), atol=1e-11)
    assert np.allclose(H[1, 1], g.diff(u, 1, 2), atol=1e-11)


def test_divergence_along_matches_sum_of_partials():
    for scheme in ("spectral", "central-4"):
        g = Grid.cube(2, 24, L, scheme)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(2, 3) + g.sizes)
        ref = g.diff(X[0], 0) + g.diff(X[1], 1)
        assert np.allclose(g.divergence_along(X), ref, atol=1e-12)


def test_interpolation_at_nodes_is_exact():
    g = Grid.cube(2, 16, L)
    rng = np.random.default_rng(1)
    f = TensorField(g, rng.normal(size=(2,) + g.sizes), "d")
    idx = rng.integers(0, 16, size=(20, 2))
    pts = idx * L / 16
    for method in ("cubic", "fourier"):
        vals = interpolate(f, pts, method)
        assert np.allclose(vals, f.data[:, idx[:, 0], idx[:, 1]], atol=1e-12)


def test_cubic_interpolation_is_fourth_order():
    errs = []
    for n in (16, 32):
        g = line(n)
        f = scalar_field(g, np.cos(2 * np.pi * g.mesh()[0] / L))
        mid = np.stack([(np.arange(n) + 0.5) * L / n, np.zeros(n)], axis=1)
        errs.append(np.max(np.abs(interpolate(f, mid) - np.cos(2 * np.pi * mid[:, 0] / L))))
    assert errs[0] / errs[1] > 14


def test_interpolation_of_constant_and_wrapping():
    g = Grid.cube(2, 8, L)
    f = scalar_field(g, np.full(g.sizes, 4.0))
    pts = np.random.default_rng(2).uniform(-10, 10, size=(50, 2))
    assert np.allclose(interpolate(f, pts), 4.0)
    assert np.allclose(interpolate(f, pts, "fourier"), 4.0)


def test_fourier_multiplier_examples():
    g = Grid.cube(2, 32, L)
    u = scalar_field(g, sine(g, 1, 2))
    assert np.allclose(fourier_multiplier(u, lambda k: np.ones_like(k[0])).data, u.data, atol=1e-12)
    k2 = (2 * np.pi * 2 / L) ** 2
    heat = fourier_multiplier(u, lambda k: np.exp(-0.01 * (k[0] ** 2 + k[1] ** 2)))
    assert np.allclose(heat.data, np.exp(-0.01 * k2) * u.data, atol=1e-12)
    lap = fourier_multiplier(u, lambda k: -(k[0] ** 2 + k[1] ** 2))
    assert np.allclose(lap.data, g.diff(u.data, 1, 2), atol=1e-10)


def test_operations_are_linear_and_shift_equivariant():
    g = Grid.cube(2, 16, L)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2,) + g.sizes)
    for scheme in ("spectral", "central-4"):
        gg = g.with_scheme(scheme)
        assert np.allclose(gg.diff(2 * a - 3 * b, 0), 2 * gg.diff(a, 0) - 3 * gg.diff(b, 0), atol=1e-12)
        shifted = gg.diff(np.roll(a, 1, axis=0), 0)
        assert np.allclose(shifted, np.roll(gg.diff(a, 0), 1, axis=0), atol=1e-12)


def test_degenerate_metric_names_worst_point():
    g = Grid.cube(2, 8, L)
    data = np.zeros((2, 2) + g.sizes)
    data[0, 0] = data[1, 1] = 1.0
    data[1, 1, 3, 5] = 1e-12
    with pytest.raises(DegenerateMetricError) as err:
        MetricField(g, data)
    assert err.value.index == (3, 5)


def test_non_finite_and_mismatch_errors():
    g = Grid.cube(2, 8, L)
    bad = np.ones(g.sizes)
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        TensorField(g, bad, "")
    with pytest.raises(GridMismatchError):
        g.check_compatible(Grid.cube(2, 10, L))
    with pytest.raises(UsageError):
        Grid.cube(2, 8, L, "upwind")


def test_snapshot_round_trip(tmp_path):
    g = Grid.cube(3, 8, L, "central-4")
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 3) + g.sizes)
    m = MetricField(g, np.eye(3)[:, :, None, None, None] + 0.05 * (a + a.transpose(1, 0, 2, 3, 4)))
    write_snapshot(tmp_path / "m.snap", m.value, time=0.25)
    f, t = read_snapshot(tmp_path / "m.snap")
    assert t == 0.25 and f.grid == g and f.variance == "dd"
    assert np.array_equal(f.data, m.g)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0.1, 5.0))
def test_single_mode_derivative_is_exact_spectrally(k, amp):
    g = line(32)
    x = g.mesh()[0]
    d = g.diff(amp * np.sin(2 * np.pi * k * x / L), 0)
    assert np.allclose(d, amp * 2 * np.pi * k / L * np.cos(2 * np.pi * k * x / L), atol=1e-11 * amp * k)
