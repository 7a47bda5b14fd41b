import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoflow.diagnostics import (TimeSeries, ck_norm, convergence_rate, holder_seminorm,
                                interpolation_check, invariant_suite, parabolic_distance,
                                parabolic_distances)
from hoflow.errors import UsageError
from hoflow.evolve import imex_evolve
from hoflow.flows import FlowSpec
from hoflow.grid import Grid, MetricField, TensorField
from hoflow.samples import conformal_metric, random_smooth_metric, smooth_scalar


def test_parabolic_distance_examples():
    assert parabolic_distance(((0.3, 0.1), 0.2), ((0.3, 0.1), 0.2), 4) == 0.0
    assert parabolic_distance(((0.0,), 0.0), ((0.0,), 1.0), 4) == pytest.approx(1.0)
    assert parabolic_distance(((0.0,), 0.0), ((0.5,), 1e-4), 4) == pytest.approx(0.5)
    # wrapping: points near opposite ends of a period are close
    assert parabolic_distance(((0.1,), 0.0), ((6.0,), 0.0), 2, periods=(2 * np.pi,)) == pytest.approx(
        2 * np.pi - 5.9)


coord = st.floats(-10, 10, allow_nan=False)
point = st.tuples(st.tuples(coord, coord), st.floats(0, 5, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(point, point, point, st.sampled_from([2, 4, 6]))
def test_parabolic_distance_is_a_metric(a, b, c, m2):
    per = (2 * np.pi, 3.0)
    ab = parabolic_distance(a, b, m2, per)
    assert ab == pytest.approx(parabolic_distance(b, a, m2, per))
    assert ab <= parabolic_distance(a, c, m2, per) + parabolic_distance(c, b, m2, per) + 1e-12


def test_ck_norm_of_a_sine():
    grid = Grid(2, (32, 8), (2 * np.pi,) * 2)
    x = grid.mesh()[0]
    # |sin| + |cos| + |sin''| + ... each at most 2^i
    assert ck_norm(np.sin(2 * x), grid, 2) == pytest.approx(1 + 2 + 4, rel=1e-12)


def test_constant_field_has_zero_seminorm():
    grid = Grid.cube(2, 16)
    u = TensorField(grid, np.full(grid.sizes, 3.0), "")
    rep = holder_seminorm(u, 0.5, 4, pair_budget=3000)
    assert rep.seminorm == 0.0 and rep.full_norm == pytest.approx(3.0)


def _dense_oracle(vals, pts, alpha, periods):
    best = 0.0
    for i, j in itertools.combinations(range(len(vals)), 2):
        d = parabolic_distances(pts[i], 0.0, pts[j], 0.0, 2, periods)
        best = max(best, abs(vals[i] - vals[j]) / d**alpha)
    return best


def test_sampled_seminorm_against_dense_pairs():
    L = 2 * np.pi
    grid = Grid(2, (12, 8), (L, L))
    x = grid.mesh()[0]
    u = np.sin(2 * np.pi * x / L)
    pts = np.stack([m.ravel() for m in grid.mesh()], axis=1)
    oracle = _dense_oracle(u.ravel(), pts, 0.5, grid.periods)
    rep = holder_seminorm(TensorField(grid, u, ""), 0.5, 2, pair_budget=20000)
    assert rep.seminorm <= oracle * (1 + 1e-12)
    assert rep.seminorm >= 0.85 * oracle
    assert rep.seminorm <= rep.full_norm


def test_time_ramp_quotients():
    grid = Grid.cube(2, 16)
    v = smooth_scalar(grid, 0.3, seed=1)
    times = np.linspace(0, 1e-2, 5)
    series = TimeSeries(grid, times, np.stack([t * v[None] for t in times]))
    alpha, m2 = 0.5, 4
    rep = holder_seminorm(series, alpha, m2, pair_budget=20000)
    closed = times[-1] ** (1 - alpha / m2) * np.max(np.abs(v))
    assert rep.strata["time"] <= closed * (1 + 1e-12)
    assert rep.strata["time"] >= 0.85 * closed


def test_seminorm_is_monotone_in_budget():
    grid = Grid.cube(2, 16)
    u = TensorField(grid, random_smooth_metric(grid, 0.2, 2, seed=2).g, "dd")
    vals = [holder_seminorm(u, 0.3, 2, pair_budget=b).seminorm for b in (300, 3000, 30000)]
    assert vals[0] <= vals[1] <= vals[2]
    with pytest.raises(UsageError):
        holder_seminorm(u, 1.0, 2)


def test_interpolation_check_examples():
    grid = Grid.cube(2, 16)
    const = TimeSeries(grid, [0, 1, 2], np.ones((3, 1) + grid.sizes))
    assert interpolation_check(const, 0.5).passed
    s = smooth_scalar(grid, 1.0, 2, seed=3)
    static = TimeSeries(grid, [0, 1, 2], np.stack([s[None]] * 3))
    res = interpolation_check(static, 0.5)
    assert res.passed and res.parts["time_term"] == 0.0 and res.margin >= 0
    with pytest.raises(UsageError):
        interpolation_check(TimeSeries(grid, [0, 1], np.ones((2, 1) + grid.sizes)), 0.5)


def test_convergence_rate():
    assert convergence_rate([1.0, 1 / 16], [10, 20]) == [pytest.approx(4.0)]
    assert convergence_rate([1.0, 0.0], [10, 20]) == [np.inf]


def test_invariant_suite_flat_and_reproducible():
    flat = MetricField.flat(Grid.cube(4, 8))
    names = ("trace_free", "div_free", "conformal_covariance", "naturality", "steady_state")
    rep = invariant_suite(flat, names, rho=1.3)
    # the pulled-back flat metric is not band-limited, so naturality is only small
    assert rep.residuals.pop("naturality")[0] < 1e-6
    assert all(v == [0.0] for v in rep.residuals.values()) and rep.rates == {}
    g = random_smooth_metric(Grid.cube(4, 8), 0.05, seed=4)
    a = invariant_suite(g, ("naturality",), seed=7).to_json()
    b = invariant_suite(g, ("naturality",), seed=7).to_json()
    assert a == b
    with pytest.raises(UsageError):
        invariant_suite(g, ("conformal_covariance",))
    with pytest.raises(UsageError):
        invariant_suite(g, ("stationarity",))
    with pytest.raises(UsageError):
        invariant_suite(g, ("bogus",))
    with pytest.raises(UsageError):
        invariant_suite(MetricField.flat(Grid.cube(3, 8)), ("trace_free",))


def test_invariant_suite_rates_on_two_resolutions():
    gs = [random_smooth_metric(Grid.cube(2, n, scheme="central-4"), 0.1, seed=5) for n in (16, 32)]
    rep = invariant_suite(gs, ("naturality",))
    assert rep.resolutions == [16, 32]
    assert rep.rates["naturality"][0] > 3.0


def test_invariant_suite_on_trajectory():
    grid = Grid.cube(2, 16)
    traj = imex_evolve(MetricField.flat(grid), FlowSpec("plap_ric", 1), 1e-4, 5)
    rep = invariant_suite(traj, ("stationarity",))
    assert rep.residuals["stationarity"] == [0.0]
    g = conformal_metric(grid, smooth_scalar(grid, 0.1, seed=6))
    assert invariant_suite(g, ("steady_state",)).residuals["steady_state"][0] > 0
