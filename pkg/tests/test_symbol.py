import numpy as np
import pytest

from hoflow.errors import InconclusiveSymbolError, UsageError
from hoflow.flows import FlowSpec
from hoflow.grid import Grid, MetricField, TensorField
from hoflow.samples import conformal_metric, random_smooth_metric, smooth_scalar
from hoflow.symbol import (allowed_wavevectors, ellipticity_check, linearize_at,
                           principal_symbol, principal_symbols, taylor_split,
                           verify_leading_cancellation)

G24 = Grid.cube(2, 24)
G48 = Grid.cube(2, 48)


def _sup(a):
    return float(np.max(np.abs(a)))


def _pert(grid, amp, seed):
    return TensorField(grid, random_smooth_metric(grid, amp, seed=seed).g - np.eye(grid.dim)[:, :, None, None], "dd")


def test_linearization_of_zero_is_zero():
    h = MetricField.flat(G24)
    z = TensorField(G24, np.zeros((2, 2) + G24.sizes), "dd")
    assert _sup(linearize_at(h, FlowSpec("plap_ric", 1), z).data) == 0.0


def test_flat_ricci_deturck_linearization_is_laplacian():
    h = MetricField.flat(G24)
    v = _pert(G24, 0.1, 1)
    lin = linearize_at(h, FlowSpec("plap_ric", 0), v).data
    lap = sum(G24.diff(v.data, a, 2) for a in range(2))
    assert _sup(lin - lap) < 1e-8 * _sup(lap)


def test_linearization_is_linear():
    h = random_smooth_metric(G24, 0.1, seed=2)
    spec = FlowSpec("plap_ric", 1)
    v1, v2 = _pert(G24, 0.1, 3), _pert(G24, 0.1, 4)
    comb = TensorField(G24, 2.0 * v1.data - 0.5 * v2.data, "dd")
    lhs = linearize_at(h, spec, comb).data
    rhs = 2.0 * linearize_at(h, spec, v1).data - 0.5 * linearize_at(h, spec, v2).data
    assert _sup(lhs - rhs) < 1e-8 * _sup(rhs)


def test_taylor_split_at_flat():
    h = MetricField.flat(G24)
    split = taylor_split(h, FlowSpec("plap_ric", 1))
    assert _sup(split.inhomogeneous.data) == 0.0
    v = _pert(G24, 0.05, 5)
    total = split.inhomogeneous.data + split.linear_apply(v).data + split.quadratic_apply(v).data
    assert _sup(total - split.evaluate(v).data) < 1e-12


def test_quadratic_remainder_scales_quadratically():
    h = random_smooth_metric(G24, 0.05, seed=6)
    split = taylor_split(h, FlowSpec("plap_ric", 0))
    v = _pert(G24, 0.1, 7)
    q = [split.quadratic_apply(TensorField(G24, s * v.data, "dd")).sup() / s**2 for s in (0.2, 0.1, 0.05)]
    assert q[2] / q[1] == pytest.approx(1.0, rel=0.1)
    assert q[1] / q[0] == pytest.approx(1.0, rel=0.2)


def test_difference_of_squares_constant_is_finite():
    h = MetricField.flat(G24)
    split = taylor_split(h, FlowSpec("plap_ric", 0))
    pairs = [(_pert(G24, 0.05, 10 + k), _pert(G24, 0.05, 20 + k)) for k in range(3)]
    C = split.lipschitz_constant(pairs)
    assert np.isfinite(C) and C > 0
    assert split.quadratic_constant([p[0] for p in pairs]) <= 2 * C + 1e-12


@pytest.mark.parametrize("p", [0, 1, 2])
def test_flat_symbol_identity(p):
    h = MetricField.flat(G48)
    eta = np.array([[1.0, 0.3], [0.3, -0.5]])
    val = principal_symbol(h, FlowSpec("plap_ric", p), (1, 2), eta)
    xi2 = 1.0 + 4.0
    assert val == pytest.approx(xi2 ** (p + 1) * np.sum(eta * eta), rel=1e-6)


def test_symbol_homogeneity_and_quadratic_in_eta():
    h = random_smooth_metric(G48, 0.05, seed=8)
    spec = FlowSpec("plap_ric", 1)
    eta = np.array([[0.4, 0.2], [0.2, 1.0]])
    s = principal_symbols(h, spec, [(1, 0), (2, 0), (1, 0)], [eta, eta, 3 * eta])
    assert s[1].value / s[0].value == pytest.approx(2.0**4, rel=1e-6)
    assert s[2].value / s[0].value == pytest.approx(9.0, rel=1e-6)


def test_flat_symbol_is_isotropic():
    grid = Grid.cube(2, 120)
    h = MetricField.flat(grid)
    eta = np.eye(2)
    # (3,4) and (5,0) share the length 5
    a, b = principal_symbols(h, FlowSpec("plap_ric", 0), [(3, 4), (5, 0)], [eta, eta])
    assert a.value == pytest.approx(b.value, rel=1e-8)


def test_zero_direction_gives_zero():
    h = MetricField.flat(G24)
    assert principal_symbol(h, FlowSpec("plap_ric", 1), (1, 0), np.zeros((2, 2))) == 0.0


def test_obstruction_symbol_is_positive_multiple():
    grid = Grid(4, (24, 24, 8, 8), (2 * np.pi,) * 4)
    h = MetricField.flat(grid)
    eta = np.diag([1.0, -1.0, 0.5, 0.0])
    ob = principal_symbol(h, FlowSpec("obstruction4", 0), (1, 1, 0, 0), eta)
    pl = principal_symbol(h, FlowSpec("plap_ric", 1), (1, 1, 0, 0), eta)
    assert ob / pl == pytest.approx(0.25, rel=1e-6)


def test_ellipticity_flat_and_nonflat():
    rep = ellipticity_check(MetricField.flat(G24), FlowSpec("plap_ric", 1), 50, seed=0)
    assert rep.passed and rep.lambda_est == pytest.approx(1.0, abs=1e-6)
    h = conformal_metric(G24, smooth_scalar(G24, 0.2, seed=9))
    rep2 = ellipticity_check(h, FlowSpec("plap_ric", 0), 50, seed=0)
    assert rep2.passed and rep2.lambda_est > 0.5
    d = rep2.to_dict()
    assert set(d) >= {"order", "lambda_est", "samples", "pass"}
    with pytest.raises(UsageError):
        ellipticity_check(h, FlowSpec("plap_ric", 0), 10)


def test_gauge_degeneracy_without_deturck():
    h = MetricField.flat(G24)
    rep = ellipticity_check(h, FlowSpec("plap_ric", 0, deturck=False), 50, seed=1)
    assert not rep.passed and rep.lambda_est < 1e-3


def test_rescaled_background_keeps_verdict():
    h = MetricField.flat(G24)
    spec = FlowSpec("plap_ric", 1)
    a = ellipticity_check(h, spec, 50, seed=2)
    b = ellipticity_check(MetricField(G24, 2.0 * h.g), spec, 50, seed=2)
    assert a.argmin == b.argmin and a.passed == b.passed
    # normalized values use h-norms, so they do not move under h -> c h
    assert b.lambda_est == pytest.approx(a.lambda_est, rel=1e-6)
    raw = b.samples[0].value / a.samples[0].value
    # |xi|_h^{2m} |eta|_h^2 scales as c^{-m} c^{-2}
    assert raw == pytest.approx(2.0 ** -(2 + 2), rel=1e-6)


def test_wavevector_admissibility():
    lat = allowed_wavevectors(G24)
    assert (1, 0) in lat and (0, 1) in lat and (1, 1) in lat
    assert all(abs(x) * 3 <= 3 for xi in lat for x in xi)
    with pytest.raises(UsageError):
        principal_symbol(MetricField.flat(G24), FlowSpec("plap_ric", 0), (2, 0), np.eye(2))
    with pytest.raises(UsageError):
        allowed_wavevectors(Grid.cube(2, 16))


def test_fit_residual_above_tolerance_raises(monkeypatch):
    from hoflow import symbol

    monkeypatch.setattr(symbol, "FIT_RTOL", -1.0)
    with pytest.raises(InconclusiveSymbolError):
        principal_symbol(MetricField.flat(G24), FlowSpec("plap_ric", 0), (1, 0), np.eye(2))


def test_leading_cancellation():
    flat = MetricField.flat(Grid.cube(2, 32))
    assert max(verify_leading_cancellation(flat, 0, modes=(2, 4, 8)).residuals) < 1e-10
    # fourth derivatives of low modes sit on a round-off floor near 2e-10
    assert max(verify_leading_cancellation(flat, 1, modes=(2, 4, 8)).residuals) < 1e-9
    grid = Grid(2, (128, 8), (2 * np.pi,) * 2)
    h = conformal_metric(grid, 0.1 * np.sin(grid.mesh()[0]))
    for p in (0, 1):
        rep = verify_leading_cancellation(h, p, xi=(1, 0), modes=(4, 8, 16))
        assert all(0.4 < r < 0.6 for r in rep.ratios)
