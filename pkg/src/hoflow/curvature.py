"""Christoffel symbols, curvature tensors, covariant derivatives and rough
Laplacians on periodic grids.

Conventions
-----------
``Gamma[k, i, j]`` is the Christoffel symbol with the upper index first.
``R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + ...`` and the lowered
``R_{abcd} = g_{ae} R^e_{bcd}`` is positive on coordinate 2-planes of a round
sphere (``R_{abab} > 0``).  Ricci contracts the first and third slots,
``Ric_{bd} = g^{ac} R_{abcd}``.  A covariant derivative appends its index
last: ``(nabla T)_{i..j;c}`` lives in the final component slot.

The whole curvature stack of one call uses the grid's differentiation scheme.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .grid import MetricField, TensorField, packed_apply

_L = string.ascii_lowercase[:16]


# ----------------------------------------------------------------------
# raw-array kernels


def _metric_gradient(g: MetricField):
    return g.cached("dg", lambda: packed_apply(g.g, g.grid.gradient, g.dim))


def _metric_hessian(g: MetricField):
    """``H[c, d, a, b] = d_a d_b g_cd``."""
    return packed_apply(g.g, g.grid.hessian, g.dim)


def _gamma_array(g: MetricField):
    def build():
        grid = g.grid
        dg = _metric_gradient(g)  # dg[i, j, c] = d_c g_ij
        low = 0.5 * (
            np.einsum("jli...->lij...", dg)
            + np.einsum("ilj...->lij...", dg)
            - np.einsum("ijl...->lij...", dg)
        )
        return np.einsum("kl...,lij...->kij...", g.ginv, low)

    return g.cached("gamma", build)


def _cov_grad(arr, variance, gamma, grid):
    """Covariant gradient of a raw array; new covariant slot appended last."""
    order = len(variance)
    out = grid.gradient(arr)
    if order == 0:
        return out
    L = _L[:order]
    z, y = "z", "y"
    for s, v in enumerate(variance):
        src = L[:s] + y + L[s + 1 :]
        dst = L + z
        if v == "d":
            out -= np.einsum(f"{y}{z}{L[s]}...,{src}...->{dst}...", gamma, arr)
        else:
            out += np.einsum(f"{L[s]}{z}{y}...,{src}...->{dst}...", gamma, arr)
    return out


def _divergence(arr, variance, slot, g: MetricField):
    """Metric trace of ``nabla T`` between ``slot`` and the derivative slot.

    Algebraically identical to building the full covariant gradient and
    contracting, without materialising it."""
    grid = g.grid
    gamma = _gamma_array(g)
    order = len(variance)
    L = _L[:order]
    b = "z"
    down = variance[slot] == "d"
    # G2[b, m, i] = g^{ab} Gamma^m_{ai} for a covariant slot, Gamma^m_{bi} otherwise
    if down:
        G2 = g.cached("gamma_raised", lambda: np.einsum("ab...,mai...->bmi...", g.ginv, gamma))
    else:
        G2 = np.einsum("mbi...->bmi...", gamma)
    rest = L[:slot] + L[slot + 1 :]
    tsub = L[:slot] + b + L[slot + 1 :]

    if grid.scheme == "spectral":
        # product rule: one inverse transform per output component instead of
        # one per component and axis; equal to the direct form up to aliasing
        if down:
            X = np.einsum(f"x{b}...,{tsub}...->x{rest}...", g.ginv, arr)
            dg = g.cached("div_ginv", lambda: grid.divergence_along(g.ginv))
            out = grid.divergence_along(X) - np.einsum(f"{b}...,{tsub}...->{rest}...", dg, arr)
        else:
            out = grid.divergence_along(np.moveaxis(arr, slot, 0))
    else:
        out = None
        for a, d in grid.iter_derivatives(arr):
            if down:
                term = np.einsum(f"{b}...,{tsub}...->{rest}...", g.ginv[a], d)
            else:
                term = np.take(d, a, axis=slot)
            out = term if out is None else out + term

    y = "y"
    for s, v in enumerate(variance):
        if s == slot:
            src = L[:slot] + y + L[slot + 1 :]
            if down:
                out -= np.einsum(f"{b}{y}{b}...,{src}...->{rest}...", G2, arr)
            else:
                out += np.einsum(f"{b}{b}{y}...,{src}...->{rest}...", G2, arr)
            continue
        lt = list(L)
        lt[slot] = b
        lt[s] = y
        src = "".join(lt)
        if v == "d":
            out -= np.einsum(f"{b}{y}{L[s]}...,{src}...->{rest}...", G2, arr)
        else:
            out += np.einsum(f"{b}{L[s]}{y}...,{src}...->{rest}...", G2, arr)
    return out


def _laplacian(arr, variance, g: MetricField, p=1):
    """``p`` passes of ``g^{jk} nabla_j nabla_k``."""
    gamma = _gamma_array(g)
    for _ in range(p):
        nab = _cov_grad(arr, variance, gamma, g.grid)
        arr = _divergence(nab, variance + "d", len(variance), g)
    return arr


def _build_riemann(g: MetricField):
    """Fully covariant Riemann tensor, built in place to limit temporaries.

    Uses the second-derivative form
    ``R_abcd = (d_b d_c g_ad + d_a d_d g_bc - d_a d_c g_bd - d_b d_d g_ac) / 2
    + g_ef (Gamma^e_bc Gamma^f_ad - Gamma^e_bd Gamma^f_ac)``,
    whose algebraic symmetries hold to round-off for every scheme.
    """
    gamma = _gamma_array(g)
    H = _metric_hessian(g)
    R = np.einsum("adbc...->abcd...", H).copy()
    R += np.einsum("bcad...->abcd...", H)
    R -= np.einsum("bdac...->abcd...", H)
    R -= np.einsum("acbd...->abcd...", H)
    del H
    R *= 0.5
    gl = np.einsum("ef...,fad...->ead...", g.g, gamma)  # lowered Gamma_{e a d}
    q = np.einsum("ebc...,ead...->abcd...", gamma, gl)
    R += q
    R -= np.einsum("abcd...->abdc...", q)
    return R


def _riemann_lower(g: MetricField):
    return g.cached("riemann", lambda: _build_riemann(g))


def _ricci(g: MetricField):
    """``g^{ac} R_{abcd}`` assembled without the full Riemann tensor."""

    def build():
        if "riemann" in g._cache:
            return np.einsum("ac...,abcd...->bd...", g.ginv, g._cache["riemann"])
        gi = g.ginv
        H = _metric_hessian(g)
        D = np.einsum("ac...,adbc...->bd...", gi, H)
        ric = 0.5 * (D + np.swapaxes(D, 0, 1))
        ric -= 0.5 * np.einsum("ac...,bdac...->bd...", gi, H)
        ric -= 0.5 * np.einsum("ac...,acbd...->bd...", gi, H)
        del H
        gamma = _gamma_array(g)
        gl = np.einsum("ef...,fad...->ead...", g.g, gamma)
        # g^{ac} (Gamma^e_bc Gamma_ead - Gamma^e_bd Gamma_eac)
        ric += np.einsum("ac...,ebc...,ead...->bd...", gi, gamma, gl, optimize=True)
        trace_gl = np.einsum("ac...,eac...->e...", gi, gl)
        ric -= np.einsum("ebd...,e...->bd...", gamma, trace_gl)
        return ric

    return g.cached("ricci", build)


def _scalar(g: MetricField):
    return g.cached("scalar", lambda: np.einsum("bd...,bd...->...", g.ginv, _ricci(g)))


def _schouten(g: MetricField, n=None, ric=None, S=None):
    n = g.dim if n is None else n
    if n < 3:
        raise UsageError("the Schouten tensor needs n >= 3")
    ric = _ricci(g) if ric is None else ric
    S = _scalar(g) if S is None else S
    return (ric - S * g.g / (2.0 * (n - 1))) / (n - 2)


def _kulkarni_nomizu(P, gg):
    """``(P wedge g)_{abcd} = P_ac g_bd + P_bd g_ac - P_ad g_bc - P_bc g_ad``."""
    out = np.einsum("ac...,bd...->abcd...", P, gg)
    out += np.einsum("bd...,ac...->abcd...", P, gg)
    out -= np.einsum("ad...,bc...->abcd...", P, gg)
    out -= np.einsum("bc...,ad...->abcd...", P, gg)
    return out


def _weyl(g: MetricField):
    def build():
        if "riemann" in g._cache:
            W = g._cache["riemann"].copy()
        else:
            W = _build_riemann(g)
            g.cached("ricci", lambda: np.einsum("ac...,abcd...->bd...", g.ginv, W))
        P = _schouten(g)
        W -= np.einsum("ac...,bd...->abcd...", P, g.g)
        W -= np.einsum("bd...,ac...->abcd...", P, g.g)
        W += np.einsum("ad...,bc...->abcd...", P, g.g)
        W += np.einsum("bc...,ad...->abcd...", P, g.g)
        return W

    return g.cached("weyl", build)


def _hessian(u, g: MetricField):
    gamma = _gamma_array(g)
    return _cov_grad(_cov_grad(u, "", gamma, g.grid), "d", gamma, g.grid)


def _bach(g: MetricField):
    def build():
        W = _weyl(g)
        D = _divergence(W, "dddd", 3, g)  # nabla^l W_{ikjl}
        B = _divergence(D, "ddd", 1, g)  # nabla^k of that
        del D
        P = _schouten(g)
        Pup = np.einsum("ka...,lb...,ab...->kl...", g.ginv, g.ginv, P, optimize=True)
        B += np.einsum("kl...,ikjl...->ij...", Pup, W)
        return B

    return g.cached("bach_raw", build)


# ----------------------------------------------------------------------
# public operations


@dataclass
class CurvaturePack:
    """Curvature of one metric: ``riemann`` is fully covariant."""

    riemann: TensorField
    ricci: TensorField
    scalar: TensorField
    schouten: TensorField | None = None
    weyl: TensorField | None = None


def christoffel(g: MetricField) -> TensorField:
    """Christoffel symbols ``Gamma^k_{ij}`` (variance ``"udd"``)."""
    gam = _gamma_array(g)
    gam = 0.5 * (gam + np.swapaxes(gam, 1, 2))
    return TensorField(g.grid, gam, "udd")


def difference_tensor(g: MetricField, h: MetricField) -> TensorField:
    """``A^k_{ij} = Gamma(g)^k_{ij} - Gamma(h)^k_{ij}``."""
    g.grid.check_compatible(h.grid)
    return TensorField(g.grid, _gamma_array(g) - _gamma_array(h), "udd")


def riemann_ricci_scalar(g: MetricField) -> CurvaturePack:
    grid = g.grid
    return CurvaturePack(
        riemann=TensorField(grid, _riemann_lower(g), "dddd"),
        ricci=TensorField(grid, _ricci(g), "dd").symmetrized(),
        scalar=TensorField(grid, _scalar(g), ""),
    )


def ricci(g: MetricField) -> TensorField:
    return TensorField(g.grid, _ricci(g), "dd").symmetrized()


def scalar_curvature(g: MetricField) -> TensorField:
    return TensorField(g.grid, _scalar(g), "")


def schouten(g: MetricField, pack: CurvaturePack | None = None, n: int | None = None) -> TensorField:
    """``P = (Ric - S g / (2(n-1))) / (n-2)``.

    ``pack`` may carry a synthetic Ricci/scalar pair (e.g. an Einstein-like
    input); ``n`` overrides the grid dimension in the constants.
    """
    ric = pack.ricci.data if pack is not None else None
    S = pack.scalar.data if pack is not None else None
    return TensorField(g.grid, _schouten(g, n, ric, S), "dd").symmetrized()


def covariant_derivative(T: TensorField, g: MetricField) -> TensorField:
    """Levi-Civita derivative of ``g``; one covariant slot appended last."""
    T.grid.check_compatible(g.grid)
    data = _cov_grad(T.data, T.variance, _gamma_array(g), g.grid)
    return TensorField(g.grid, data, T.variance + "d")


def divergence(T: TensorField, g: MetricField, slot: int = -1) -> TensorField:
    """``g^{ab} nabla_a T_{..b..}`` (or ``nabla_a T^{..a..}``) on one slot."""
    T.grid.check_compatible(g.grid)
    slot = slot % T.order
    data = _divergence(T.data, T.variance, slot, g)
    return TensorField(g.grid, data, T.variance[:slot] + T.variance[slot + 1 :])


def laplacian_p(T: TensorField, g: MetricField, p: int) -> TensorField:
    """Iterated rough Laplacian ``(g^{jk} nabla_j nabla_k)^p``; ``p = 0`` is the identity."""
    if p < 0:
        raise UsageError("p must be non-negative")
    T.grid.check_compatible(g.grid)
    if p == 0:
        return T
    return TensorField(g.grid, _laplacian(T.data, T.variance, g, p), T.variance)


def hessian(u: TensorField, g: MetricField) -> TensorField:
    """``nabla^2 u`` of a scalar field."""
    return TensorField(g.grid, _hessian(u.data, g), "dd")


def weyl(g: MetricField, pack: CurvaturePack | None = None) -> TensorField:
    """Weyl tensor ``Riem - P wedge g`` (Kulkarni-Nomizu product)."""
    if g.dim < 4:
        raise UsageError("the Weyl tensor is implemented for n = 4")
    return TensorField(g.grid, _weyl(g), "dddd")


def bach(g: MetricField) -> TensorField:
    """Bach tensor in dimension four.

    ``B_ij = nabla^k nabla^l W_{ikjl} + P^{kl} W_{ikjl}`` with the inner
    divergence on the last Weyl slot.  In this sign convention the leading
    part is ``Delta P - (1/6) nabla^2 S``.
    """
    if g.dim != 4:
        raise UsageError("the Bach tensor is defined here for n = 4 only")
    B = _bach(g)
    return TensorField(g.grid, 0.5 * (B + np.swapaxes(B, 0, 1)), "dd", symmetric=True)


def bach_asymmetry(g: MetricField) -> float:
    """Sup norm of the antisymmetric part of the unsymmetrised Bach assembly."""
    B = _bach(g)
    return float(np.max(np.abs(B - np.swapaxes(B, 0, 1)))) / 2


def obstruction_leading(g: MetricField, n: int | None = None) -> TensorField:
    """Leading part of the ambient obstruction tensor:

    ``(Delta^{n/2-1} P - Delta^{n/2-2} nabla^2 S / (2(n-1))) / ((-2)^{n/2-2} (n/2-2)!)``

    The lower-order remainder is omitted; ``n`` defaults to the grid
    dimension but may differ for symbol work.
    """
    n = g.dim if n is None else n
    if n % 2 or n < 4:
        raise UsageError("obstruction_leading needs an even n >= 4")
    q = n // 2
    P = _schouten(g, n)
    hessS = _hessian(_scalar(g), g)
    lead = _laplacian(P, "dd", g, q - 1) if q > 1 else P
    sub = _laplacian(hessS, "dd", g, q - 2) if q > 2 else hessS
    coef = 1.0 / ((-2.0) ** (q - 2) * math.factorial(q - 2))
    data = coef * (lead - sub / (2.0 * (n - 1)))
    return TensorField(g.grid, 0.5 * (data + np.swapaxes(data, 0, 1)), "dd", symmetric=True)
