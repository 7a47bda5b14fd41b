"""Index gymnastics on grid tensors: inversion, raising/lowering, contraction,
pointwise norms.

Same-variance contractions always go through an explicitly supplied metric.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .grid import MetricField, TensorField

_LETTERS = string.ascii_letters


def invert_metric(g: MetricField) -> TensorField:
    """Pointwise inverse metric (checked at construction of ``g``)."""
    return g.inverse


def _apply_matrix(arr, mat, slot, order):
    """Contract ``mat[a, b]`` (rank-2 grid array) with slot ``slot`` of a
    rank-``order`` array: ``out[.. a ..] = mat[a, b] arr[.. b ..]``."""
    idx = _LETTERS[:order]
    new = "Z"
    src = idx[slot]
    out = idx[:slot] + new + idx[slot + 1 :]
    return np.einsum(f"{new}{src}...,{idx}...->{out}...", mat, arr)


def raise_index(T: TensorField, slot: int, g: MetricField) -> TensorField:
    if T.variance[slot] != "d":
        raise UsageError(f"slot {slot} is already contravariant")
    data = _apply_matrix(T.data, g.ginv, slot, T.order)
    var = T.variance[:slot] + "u" + T.variance[slot + 1 :]
    return TensorField(T.grid, data, var)


def lower_index(T: TensorField, slot: int, g: MetricField) -> TensorField:
    if T.variance[slot] != "u":
        raise UsageError(f"slot {slot} is already covariant")
    data = _apply_matrix(T.data, g.g, slot, T.order)
    var = T.variance[:slot] + "d" + T.variance[slot + 1 :]
    return TensorField(T.grid, data, var)


@dataclass(frozen=True)
class IndexSpec:
    """Pairs of slots to contract, e.g. ``IndexSpec(((0, 1),))``."""

    pairs: tuple

    def validate(self, order):
        flat = [s for pair in self.pairs for s in pair]
        if len(flat) != len(set(flat)):
            raise UsageError("contraction slots must be distinct")
        if any(not 0 <= s < order for s in flat):
            raise UsageError(f"contraction slot out of range for rank {order}")


def contract(T: TensorField, spec: IndexSpec, g: MetricField | None = None) -> TensorField:
    """Contract slot pairs.  Mixed-variance pairs are traced directly;
    same-variance pairs need ``g`` and use ``g^{-1}`` (covariant) or ``g``
    (contravariant)."""
    spec.validate(T.order)
    letters = list(_LETTERS[: T.order])
    ops, subs = [T.data], []
    for a, b in spec.pairs:
        if T.variance[a] != T.variance[b]:
            letters[b] = letters[a]
            continue
        if g is None:
            raise UsageError(f"slots {a},{b} share variance {T.variance[a]!r}; supply a metric")
        T.grid.check_compatible(g.grid)
        ops.append(g.ginv if T.variance[a] == "d" else g.g)
        subs.append(f"{letters[a]}{letters[b]}...")
    dropped = {s for pair in spec.pairs for s in pair}
    keep = [i for i in range(T.order) if i not in dropped]
    out = "".join(letters[i] for i in keep)
    expr = ",".join(["".join(letters) + "..."] + subs) + f"->{out}..."
    data = np.einsum(expr, *ops, optimize=len(ops) > 1)
    var = "".join(T.variance[i] for i in keep)
    return TensorField(T.grid, data, var)


def trace(T: TensorField, g: MetricField) -> TensorField:
    """Metric trace of a rank-2 field."""
    if T.order != 2:
        raise UsageError("trace needs a rank-2 field")
    return contract(T, IndexSpec(((0, 1),)), g)


def outer(A: TensorField, B: TensorField) -> TensorField:
    A.grid.check_compatible(B.grid)
    ia = _LETTERS[: A.order]
    ib = _LETTERS[A.order : A.order + B.order]
    data = np.einsum(f"{ia}...,{ib}...->{ia}{ib}...", A.data, B.data)
    return TensorField(A.grid, data, A.variance + B.variance)


def full_square(arr, variance, g, ginv):
    """``T . T`` with every slot paired through the metric (raw arrays)."""
    order = len(variance)
    a = _LETTERS[:order]
    b = _LETTERS[order : 2 * order]
    ops, subs = [arr, arr], [a + "...", b + "..."]
    for s, v in enumerate(variance):
        ops.append(ginv if v == "d" else g)
        subs.append(a[s] + b[s] + "...")
    return np.einsum(",".join(subs) + "->...", *ops, optimize=True)


def tensor_norm(T: TensorField, g: MetricField) -> TensorField:
    """Pointwise g-norm ``|T|_g`` as a scalar field."""
    T.grid.check_compatible(g.grid)
    sq = full_square(T.data, T.variance, g.g, g.ginv)
    return TensorField(T.grid, np.sqrt(np.maximum(sq, 0.0)), "")
