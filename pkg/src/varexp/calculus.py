"""Discrete differential operators: gradient, symmetric gradient, divergence.

Stencils are central differences at interior nodes and first-order
one-sided differences where a neighbor leaves the mask, consistent with
the zero-extension convention (fields vanish outside the mask, so errors
concentrate in a boundary layer).  On space-time grids the operators act
along the spatial axes only, slice by slice in time.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .fields import SymTensorField, TensorField, VectorField, field_abs, sym_pairs
from .modular import luxembourg_norm

__all__ = [
    "gradient",
    "sym_gradient",
    "divergence",
    "korn_steady_check",
    "KornReport",
    "axis_derivative",
]


def _spatial_info(f_grid, domain, d=None):
    """(axis offset of first spatial axis, spatial mask broadcast to f_grid).

    With domain=None the split is inferred from the component count d:
    the last d axes are spatial, anything before is time.
    """
    if domain is None:
        off = f_grid.ndim - d
        if off not in (0, 1):
            raise ValueError(f"cannot place {d} vector components on a {f_grid.ndim}-d grid")
        return off, None
    if f_grid == domain.grid:
        return 0, domain.mask
    if f_grid.matches_spatial(domain.grid):
        return 1, np.broadcast_to(domain.mask, f_grid.dims)
    raise ValueError("grid mismatch between field and domain")


def axis_derivative(values, axis, h, mask=None):
    """d/dx_axis of one nodal component array.

    central where both neighbors are masked in, one-sided toward the masked
    side otherwise; nodes outside the mask (or with no masked neighbor)
    report 0.  `mask=None` treats the whole array as inside, with one-sided
    stencils at the array edge.
    """
    v = values if mask is None else np.where(mask, values, 0.0)
    up = np.zeros_like(v)
    dn = np.zeros_like(v)
    hi_side = [slice(None)] * v.ndim
    lo_side = [slice(None)] * v.ndim
    hi_side[axis] = slice(1, None)
    lo_side[axis] = slice(None, -1)
    hi_side, lo_side = tuple(hi_side), tuple(lo_side)
    up[lo_side] = v[hi_side]
    dn[hi_side] = v[lo_side]

    has_up = np.zeros(v.shape, dtype=bool)
    has_dn = np.zeros(v.shape, dtype=bool)
    if mask is None:
        inside = np.ones(v.shape, dtype=bool)
        has_up[lo_side] = True
        has_dn[hi_side] = True
    else:
        inside = mask
        has_up[lo_side] = mask[hi_side]
        has_dn[hi_side] = mask[lo_side]

    central = inside & has_up & has_dn
    fwd = inside & has_up & ~has_dn
    bwd = inside & ~has_up & has_dn
    out = np.zeros_like(v)
    out[central] = (up[central] - dn[central]) / (2.0 * h)
    out[fwd] = (up[fwd] - v[fwd]) / h
    out[bwd] = (v[bwd] - dn[bwd]) / h
    return out


def gradient(u, domain):
    """Full tensor (grad u)_{ij} = du_i/dx_j along the spatial axes.

    Exact on affine fields at interior nodes (central differences), and on
    quadratics in a single variable.  `domain=None` applies unmasked
    stencils on the whole grid (one-sided at the array edge), which is the
    right choice for smooth fields on extended grids.
    """
    if not isinstance(u, VectorField):
        raise TypeError("gradient expects a VectorField")
    d = u.ncomp
    off, mask = _spatial_info(u.grid, domain, d)
    if u.grid.ndim - off != d:
        raise ValueError(
            f"vector with {d} components on a grid with {u.grid.ndim - off} spatial axes"
        )
    out = np.zeros(u.grid.dims + (d, d))
    for i in range(d):
        for j in range(d):
            out[..., i, j] = axis_derivative(
                u.values[..., i], off + j, u.grid.spacing[off + j], mask
            )
    return TensorField(u.grid, out)


def sym_gradient(u, domain):
    """Symmetric part of the gradient in compact storage; symmetric by construction."""
    g = gradient(u, domain).values
    d = g.shape[-1]
    comps = []
    for i, j in sym_pairs(d):
        comps.append(g[..., i, i] if i == j else 0.5 * (g[..., i, j] + g[..., j, i]))
    return SymTensorField(u.grid, np.stack(comps, axis=-1))


def divergence(T, domain):
    """Row-wise divergence of a symmetric tensor field: (div T)_i = sum_j d_j T_ij.

    Discretely adjoint to -sym_gradient up to the boundary layer: for phi
    vanishing near the boundary, (div T, phi) = -(T, eps(phi)) to roundoff.
    """
    if not isinstance(T, SymTensorField):
        raise TypeError("divergence expects a SymTensorField")
    d = T.d
    off, mask = _spatial_info(T.grid, domain, d)
    if T.grid.ndim - off != d:
        raise ValueError("tensor dimension does not match the spatial axes")
    full = T.to_full().values
    out = np.zeros(T.grid.dims + (d,))
    for i in range(d):
        acc = np.zeros(T.grid.dims)
        for j in range(d):
            acc += axis_derivative(full[..., i, j], off + j, T.grid.spacing[off + j], mask)
        out[..., i] = acc
    return VectorField(T.grid, out)


@dataclasses.dataclass(frozen=True)
class KornReport:
    """Ratio ||grad u|| / ||eps(u)|| in the Luxembourg norm, with degeneracy flag."""

    numerator: float
    denominator: float
    ratio: float
    flagged: bool


def korn_steady_check(u, p, domain, tol=1e-8):
    """Steady Korn ratio report for a compactly supported field.

    Rigid motions (eps(u) = 0 with grad u != 0) are flagged: the ratio is
    reported as inf and must not be read as a Korn constant.
    """
    num = luxembourg_norm(field_abs(gradient(u, domain)), p, domain, tol)
    den = luxembourg_norm(field_abs(sym_gradient(u, domain)), p, domain, tol)
    floor = 1e-14 * max(num, 1.0)
    if den <= floor:
        return KornReport(num, den, float("inf"), True)
    return KornReport(num, den, num / den, False)
