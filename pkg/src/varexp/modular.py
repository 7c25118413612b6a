"""Variable exponents, modulars, Luxembourg norms, and the Hoelder pairing.

The modular of a field f with exponent p is the integral of |f(x)|^p(x)
over the domain; the Luxembourg norm is the equality root of
lambda -> modular(f / lambda) = 1, found by bracketing and bisection.
For f not identically zero the map is strictly decreasing, so the root is
unique; the norm of the zero field is 0.
"""

from __future__ import annotations

import logging

import numpy as np

from .fields import ScalarField, field_abs, integrate, _mask_for

log = logging.getLogger(__name__)

__all__ = [
    "ExponentField",
    "constant_exponent",
    "conjugate",
    "modular",
    "luxembourg_norm",
    "holder_pairing",
]

#: pair radius (in grid cells) used for the log-Hoelder estimate
CLOG_RADIUS_CELLS = 8


class ExponentField:
    """A sampled variable exponent with recorded bounds and log-Hoelder estimate.

    Requires 1 < min p at every node.  The estimate

        clog = max over node pairs within a radius of |p(x)-p(y)| * log(e + 1/|x-y|)

    is a local modulus, so only pairs within ``CLOG_RADIUS_CELLS`` cells are
    scanned; long-range pairs would only loosen it.  It is computed lazily
    and cached.
    """

    __slots__ = ("values", "p_minus", "p_plus", "_clog")

    def __init__(self, values, _clog=None):
        if not isinstance(values, ScalarField):
            raise TypeError("ExponentField wraps a ScalarField")
        p_minus = float(values.values.min())
        p_plus = float(values.values.max())
        if not p_minus > 1.0:
            raise ValueError(f"exponent must satisfy p > 1 everywhere, got min {p_minus}")
        if not np.isfinite(p_plus):
            raise ValueError("exponent must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "p_minus", p_minus)
        object.__setattr__(self, "p_plus", p_plus)
        object.__setattr__(self, "_clog", [_clog])

    def __setattr__(self, name, value):
        raise AttributeError("ExponentField is immutable")

    @property
    def grid(self):
        return self.values.grid

    @property
    def clog_estimate(self):
        if self._clog[0] is None:
            self._clog[0] = log_holder_estimate(self.values, CLOG_RADIUS_CELLS)
        return self._clog[0]

    def extend_constant_in_time(self, spacetime_grid):
        """Exponent on a space-time grid, constant along the time axis.

        The log-Hoelder estimate carries over unchanged: equal-time pairs
        dominate, since purely temporal separation only shrinks the log
        factor while |p(x)-p(y)| stays the same.
        """
        if not spacetime_grid.matches_spatial(self.grid):
            raise ValueError("space-time grid does not extend the exponent's spatial grid")
        vals = np.broadcast_to(self.values.values, spacetime_grid.dims)
        return ExponentField(ScalarField(spacetime_grid, vals), _clog=self.clog_estimate)


def log_holder_estimate(p, radius_cells):
    """Brute-force local log-Hoelder constant of a sampled exponent."""
    from itertools import product

    vals = p.values.values if isinstance(p, ExponentField) else p.values
    grid = p.grid
    spacing = np.asarray(grid.spacing)
    r2 = radius_cells * radius_cells
    best = 0.0
    # scan half of the offset lattice; swapped pairs give the same value
    axes_ranges = [range(0, radius_cells + 1)] + [
        range(-radius_cells, radius_cells + 1)
    ] * (grid.ndim - 1)
    for o in product(*axes_ranges):
        if all(k == 0 for k in o):
            continue
        if o[0] == 0:
            lead = next((k for k in o if k != 0), 0)
            if lead < 0:
                continue
        if sum(k * k for k in o) > r2:
            continue
        sl_a, sl_b = [], []
        for k in o:
            if k >= 0:
                sl_a.append(slice(k, None))
                sl_b.append(slice(None, -k if k else None))
            else:
                sl_a.append(slice(None, k))
                sl_b.append(slice(-k, None))
        a = vals[tuple(sl_a)]
        if a.size == 0:
            continue
        diff = float(np.max(np.abs(a - vals[tuple(sl_b)])))
        dist = float(np.sqrt(np.sum((np.asarray(o) * spacing) ** 2)))
        best = max(best, diff * np.log(np.e + 1.0 / dist))
    return best


def constant_exponent(grid, value):
    return ExponentField(ScalarField(grid, np.full(grid.dims, float(value))))


def conjugate(p):
    """Pointwise conjugate exponent p/(p-1); bounds swap accordingly."""
    if not p.p_minus > 1.0:
        raise ValueError("conjugate needs p > 1 everywhere")
    vals = p.values.values
    return ExponentField(ScalarField(p.grid, vals / (vals - 1.0)))


def _exponent_on(f_grid, p):
    """Exponent values broadcast to a field grid, extending constantly in time."""
    if p.grid == f_grid:
        return p.values.values
    if f_grid.matches_spatial(p.grid):
        return np.broadcast_to(p.values.values, f_grid.dims)
    raise ValueError("exponent grid matches neither the field grid nor its spatial part")


def modular(f, p, domain):
    """rho_p(f) = integral of |f(x)|^p(x) over the domain (>= 0).

    |f| is the Euclidean / Frobenius magnitude for vector / tensor fields.
    A spatial exponent on a space-time field is extended constantly in time.
    """
    absf = field_abs(f)
    pv = _exponent_on(f.grid, p)
    mask = _mask_for(f.grid, domain)
    a = absf.values[mask]
    q = np.broadcast_to(pv, absf.values.shape)[mask]
    return float(np.sum(a**q) * f.grid.cell_volume)


def luxembourg_norm(f, p, domain, tol=1e-8):
    """Luxembourg norm by bracketing + bisection on lambda -> modular(f/lambda).

    Returns the equality root to relative bracket width `tol`; returns 0 for
    the zero field.  If the modular at the returned lambda differs from 1 by
    more than 10*tol, a log record flags it (degenerate supports).
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    absf = field_abs(f)
    if not np.all(np.isfinite(absf.values)):
        raise ValueError("field has non-finite values")
    mask = _mask_for(f.grid, domain)
    a = absf.values[mask]
    q = np.broadcast_to(_exponent_on(f.grid, p), absf.values.shape)[mask]
    nz = a > 0.0
    a, q = a[nz], q[nz]
    if a.size == 0:
        return 0.0
    w = f.grid.cell_volume
    # c_i = w * a_i^{q_i}; rho(lam) = sum c_i * exp(-q_i log lam)
    c = w * a**q

    def rho(lam):
        return float(np.sum(c * np.exp(-q * np.log(lam))))

    measure = domain.measure()
    if f.grid != domain.grid:
        # space-time cylinder: measure of I x Omega
        measure *= f.grid.dims[0] * f.grid.spacing[0]
    hi = max(1.0, float(a.max())) * max(1.0, measure) ** (1.0 / p.p_minus)
    guard = 0
    while rho(hi) > 1.0:
        hi *= 2.0
        guard += 1
        if guard > 200:
            raise RuntimeError("luxembourg_norm failed to bracket from above")
    lo = hi
    while rho(lo) <= 1.0:
        lo /= 2.0
        guard += 1
        if guard > 400:
            raise RuntimeError("luxembourg_norm failed to bracket from below")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    gap = abs(rho(lam) - 1.0)
    if gap > 10.0 * tol:
        log.info("luxembourg_norm: modular at root differs from 1 by %.3e", gap)
    return lam


def _contract(f, g):
    """Pointwise product / dot / Frobenius contraction as a ScalarField."""
    if type(f) is not type(g):
        raise TypeError("holder_pairing needs fields of the same kind")
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, f.values * g.values)
    from .fields import SymTensorField, VectorField, sym_weights

    if isinstance(f, VectorField):
        return ScalarField(f.grid, np.sum(f.values * g.values, axis=-1))
    if isinstance(f, SymTensorField):
        w = sym_weights(f.d)
        return ScalarField(f.grid, np.sum(w * f.values * g.values, axis=-1))
    raise TypeError(f"unsupported field type {type(f).__name__}")


def holder_pairing(f, g, p, domain):
    """The L^p(.) product (f, g) = integral of f . g over the domain.

    Componentwise contraction for vector and tensor fields.  Satisfies
    |(f, g)| <= 2 ||f||_{p'} ||g||_p (Hoelder with constant 2).
    """
    if f.grid != g.grid:
        raise ValueError("grid mismatch between pairing factors")
    del p  # part of the signature contract; the value is exponent-free
    return integrate(_contract(f, g), domain)
