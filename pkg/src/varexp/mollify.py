"""Mollifiers, cutoffs, the maximal operator, extensions, and smoothing.

The scaled standard mollifier is sampled on the grid and its weights are
renormalized to sum exactly to 1, so convolution is exact on constants.
The smoothing operator cuts off, zero-extends, then mollifies; its quasi
adjoint mollifies first and cuts off afterwards.  Smoothing scales are
snapped to whole grid cells so support statements stay cell-exact.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate as _sciint
from scipy import ndimage as _ndi

from .fields import Grid, ScalarField, SymTensorField, VectorField
from .calculus import axis_derivative, sym_gradient
from .modular import ExponentField

__all__ = [
    "MollifierFamily",
    "CutoffFamily",
    "convolve",
    "maximal",
    "zero_extend",
    "restrict",
    "reflect_extend",
    "extend_exponent",
    "smooth_R",
    "smooth_Rstar",
    "sym_grad_smooth_decomposition",
]

_CNORM_CACHE = {}


def _unit_ball_mass(dim):
    """Integral of exp(-1/(1-|x|^2)) over the unit ball in R^dim."""
    surf = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    val, _ = _sciint.quad(lambda s: s ** (dim - 1) * math.exp(-1.0 / (1.0 - s * s)), 0.0, 1.0)
    return surf * val


class MollifierFamily:
    """The standard mollifier profile and its grid samplings in one dimension count.

    profile(x) = c_norm * exp(-1/(1-|x|^2)) inside the unit ball, 0 outside;
    the scaled kernel at scale eps is eps^-dim * profile(x/eps), supported in
    the closed ball of radius eps.
    """

    __slots__ = ("dim", "c_norm")

    def __init__(self, dim):
        dim = int(dim)
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if dim not in _CNORM_CACHE:
            _CNORM_CACHE[dim] = 1.0 / _unit_ball_mass(dim)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "c_norm", _CNORM_CACHE[dim])

    def __setattr__(self, name, value):
        raise AttributeError("MollifierFamily is immutable")

    def profile(self, x):
        """Unscaled profile omega(x) for points with |x| measured per row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.sum(x * x, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = self.c_norm * np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    def scaled(self, x, eps):
        return self.profile(np.asarray(x, dtype=float) / eps) / eps**self.dim

    def sampled_weights(self, spacing, eps):
        """Discrete kernel on the grid lattice, renormalized to sum exactly 1.

        Rejects eps below any axis spacing (the kernel would degenerate to a
        point mass).  Returns an ndarray with odd length per axis.
        """
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != self.dim:
            raise ValueError(f"kernel is {self.dim}-dimensional, got {len(spacing)} spacings")
        eps = float(eps)
        if any(eps < s for s in spacing):
            raise ValueError(
                f"mollifier scale {eps} is below the grid spacing {max(spacing)}; "
                "refine the grid or enlarge the scale"
            )
        radii = [int(np.floor(eps / s)) for s in spacing]
        axes = [np.arange(-k, k + 1) * s for k, s in zip(radii, spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        w = self.profile(pts / eps).reshape([2 * k + 1 for k in radii])
        total = w.sum()
        if total <= 0.0:
            # only the center sample survives: point mass
            w = np.zeros_like(w)
            w[tuple(k for k in radii)] = 1.0
            return w
        return w / total


def _component_views(f):
    """List of (component array,) views plus a rebuild function."""
    if isinstance(f, ScalarField):
        return [f.values], lambda comps: ScalarField(f.grid, comps[0])
    if isinstance(f, VectorField):
        arrs = [f.values[..., i] for i in range(f.ncomp)]
        return arrs, lambda comps: VectorField(f.grid, np.stack(comps, axis=-1))
    if isinstance(f, SymTensorField):
        arrs = [f.values[..., i] for i in range(f.ncomp)]
        return arrs, lambda comps: SymTensorField(f.grid, np.stack(comps, axis=-1))
    raise TypeError(f"unsupported field type {type(f).__name__}")


def convolve(f, eps, family=None):
    """Discrete convolution with the sampled scaled mollifier.

    The field is treated as zero outside its grid (zero-extension).  Direct
    summation; desk-scale grids do not need FFTs.
    """
    family = family or MollifierFamily(f.grid.ndim)
    if family.dim != f.grid.ndim:
        raise ValueError("mollifier dimension does not match the field grid")
    w = family.sampled_weights(f.grid.spacing, eps)
    comps, rebuild = _component_views(f)
    out = [_ndi.convolve(c, w, mode="constant", cval=0.0) for c in comps]
    return rebuild(out)


def _maximal_radii(max_cells, ndim):
    """Unit steps up to 8 cells, then ~2^(1/ndim) geometric steps.

    Consecutive ball node counts then stay within a factor ~2, which keeps
    the discrete averages a faithful lower proxy for the radius supremum.
    """
    radii = list(range(1, min(8, max_cells) + 1))
    factor = 2.0 ** (1.0 / ndim)
    while radii[-1] < max_cells:
        radii.append(min(max_cells, max(radii[-1] + 1, int(radii[-1] * factor))))
    return radii


def maximal(f):
    """Discrete Hardy-Littlewood maximal function of |f|.

    M(f)(x) = max over a fixed radius ladder of the average of |f| over
    in-grid nodes within distance r of x (masked midpoint quadrature).
    Averages over in-grid nodes keep M(const) = const exact, and the
    ladder starts at the node value itself -- the discrete r -> 0 limit --
    so M(f) >= |f| pointwise as in the continuum.
    """
    from .fields import field_abs

    g = f.grid
    a = field_abs(f).values
    spacing = np.asarray(g.spacing)
    h_last = spacing[-1]
    max_cells = int(np.ceil(g.diameter() / min(spacing)))
    radii = _maximal_radii(max_cells, g.ndim)

    # prefix sums along the last axis make every row segment an O(1) lookup;
    # a parallel prefix sum of ones counts the in-grid nodes per segment
    pad = np.zeros(a.shape[:-1] + (1,))
    csum = np.concatenate([pad, np.cumsum(a, axis=-1)], axis=-1)
    ones = np.ones_like(a)
    csum1 = np.concatenate([pad, np.cumsum(ones, axis=-1)], axis=-1)
    n_last = a.shape[-1]
    idx = np.arange(n_last)

    best = a.copy()
    for r_cells in radii:
        r_phys = r_cells * float(min(spacing))
        total = np.zeros_like(a)
        count = np.zeros_like(a)
        # offsets over the leading axes; the last axis is handled by segments
        lead_ranges = [
            range(-int(r_phys / s), int(r_phys / s) + 1) for s in spacing[:-1]
        ]
        for off in np.ndindex(*[len(rg) for rg in lead_ranges]):
            o = tuple(rg[i] for rg, i in zip(lead_ranges, off))
            rho2 = sum((k * s) ** 2 for k, s in zip(o, spacing[:-1]))
            if rho2 > r_phys * r_phys:
                continue
            half = int(np.sqrt(r_phys * r_phys - rho2) / h_last)
            lo = np.clip(idx - half, 0, n_last)
            hi = np.clip(idx + half + 1, 0, n_last)
            sc = _shift_csum(csum, o)
            s1 = _shift_csum(csum1, o)
            total += sc[..., hi] - sc[..., lo]
            count += s1[..., hi] - s1[..., lo]
        np.maximum(best, np.divide(total, count, out=np.zeros_like(total), where=count > 0), out=best)
    return ScalarField(g, best)


def _shift_csum(csum, offsets):
    """Cumulative-sum array of the source shifted by integer offsets in the leading axes."""
    if all(k == 0 for k in offsets):
        return csum
    out = np.zeros_like(csum)
    src = [slice(None)] * csum.ndim
    dst = [slice(None)] * csum.ndim
    for ax, k in enumerate(offsets):
        if k > 0:
            src[ax] = slice(k, None)
            dst[ax] = slice(None, -k)
        elif k < 0:
            src[ax] = slice(None, k)
            dst[ax] = slice(-k, None)
    out[tuple(dst)] = csum[tuple(src)]
    return out


# ---------------------------------------------------------------------------
# extensions


def _alignment_offsets(src, target):
    """Integer node offsets of src inside target; raises on misalignment."""
    if src.ndim != target.ndim:
        raise ValueError("grids have different dimensionality")
    offs = []
    for ax in range(src.ndim):
        if not np.isclose(src.spacing[ax], target.spacing[ax], rtol=1e-12):
            raise ValueError(f"axis {ax}: spacing differs between grids")
        delta = (src.origin[ax] - target.origin[ax]) / src.spacing[ax]
        k = int(round(delta))
        if abs(delta - k) > 1e-9:
            raise ValueError(f"axis {ax}: grids are not node-aligned")
        if k < 0 or k + src.dims[ax] > target.dims[ax]:
            raise ValueError(f"axis {ax}: source grid does not fit inside target")
        offs.append(k)
    return offs


def zero_extend(u, target_grid):
    """Copy the field onto a larger aligned grid, zero outside.

    Preserves every modular and Luxembourg norm exactly: zero adds nothing.
    """
    offs = _alignment_offsets(u.grid, target_grid)
    comp_shape = u.values.shape[u.grid.ndim :]
    out = np.zeros(target_grid.dims + comp_shape)
    sl = tuple(slice(k, k + n) for k, n in zip(offs, u.grid.dims))
    out[sl] = u.values
    cls = type(u)
    return cls(target_grid, out)


def restrict(u, target_grid):
    """Inverse of zero_extend: values of u at the nodes of a contained grid."""
    offs = _alignment_offsets(target_grid, u.grid)
    sl = tuple(slice(k, k + n) for k, n in zip(offs, target_grid.dims))
    return type(u)(target_grid, u.values[sl])


def reflect_extend(u):
    """Extension in time by reflection: u(-t) before, u(t), then u(2T - t).

    The time axis (axis 0) is read as cell-centered on (a, a+T); reflection
    about the interval endpoints is then node-aligned, every original value
    appears exactly three times, and the modular of the extension is
    exactly three times the modular of u.  Works for fields and exponent
    fields alike (exponents extend the same way).
    """
    if isinstance(u, ExponentField):
        ext = reflect_extend(u.values)
        return ExponentField(ext, _clog=u._clog[0])
    g = u.grid
    if g.ndim < 2:
        raise ValueError("reflect_extend expects a space-time field")
    K = g.dims[0]
    tau = g.spacing[0]
    ext_grid = Grid(
        (3 * K,) + g.dims[1:],
        g.spacing,
        (g.origin[0] - K * tau,) + g.origin[1:],
    )
    vals = np.concatenate([u.values[::-1], u.values, u.values[::-1]], axis=0)
    return type(u)(ext_grid, vals)


def extend_exponent(p, target_grid):
    """Exponent extension by nearest-node clamping.

    Preserves p- and p+ exactly; the log-Hoelder constant is only
    approximately preserved (clamping flattens the modulus off the source
    block), so the cached estimate is dropped and recomputed on demand.
    """
    offs = _alignment_offsets(p.grid, target_grid)
    src = p.values.values
    idx = []
    for ax in range(target_grid.ndim):
        j = np.arange(target_grid.dims[ax]) - offs[ax]
        idx.append(np.clip(j, 0, p.grid.dims[ax] - 1))
    mesh = np.meshgrid(*idx, indexing="ij")
    return ExponentField(ScalarField(target_grid, src[tuple(mesh)]))


# ---------------------------------------------------------------------------
# cutoffs and smoothing operators


def _snap_scale(h, domain):
    """Smoothing scale snapped to a whole number of (max) spatial cells."""
    hx = max(domain.grid.spacing)
    cells = int(round(float(h) / hx))
    if cells < 1:
        raise ValueError(f"smoothing scale {h} is below one grid cell ({hx})")
    return cells * hx


def _disc_cutoff_values(grid, center, rho0, eps):
    """Exact radial evaluation of (omega_eps * chi_ball(rho0)) on the grid.

    G(rho) integrates the kernel ring-by-ring against the angular measure of
    the ball; the table is spline-sampled at the nodes.  This keeps eta an
    exactly sampled smooth function, so discrete product rules see a clean
    O(spacing^2) defect.
    """
    from scipy.interpolate import CubicSpline

    fam = MollifierFamily(2)
    c = fam.c_norm

    def G(rho):
        if rho <= 1e-12:
            return 1.0 if rho0 >= eps else 0.0
        if rho <= rho0 - eps:
            return 1.0
        if rho >= rho0 + eps:
            return 0.0

        def integrand(s):
            y = s / eps
            w = c / eps**2 * np.exp(-1.0 / (1.0 - y * y)) if y < 1.0 else 0.0
            cosphi = (rho**2 + s**2 - rho0**2) / (2.0 * rho * s) if s > 0 else -1.0
            phi = np.arccos(np.clip(cosphi, -1.0, 1.0))
            return w * 2.0 * phi * s

        val, _ = _sciint.quad(integrand, 0.0, eps, limit=200)
        return min(max(val, 0.0), 1.0)

    table_rho = np.linspace(max(rho0 - eps, 0.0) - 1e-9, rho0 + eps + 1e-9, 257)
    table_val = np.array([G(r) for r in table_rho])
    spline = CubicSpline(table_rho, table_val)
    xx = grid.coords()
    dist = np.sqrt(sum((xx[a] - center[a]) ** 2 for a in range(2)))
    vals = np.where(
        dist <= table_rho[0],
        table_val[0],
        np.where(dist >= table_rho[-1], 0.0, spline(np.clip(dist, table_rho[0], table_rho[-1]))),
    )
    return np.clip(vals, 0.0, 1.0)


class CutoffFamily:
    """Smooth plateau eta_h: mollification of the indicator of the 5h/2 shrinkage.

    eta_h equals 1 on the 3h shrinkage, is supported in the 2h shrinkage
    (both up to one cell), takes values in [0, 1], and |grad eta_h| stays
    below c_eta / h with c_eta uniform over the tested range of h.

    Disc domains evaluate the defining convolution by exact radial
    quadrature (smooth sampled cutoff); other masks use the discrete
    convolution of a one-cell antialiased indicator.
    """

    __slots__ = ("domain", "h", "eta", "c_eta")

    def __init__(self, domain, h):
        h = _snap_scale(h, domain)
        hx = max(domain.grid.spacing)
        if domain.kind == "disc" and domain.geom is not None and domain.grid.ndim == 2:
            rho0 = domain.geom["radius"] - 2.5 * h
            if rho0 <= 0:
                vals = np.zeros(domain.grid.dims)
            else:
                vals = _disc_cutoff_values(
                    domain.grid, domain.geom["center"], rho0, max(0.5 * h, 1.5 * hx)
                )
            eta = ScalarField(domain.grid, vals)
        else:
            # antialiased indicator: nodal cell-coverage of {r > 5h/2}.  A
            # sharp 0/1 sampling would leave O(spacing) quadrature wiggles
            # in eta; the one-cell ramp keeps the sampling second order.
            chi = ScalarField(
                domain.grid, np.clip(0.5 + (domain.r - 2.5 * h) / hx, 0.0, 1.0)
            )
            # kernel scale floors at 1.5 cells so the sampled kernel keeps
            # off-center weights even when h/2 dips below one spacing
            eps = max(0.5 * h, 1.5 * hx)
            eta = convolve(chi, eps)
        grad_sup = 0.0
        for ax in range(domain.grid.ndim):
            dv = axis_derivative(eta.values, ax, domain.grid.spacing[ax], None)
            grad_sup = max(grad_sup, float(np.max(np.abs(dv))))
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "c_eta", grad_sup * h)

    def __setattr__(self, name, value):
        raise AttributeError("CutoffFamily is immutable")

    def grad_eta(self):
        """Spatial gradient of the cutoff as a VectorField (unmasked stencils)."""
        g = self.domain.grid
        comps = [axis_derivative(self.eta.values, ax, g.spacing[ax], None) for ax in range(g.ndim)]
        return VectorField(g, np.stack(comps, axis=-1))


def _spacetime_setup(u, domain, h):
    """Common plumbing: snap h, build cutoff, zero-extend in time by the kernel radius."""
    d = domain.grid.ndim
    if not u.grid.matches_spatial(domain.grid):
        raise ValueError("u must live on a space-time grid over the domain's grid")
    h_eff = _snap_scale(h, domain)
    cutoff = CutoffFamily(domain, h_eff)
    kt = int(np.ceil(h_eff / u.grid.spacing[0] - 1e-12))
    target = u.grid.extended(0, kt, kt)
    fu = zero_extend(u, target)
    family = MollifierFamily(d + 1)
    return h_eff, cutoff, fu, family


def _mul_spatial(field, spatial_values):
    """Multiply a space-time field by a spatial nodal function (broadcast in time)."""
    shape = spatial_values.shape + (1,) * (field.values.ndim - 1 - spatial_values.ndim)
    vals = field.values * spatial_values.reshape((1,) + shape)
    return type(field)(field.grid, vals)


def smooth_R(u, domain, h):
    """Smoothing operator: mollify the cutoff zero-extension.

    Support is contained in (-h, T+h) x Omega_h up to one cell, the result
    is dominated pointwise by twice the maximal function of the
    zero-extension, and it converges to u as h -> 0.
    """
    h_eff, cutoff, fu, family = _spacetime_setup(u, domain, h)
    v = _mul_spatial(fu, cutoff.eta.values)
    return convolve(v, h_eff, family)


def smooth_Rstar(u, domain, h):
    """Quasi adjoint smoothing: mollify first, cut off afterwards.

    (Rstar u, v) = (u, R v) holds exactly on the discrete pairing; support
    is contained in (-h, T+h) x Omega_2h up to one cell.
    """
    h_eff, cutoff, fu, family = _spacetime_setup(u, domain, h)
    w = convolve(fu, h_eff, family)
    return _mul_spatial(w, cutoff.eta.values)


def sym_grad_smooth_decomposition(u, domain, h):
    """The two right-hand terms of eps(smooth_R(u)).

    termA smooths the symmetric gradient itself; termB mollifies the
    symmetrized tensor product of the zero-extension with grad eta_h.
    termB vanishes identically on Omega_4h (up to kernel snapping cells),
    and termA + termB reproduces eps(smooth_R(u)) to O(spacing^2) nodewise.
    """
    if not isinstance(u, VectorField):
        raise TypeError("decomposition expects a VectorField")
    h_eff, cutoff, fu, family = _spacetime_setup(u, domain, h)

    eps_u = sym_gradient(u, domain)
    f_eps = zero_extend(eps_u, fu.grid)
    termA = convolve(_mul_spatial(f_eps, cutoff.eta.values), h_eff, family)

    ge = cutoff.grad_eta().values  # (spatial dims, d)
    d = domain.grid.ndim
    uv = fu.values  # (time+spatial dims, d)
    ge_b = ge[np.newaxis, ...]
    comps = []
    from .fields import sym_pairs

    for i, j in sym_pairs(d):
        if i == j:
            comps.append(uv[..., i] * ge_b[..., i])
        else:
            comps.append(0.5 * (uv[..., i] * ge_b[..., j] + uv[..., j] * ge_b[..., i]))
    termB_raw = SymTensorField(fu.grid, np.stack(comps, axis=-1))
    termB = convolve(termB_raw, h_eff, family)
    return termA, termB
