"""Structured grids, masked domains, and sampled scalar/vector/tensor fields.

Every other module operates on the types defined here.  A field is a plain
array of nodal values on a uniform grid; a domain is a boolean mask on a
spatial grid together with the distance-to-boundary function r(x).  Fields
follow the zero-extension convention: nodes outside a domain's mask carry
the value 0, which keeps convolution and extension operators total.

All objects are immutable after construction and all operations are pure,
so everything here is safe to evaluate concurrently.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "Grid",
    "Domain",
    "ScalarField",
    "VectorField",
    "TensorField",
    "SymTensorField",
    "grid_on_box",
    "vertex_grid_on_box",
    "make_disc_domain",
    "make_rectangle_domain",
    "domain_from_mask",
    "shrink",
    "integrate",
    "field_abs",
    "sym_pairs",
    "sym_weights",
    "fmt_float",
    "write_field",
    "read_field",
    "export_csv",
    "write_pgm",
]


class Grid:
    """Uniform tensor-product grid.

    Node ``(i0, ..., ik)`` sits at ``origin + i * spacing``, exactly
    reproducible.  Space-only grids have d axes; space-time grids have
    1 + d axes with time as axis 0.
    """

    __slots__ = ("dims", "spacing", "origin")

    def __init__(self, dims, spacing, origin):
        dims = tuple(int(n) for n in dims)
        spacing = tuple(float(s) for s in spacing)
        origin = tuple(float(o) for o in origin)
        if not (len(dims) == len(spacing) == len(origin)):
            raise ValueError("dims, spacing, origin must have equal length")
        if any(n < 2 for n in dims):
            raise ValueError(f"every axis needs >= 2 nodes, got dims={dims}")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"every spacing must be > 0, got spacing={spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    def __setattr__(self, name, value):
        raise AttributeError("Grid is immutable")

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axis_coords(self, axis):
        """Node coordinates along one axis."""
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def coords(self):
        """Tuple of broadcastable coordinate arrays (indexing='ij')."""
        return np.meshgrid(*(self.axis_coords(a) for a in range(self.ndim)), indexing="ij")

    def node_count(self):
        return int(np.prod(self.dims))

    def diameter(self):
        return float(np.hypot.reduce([(n - 1) * s for n, s in zip(self.dims, self.spacing)]))

    def extended(self, axis, before, after):
        """New grid with `before`/`after` extra nodes along one axis."""
        dims = list(self.dims)
        origin = list(self.origin)
        dims[axis] += int(before) + int(after)
        origin[axis] -= int(before) * self.spacing[axis]
        return Grid(dims, self.spacing, origin)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=1e-12)
            and np.allclose(self.origin, other.origin, rtol=1e-12, atol=1e-14)
        )

    def matches_spatial(self, spatial):
        """True if self is a space-time grid whose axes 1.. equal `spatial`."""
        if self.ndim != spatial.ndim + 1:
            return False
        return Grid(self.dims[1:], self.spacing[1:], self.origin[1:]) == spatial

    def __repr__(self):
        return f"Grid(dims={self.dims}, spacing={self.spacing}, origin={self.origin})"


def grid_on_box(lo, hi, cells):
    """Cell-centered grid covering the box [lo, hi]: `cells` nodes per axis.

    Node i sits at lo + (i + 1/2) * (hi - lo) / cells; no node lies on the
    box boundary, which keeps time reflection node-aligned.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    cells = np.atleast_1d(np.asarray(cells, dtype=int))
    spacing = (hi - lo) / cells
    return Grid(cells, spacing, lo + spacing / 2)


def vertex_grid_on_box(lo, hi, cells):
    """Vertex-centered grid on [lo, hi]: cells+1 nodes per axis, endpoints included."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    cells = np.atleast_1d(np.asarray(cells, dtype=int))
    return Grid(cells + 1, (hi - lo) / cells, lo)


# ---------------------------------------------------------------------------
# fields


def _freeze(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class _Field:
    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _freeze(values))

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def _like(self, values):
        return type(self)(self.grid, values)

    def __add__(self, other):
        self._check_same(other)
        return self._like(self.values + other.values)

    def __sub__(self, other):
        self._check_same(other)
        return self._like(self.values - other.values)

    def __mul__(self, c):
        return self._like(self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    def _check_same(self, other):
        if type(other) is not type(self) or other.grid != self.grid:
            raise ValueError("field mismatch: incompatible type or grid")
        if self.values.shape != other.values.shape:
            raise ValueError("field mismatch: incompatible component count")

    def max_abs(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


class ScalarField(_Field):
    """One value per node; values.shape == grid.dims."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.dims:
            raise ValueError(f"scalar values shape {values.shape} != grid dims {grid.dims}")
        super().__init__(grid, values)

    @property
    def ncomp(self):
        return 1


class VectorField(_Field):
    """d values per node; values.shape == grid.dims + (d,).

    On a space-time grid the component count is the *spatial* dimension,
    so it must be passed explicitly via the trailing axis of `values`.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != grid.ndim + 1 or values.shape[: grid.ndim] != grid.dims:
            raise ValueError(f"vector values shape {values.shape} incompatible with grid {grid.dims}")
        super().__init__(grid, values)

    @property
    def ncomp(self):
        return self.values.shape[-1]


class TensorField(_Field):
    """Full d x d tensor per node, row-major components; shape dims + (d, d)."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if (
            values.ndim != grid.ndim + 2
            or values.shape[: grid.ndim] != grid.dims
            or values.shape[-1] != values.shape[-2]
        ):
            raise ValueError(f"tensor values shape {values.shape} incompatible with grid {grid.dims}")
        super().__init__(grid, values)

    @property
    def ncomp(self):
        return self.values.shape[-1] * self.values.shape[-2]

    @property
    def d(self):
        return self.values.shape[-1]


def sym_pairs(d):
    """Component index pairs of the compact symmetric storage: diagonal first."""
    return [(i, i) for i in range(d)] + [(i, j) for i in range(d) for j in range(i + 1, d)]

def sym_weights(d):
    """Multiplicity of each compact component in the Frobenius product."""
    return np.array([1.0] * d + [2.0] * (d * (d - 1) // 2))


class SymTensorField(_Field):
    """Symmetric d x d tensor per node in compact storage of d(d+1)/2 components.

    Order: d diagonal entries, then off-diagonals (i<j) lexicographically.
    Frobenius norms and contractions weight off-diagonals by 2.
    """

    def __init__(self, grid, values, d=None):
        values = np.asarray(values, dtype=float)
        if values.ndim != grid.ndim + 1 or values.shape[: grid.ndim] != grid.dims:
            raise ValueError(f"sym tensor values shape {values.shape} incompatible with grid {grid.dims}")
        m = values.shape[-1]
        if d is None:
            d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
        if d * (d + 1) // 2 != m:
            raise ValueError(f"{m} components is not a d(d+1)/2 count")
        super().__init__(grid, values)

    @property
    def d(self):
        m = self.values.shape[-1]
        return int(round((np.sqrt(8 * m + 1) - 1) / 2))

    @property
    def ncomp(self):
        return self.values.shape[-1]

    def to_full(self):
        d = self.d
        full = np.zeros(self.grid.dims + (d, d))
        for c, (i, j) in enumerate(sym_pairs(d)):
            full[..., i, j] = self.values[..., c]
            if i != j:
                full[..., j, i] = self.values[..., c]
        return TensorField(self.grid, full)

    @classmethod
    def from_full(cls, tensor, check=True):
        full = tensor.values
        d = tensor.d
        if check and not np.array_equal(full, np.swapaxes(full, -1, -2)):
            raise ValueError("tensor is not exactly symmetric")
        comps = np.stack([full[..., i, j] for (i, j) in sym_pairs(d)], axis=-1)
        return cls(tensor.grid, comps)


def field_abs(f):
    """Pointwise magnitude of a field as a ScalarField.

    Euclidean norm for vectors, Frobenius norm for tensors (compact
    symmetric storage is weighted so that |A| matches the full matrix).
    """
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, np.abs(f.values))
    if isinstance(f, VectorField):
        return ScalarField(f.grid, np.sqrt(np.sum(f.values**2, axis=-1)))
    if isinstance(f, SymTensorField):
        w = sym_weights(f.d)
        return ScalarField(f.grid, np.sqrt(np.sum(w * f.values**2, axis=-1)))
    if isinstance(f, TensorField):
        sq = np.sum(f.values**2, axis=(-1, -2))
        return ScalarField(f.grid, np.sqrt(sq))
    raise TypeError(f"not a field: {type(f)!r}")


# ---------------------------------------------------------------------------
# domains


class Domain:
    """Masked region of a spatial grid with distance-to-boundary function r.

    r(x) approximates dist(x, boundary) and vanishes outside the mask; it is
    1-Lipschitz across neighboring nodes up to one grid spacing.
    """

    __slots__ = ("grid", "mask", "r", "kind", "geom")

    def __init__(self, grid, mask, r, kind, geom=None):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.dims:
            raise ValueError("mask shape does not match grid")
        r = np.asarray(r, dtype=float)
        if r.shape != grid.dims:
            raise ValueError("r shape does not match grid")
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "r", _freeze(r))
        object.__setattr__(self, "kind", str(kind))
        object.__setattr__(self, "geom", geom)  # analytic shape data, if known
        if self.is_empty:
            log.warning("domain of kind %r has an empty mask", kind)

    def __setattr__(self, name, value):
        raise AttributeError("Domain is immutable")

    @property
    def is_empty(self):
        return not bool(self.mask.any())

    def measure(self):
        """Midpoint-rule measure: one cell volume per masked node."""
        return float(np.count_nonzero(self.mask)) * self.grid.cell_volume

    def interior_mask(self):
        """Masked nodes whose axis neighbors are all masked too."""
        inner = self.mask.copy()
        for ax in range(self.grid.ndim):
            inner &= _shift_bool(self.mask, ax, +1) & _shift_bool(self.mask, ax, -1)
        return inner


def _shift_bool(mask, axis, step):
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if step > 0:
        src[axis] = slice(step, None)
        dst[axis] = slice(None, -step)
    else:
        src[axis] = slice(None, step)
        dst[axis] = slice(-step, None)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def make_disc_domain(center, radius, grid):
    """Disc domain {|x - center| < radius} on a 2-d grid.

    The disc must fit strictly inside the grid extent.
    """
    if grid.ndim != 2:
        raise ValueError("disc domains need a 2-d grid")
    center = np.asarray(center, dtype=float)
    radius = float(radius)
    if radius <= 0:
        raise ValueError("radius must be positive")
    for ax in range(2):
        lo, hi = grid.axis_coords(ax)[0], grid.axis_coords(ax)[-1]
        if center[ax] - radius <= lo or center[ax] + radius >= hi:
            raise ValueError(
                f"disc (center={tuple(center)}, radius={radius}) not strictly inside "
                f"grid extent [{lo}, {hi}] on axis {ax}"
            )
    xx = grid.coords()
    dist = np.sqrt(sum((xx[a] - center[a]) ** 2 for a in range(2)))
    r = np.clip(radius - dist, 0.0, None)
    return Domain(grid, dist < radius, r, "disc", geom={"center": tuple(center), "radius": radius})


def make_rectangle_domain(lo, hi, grid):
    """Axis-aligned box domain {lo < x < hi} with analytic distance to the faces."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if len(lo) != grid.ndim or len(hi) != grid.ndim:
        raise ValueError("box bounds do not match grid dimension")
    if np.any(hi <= lo):
        raise ValueError("need lo < hi componentwise")
    xx = grid.coords()
    mask = np.ones(grid.dims, dtype=bool)
    r = np.full(grid.dims, np.inf)
    for ax in range(grid.ndim):
        mask &= (xx[ax] > lo[ax]) & (xx[ax] < hi[ax])
        r = np.minimum(r, np.minimum(xx[ax] - lo[ax], hi[ax] - xx[ax]))
    r = np.where(mask, np.clip(r, 0.0, None), 0.0)
    return Domain(grid, mask, r, "rectangle")


def domain_from_mask(mask, grid):
    """Domain from an arbitrary boolean mask.

    r is computed by brute-force distance to boundary-adjacent unmasked
    nodes; exactness is not required, only O(spacing) accuracy.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.dims:
        raise ValueError("mask shape does not match grid")
    r = np.zeros(grid.dims)
    if mask.any() and not mask.all():
        near = np.zeros_like(mask)
        for ax in range(grid.ndim):
            near |= _shift_bool(mask, ax, +1) | _shift_bool(mask, ax, -1)
        boundary = near & ~mask
        bpts = np.argwhere(boundary) * np.asarray(grid.spacing)
        mpts = np.argwhere(mask) * np.asarray(grid.spacing)
        # chunked O(N * |boundary|) sweep; desk-scale masks keep this cheap
        dmin = np.empty(len(mpts))
        step = max(1, 2_000_000 // max(len(bpts), 1))
        for k in range(0, len(mpts), step):
            blk = mpts[k : k + step]
            d2 = ((blk[:, None, :] - bpts[None, :, :]) ** 2).sum(axis=2)
            dmin[k : k + step] = np.sqrt(d2.min(axis=1))
        r[mask] = dmin
    elif mask.all():
        # no boundary inside the grid; fall back to distance to grid edge
        xx = grid.coords()
        r = np.full(grid.dims, np.inf)
        for ax in range(grid.ndim):
            r = np.minimum(r, np.minimum(xx[ax] - xx[ax].min(), xx[ax].max() - xx[ax]))
    return Domain(grid, mask, r, "polygon-mask")


def shrink(domain, eps):
    """Inner approximation {x in domain : r(x) > eps}.

    eps=0 returns an identical domain; an empty result is allowed and is
    flagged by the Domain constructor.
    """
    eps = float(eps)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0.0:
        return domain
    mask = domain.r > eps
    r = np.where(mask, domain.r - eps, 0.0)
    geom = domain.geom
    if domain.kind == "disc" and geom is not None:
        geom = {"center": geom["center"], "radius": geom["radius"] - eps}
    return Domain(domain.grid, mask, r, domain.kind, geom=geom)


# ---------------------------------------------------------------------------
# quadrature


def _mask_for(f_grid, domain):
    """Domain mask broadcast to a field grid (spatial or space-time)."""
    if f_grid == domain.grid:
        return domain.mask
    if f_grid.matches_spatial(domain.grid):
        return np.broadcast_to(domain.mask, f_grid.dims)
    raise ValueError("grid mismatch: field grid is neither the domain grid nor a space-time grid over it")


def integrate(f, domain):
    """Midpoint-rule integral of a scalar field over the domain.

    Sums f * cell_volume over masked nodes in C order (deterministic).
    Space-time fields are integrated over I x Omega with the mask
    broadcast along the time axis.
    """
    if not isinstance(f, ScalarField):
        raise TypeError("integrate expects a ScalarField")
    mask = _mask_for(f.grid, domain)
    return float(np.sum(f.values[mask]) * f.grid.cell_volume)


# ---------------------------------------------------------------------------
# serialization

def fmt_float(v):
    """Shortest round-trip decimal of a float (plain Python repr)."""
    return repr(float(v))


_FIELD_KINDS = {"scalar": ScalarField, "vector": VectorField, "sym": SymTensorField}


def _field_kind(f):
    for name, cls in _FIELD_KINDS.items():
        if type(f) is cls:
            return name
    raise TypeError(f"cannot serialize field of type {type(f).__name__}")


def write_field(path, f, comment=None):
    """Plain-text field file: small header, then one node per line in C order."""
    kind = _field_kind(f)
    g = f.grid
    ncomp = 1 if kind == "scalar" else f.values.shape[-1]
    flat = f.values.reshape(-1, ncomp) if ncomp > 1 else f.values.reshape(-1, 1)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# varexp field v1\n")
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("dims " + " ".join(str(n) for n in g.dims) + "\n")
        fh.write("spacing " + " ".join(fmt_float(s) for s in g.spacing) + "\n")
        fh.write("origin " + " ".join(fmt_float(o) for o in g.origin) + "\n")
        fh.write(f"ncomp {ncomp}\n")
        fh.write(f"layout {kind}\n")
        for row in flat:
            fh.write(" ".join(fmt_float(v) for v in row) + "\n")


def read_field(path):
    with open(path, "r", encoding="ascii") as fh:
        magic = fh.readline()
        if not magic.startswith("# varexp field"):
            raise ValueError(f"{path}: not a varexp field file")
        header = {}
        while len(header) < 5:
            line = fh.readline()
            if line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            header[key.strip()] = rest.split()
        dims = [int(n) for n in header["dims"]]
        spacing = [float(s) for s in header["spacing"]]
        origin = [float(o) for o in header["origin"]]
        ncomp = int(header["ncomp"][0])
        layout = header["layout"][0]
        values = np.loadtxt(fh, dtype=float).reshape(dims + ([ncomp] if ncomp > 1 else []))
    grid = Grid(dims, spacing, origin)
    if layout == "scalar":
        return ScalarField(grid, values)
    if layout == "vector":
        return VectorField(grid, values)
    if layout == "sym":
        return SymTensorField(grid, values)
    raise ValueError(f"{path}: unknown layout {layout!r}")


def export_csv(path, f, comment=None):
    """CSV export: one row per node, coordinates then components."""
    g = f.grid
    kind = _field_kind(f)
    ncomp = 1 if kind == "scalar" else f.values.shape[-1]
    coords = [c.reshape(-1) for c in g.coords()]
    flat = f.values.reshape(-1, ncomp) if ncomp > 1 else f.values.reshape(-1, 1)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        head = [f"x{a + 1}" for a in range(g.ndim)] + [f"c{c}" for c in range(ncomp)]
        fh.write(",".join(head) + "\n")
        for i in range(flat.shape[0]):
            row = [fmt_float(c[i]) for c in coords] + [fmt_float(v) for v in flat[i]]
            fh.write(",".join(row) + "\n")


def write_pgm(path, f, maxval=255, comment=None):
    """Scalar field as an ASCII portable graymap plus a value-range sidecar.

    The raster maps axis 0 to rows.  The sidecar `<path>.range.txt` records
    the min and max so the gray levels can be mapped back.
    """
    if not isinstance(f, ScalarField) or f.grid.ndim != 2:
        raise TypeError("write_pgm expects a ScalarField on a 2-d grid")
    v = f.values
    vmin, vmax = float(v.min()), float(v.max())
    span = vmax - vmin
    levels = np.zeros_like(v, dtype=int) if span == 0 else np.rint((v - vmin) / span * maxval).astype(int)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("P2\n")
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(f"{v.shape[1]} {v.shape[0]}\n{maxval}\n")
        for row in levels:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")
    with open(str(path) + ".range.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"min {fmt_float(vmin)}\nmax {fmt_float(vmax)}\n")
