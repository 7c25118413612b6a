"""Implicit-Euler (Rothe) solver for the model parabolic problem.

Each backward-Euler step solves a convex minimization whose gradient is the
weak form of

    (u - u_prev)/tau - div S(., ., eps(u)) + b(., ., u) = f - div F,

with a flux of (p(t,x), delta)-structure, S(A) = (delta+|A|)^(p-2) A, and a
lower-order term b treated explicitly inside a damped fixed-point loop.
Dirichlet boundary values are enforced by constraining the boundary layer
of masked nodes to zero.  The module also provides the discrete energy
(a priori) inequality report, the integration-by-parts residual in time,
and manufactured-solution helpers.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
from scipy import sparse

from .fields import Grid, ScalarField, VectorField, fmt_float, sym_pairs, sym_weights
from .fields import _shift_bool  # stencil neighbor masks
from .modular import ExponentField

log = logging.getLogger(__name__)

__all__ = [
    "ConstitutiveLaw",
    "LowerOrderLaw",
    "flux_factor",
    "flux_potential",
    "ProblemData",
    "EpsOperator",
    "energy_step",
    "rothe_solve",
    "StepDiagnostics",
    "RotheStepError",
    "energy_inequality_report",
    "discrete_ibp_check",
    "critical_growth_bound",
    "mms_bump",
    "mms_solution_p2",
    "mms_time_derivative_p2",
    "mms_varp",
    "mms_forcing_discrete",
    "write_diagnostics_csv",
]


# ---------------------------------------------------------------------------
# constitutive structure


def flux_factor(s, p, delta):
    """(delta + s)^(p-2) with the s = delta = 0 limit resolved to 0."""
    s = np.asarray(s, dtype=float)
    base = delta + s
    pexp = np.broadcast_to(np.asarray(p, dtype=float), base.shape)
    out = np.zeros_like(base)
    pos = base > 0.0
    out[pos] = base[pos] ** (pexp[pos] - 2.0)
    return out


def flux_potential(s, p, delta):
    """Antiderivative Phi with Phi'(s) = (delta+s)^(p-2) s and Phi(0) = 0."""
    p = np.asarray(p, dtype=float)
    base = delta + np.asarray(s, dtype=float)
    return s * base ** (p - 1.0) / (p - 1.0) - (base**p - float(delta) ** p) / (p * (p - 1.0))


@dataclasses.dataclass(frozen=True)
class ConstitutiveLaw:
    """Flux S(t,x,A) = (delta+|A|)^(p(t,x)-2) A with its structure constants.

    The canonical instance has growth constant alpha=1, coercivity constant
    c0=1, and vanishing offsets beta, c1; those values make the growth,
    coercivity, and monotonicity conditions hold with equality slack.
    """

    exponent: ExponentField
    delta: float = 0.0
    alpha: float = 1.0
    c0: float = 1.0
    beta_offset: float = 0.0
    c1_offset: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    def exponent_at(self, data, k):
        """Spatial exponent values at vertex time index k."""
        p = self.exponent
        if p.grid == data.domain.grid:
            return p.values.values
        if p.grid.matches_spatial(data.domain.grid):
            return p.values.values[k]
        raise ValueError("law exponent lives on neither the spatial nor the space-time grid")

    def flux(self, eps_comps, p_nodes, d):
        """S applied to compact symmetric components at a set of nodes."""
        w = sym_weights(d)
        mag = np.sqrt(np.sum(w * eps_comps**2, axis=-1))
        fac = flux_factor(mag, p_nodes, self.delta)
        return fac[..., None] * eps_comps

    def potential(self, eps_mag, p_nodes):
        return flux_potential(eps_mag, p_nodes, self.delta)


def p_star(p, d):
    """Parabolic embedding exponent: p (d+2)/d below dimension d, else p + 2."""
    return p * (d + 2) / d if p < d else p + 2.0


def critical_growth_bound(p_minus, d):
    """Upper bound (p-)_* / (p-)' for the lower-order growth exponent r."""
    conj = p_minus / (p_minus - 1.0)
    return p_star(p_minus, d) / conj


@dataclasses.dataclass(frozen=True)
class LowerOrderLaw:
    """Lower-order term b(t,x,a) with growth exponent r and sign constant c2.

    Canonical instances: `zero` (b = 0), `power` (gamma |a|^(r-1) a, which
    is sign-positive), and `damped` which subtracts a bounded attractor and
    therefore carries a genuine c2 > 0.
    """

    func: object
    r: float
    gamma: float
    eta_offset: float = 0.0
    c2: float = 0.0
    name: str = "custom"

    @classmethod
    def zero(cls):
        return cls(func=lambda a: np.zeros_like(a), r=1.0, gamma=0.0, name="zero")

    @classmethod
    def power(cls, gamma, r):
        if gamma < 0 or r < 1:
            raise ValueError("need gamma >= 0 and r >= 1")

        def f(a):
            mag = np.sqrt(np.sum(a**2, axis=-1))[..., None]
            return gamma * mag ** (r - 1.0) * a

        return cls(func=f, r=float(r), gamma=float(gamma), name="power")

    @classmethod
    def damped(cls, gamma, r, kappa):
        """Power law minus the bounded perturbation kappa a/(1+|a|^2)."""
        if kappa < 0:
            raise ValueError("kappa must be >= 0")
        base = cls.power(gamma, r)

        def f(a):
            mag2 = np.sum(a**2, axis=-1)[..., None]
            return base.func(a) - kappa * a / (1.0 + mag2)

        return cls(func=f, r=float(r), gamma=float(gamma) + kappa, c2=float(kappa), name="damped")

    def __call__(self, a):
        return self.func(a)

    @property
    def is_zero(self):
        return self.gamma == 0.0 and self.c2 == 0.0


@dataclasses.dataclass(frozen=True)
class ProblemData:
    """Initial condition, forcing fields, horizon and step of one solve.

    f and F live on the vertex-time space-time grid (K+1 time nodes at
    t_k = k tau); either may be None for zero forcing.  u0 must be
    supported in the domain.
    """

    domain: object
    u0: VectorField
    T: float
    tau: float
    f: object = None
    F: object = None

    def __post_init__(self):
        K = self.T / self.tau
        if abs(K - round(K)) > 1e-9 * max(1.0, K):
            raise ValueError(f"tau={self.tau} does not divide T={self.T}")
        if self.u0.grid != self.domain.grid:
            raise ValueError("u0 must live on the domain grid")
        outside = ~self.domain.mask
        if np.abs(self.u0.values[outside]).max(initial=0.0) > 0.0:
            raise ValueError("u0 must be supported in the domain")
        for name in ("f", "F"):
            fld = getattr(self, name)
            if fld is not None and not fld.grid.matches_spatial(self.domain.grid):
                raise ValueError(f"{name} must live on a space-time grid over the domain")
            if fld is not None and fld.grid.dims[0] != self.steps + 1:
                raise ValueError(f"{name} needs {self.steps + 1} vertex time nodes")

    @property
    def steps(self):
        return int(round(self.T / self.tau))

    def time_grid(self):
        return Grid(
            (self.steps + 1,) + self.domain.grid.dims,
            (self.tau,) + self.domain.grid.spacing,
            (0.0,) + self.domain.grid.origin,
        )

    def f_at(self, k):
        if self.f is None:
            return None
        return self.f.values[k]

    def F_at(self, k):
        if self.F is None:
            return None
        return self.F.values[k]


# ---------------------------------------------------------------------------
# discrete symmetric-gradient operator (exact adjoint via sparse transpose)


def _axis_matrix(grid, axis, mask):
    """Sparse nodal derivative along one axis with the masked stencil rules."""
    dims = grid.dims
    N = int(np.prod(dims))
    idx = np.arange(N).reshape(dims)
    h = grid.spacing[axis]
    up_ok = _shift_bool(mask, axis, +1)
    dn_ok = _shift_bool(mask, axis, -1)
    inside = mask
    central = inside & up_ok & dn_ok
    fwd = inside & up_ok & ~dn_ok
    bwd = inside & ~up_ok & dn_ok
    up_idx = np.roll(idx, -1, axis=axis)
    dn_idx = np.roll(idx, +1, axis=axis)

    rows, cols, vals = [], [], []

    def add(sel, col_idx, coeff):
        rows.append(idx[sel])
        cols.append(col_idx[sel])
        vals.append(np.full(np.count_nonzero(sel), coeff))

    add(central, up_idx, +0.5 / h)
    add(central, dn_idx, -0.5 / h)
    add(fwd, up_idx, +1.0 / h)
    add(fwd, idx, -1.0 / h)
    add(bwd, idx, +1.0 / h)
    add(bwd, dn_idx, -1.0 / h)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()


class EpsOperator:
    """Sparse map from free velocity dofs to symmetric-gradient components.

    Free dofs are the interior masked nodes (the Dirichlet boundary layer is
    constrained to zero); rows run over all masked nodes and compact
    components.  The transpose is the exact discrete adjoint, which is what
    makes analytic energy gradients match finite differences to roundoff.
    """

    def __init__(self, domain):
        g = domain.grid
        d = g.ndim
        N = g.node_count()
        mask_flat = domain.mask.reshape(-1)
        free_flat = domain.interior_mask().reshape(-1)
        self.domain = domain
        self.d = d
        self.masked_idx = np.flatnonzero(mask_flat)
        self.free_idx = np.flatnonzero(free_flat)
        self.n_masked = len(self.masked_idx)
        self.n_free = len(self.free_idx)
        self.weights = sym_weights(d)

        R = sparse.coo_matrix(
            (np.ones(self.n_masked), (np.arange(self.n_masked), self.masked_idx)),
            shape=(self.n_masked, N),
        ).tocsr()
        P = sparse.coo_matrix(
            (np.ones(self.n_free), (self.free_idx, np.arange(self.n_free))),
            shape=(N, self.n_free),
        ).tocsr()
        D = [_axis_matrix(g, ax, domain.mask) for ax in range(d)]

        blocks = []
        for i, j in sym_pairs(d):
            row = [None] * d
            if i == j:
                row[i] = R @ D[i] @ P
            else:
                row[i] = 0.5 * (R @ D[j] @ P)
                row[j] = 0.5 * (R @ D[i] @ P)
            zero = sparse.csr_matrix((self.n_masked, self.n_free))
            blocks.append([blk if blk is not None else zero for blk in row])
        self.B = sparse.bmat(blocks, format="csr")

    # -- dof packing -------------------------------------------------------
    def to_free(self, u):
        """Free-dof vector (component-major blocks) from a VectorField."""
        flat = u.values.reshape(-1, self.d)
        return np.concatenate([flat[self.free_idx, i] for i in range(self.d)])

    def to_field(self, x):
        g = self.domain.grid
        out = np.zeros((g.node_count(), self.d))
        for i in range(self.d):
            out[self.free_idx, i] = x[i * self.n_free : (i + 1) * self.n_free]
        return VectorField(g, out.reshape(g.dims + (self.d,)))

    def masked_values(self, field_values, ncomp):
        flat = field_values.reshape(-1, ncomp)
        return flat[self.masked_idx]

    def eps(self, x):
        """Compact components at masked nodes, shape (n_masked, m)."""
        m = self.d * (self.d + 1) // 2
        return (self.B @ x).reshape(m, self.n_masked).T

    def eps_adjoint(self, comps):
        """Exact adjoint of eps applied to weighted masked-node components."""
        m = self.d * (self.d + 1) // 2
        y = (self.weights * comps).T.reshape(m * self.n_masked)
        return self.B.T @ y


class RotheStepError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclasses.dataclass(frozen=True)
class StepDiagnostics:
    k: int
    t: float
    energy: float
    l2norm: float
    modular_eps: float
    residual: float
    iters: int


def _step_energy_grad(op, x, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free):
    """Energy value and gradient (per unit cell volume) at free dofs x."""
    eps = op.eps(x)
    w = op.weights
    mag = np.sqrt(np.sum(w * eps**2, axis=-1))
    du = x - x_prev
    J = float(np.sum(0.5 * du * du) / tau + np.sum(law.potential(mag, p_nodes)))
    if fk_free is not None:
        J -= float(np.dot(fk_free, x))
    if b_free is not None:
        J += float(np.dot(b_free, x))
    S = law.flux(eps, p_nodes, op.d)
    if Fk_masked is not None:
        J -= float(np.sum(w * Fk_masked * eps))
        S = S - Fk_masked
    g = du / tau + op.eps_adjoint(S)
    if fk_free is not None:
        g -= fk_free
    if b_free is not None:
        g += b_free
    return J, g


def _step_energy_only(op, x, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free):
    eps = op.eps(x)
    w = op.weights
    mag = np.sqrt(np.sum(w * eps**2, axis=-1))
    du = x - x_prev
    J = float(np.sum(0.5 * du * du) / tau + np.sum(law.potential(mag, p_nodes)))
    if fk_free is not None:
        J -= float(np.dot(fk_free, x))
    if b_free is not None:
        J += float(np.dot(b_free, x))
    if Fk_masked is not None:
        J -= float(np.sum(w * Fk_masked * eps))
    return J


def _descend(op, x0, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free, tol, max_iter, trace=None):
    """Gradient descent with Armijo backtracking; step sizes warm-started BB-style.

    The energy is convex, so backtracking keeps the energy trail monotone
    up to float roundoff; the loop stops when the rms nodal residual falls
    below tol.  `trace`, if given, collects the energy after every accepted
    step.
    """
    x = x0.copy()
    J, g = _step_energy_grad(op, x, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free)
    n = max(x.size, 1)
    step = tau
    res = float(np.sqrt(np.dot(g, g) / n))
    it = 0
    while res > tol and it < max_iter:
        gg = float(np.dot(g, g))
        t = step
        # the roundoff allowance keeps Armijo decidable once the decrease
        # drops below the float noise of the (possibly large) energy value
        noise = 1e-14 * (abs(J) + 1.0)
        for _ in range(60):
            xn = x - t * g
            Jn = _step_energy_only(op, xn, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free)
            if Jn <= J - 1e-4 * t * gg + noise:
                break
            t *= 0.5
        else:
            raise RotheStepError("backtracking stalled", res)
        Jn2, gn = _step_energy_grad(op, xn, x_prev, tau, p_nodes, law, fk_free, Fk_masked, b_free)
        s = xn - x
        y = gn - g
        sy = float(np.dot(s, y))
        step = min(float(np.dot(s, s)) / sy, 4.0 * t) if sy > 0 else 2.0 * t
        x, J, g = xn, Jn2, gn
        if trace is not None:
            trace.append(J)
        res = float(np.sqrt(np.dot(g, g) / n))
        it += 1
    if res > tol:
        raise RotheStepError(
            f"energy step did not converge in {max_iter} iterations (residual {res:.3e})", res
        )
    return x, J, res, it


def _tolerance(data, u_prev, k, base_tol=1e-8):
    g = data.domain.grid
    mag = u_prev.max_abs() / data.tau
    fk = data.f_at(k)
    if fk is not None:
        mag += float(np.abs(fk).max())
    Fk = data.F_at(k)
    if Fk is not None:
        mag += 2.0 * g.ndim * float(np.abs(Fk).max()) / min(g.spacing)
    return base_tol * (1.0 + mag)


def energy_step(u_prev, k, law, low, data, op=None, max_iter=5000, picard_max=50, return_info=False):
    """One implicit step: minimize the step energy, Picard-iterating the b-term.

    Returns the new VectorField (optionally with an info dict carrying the
    converged energy, residual, and iteration count).  The minimizer runs
    gradient descent with backtracking until the rms weak-form residual is
    below 1e-8 * (1 + data magnitude); non-convergence raises
    RotheStepError with the final residual.
    """
    if op is None:
        op = EpsOperator(data.domain)
    p_all = law.exponent_at(data, k)
    if law.delta == 0.0 and float(np.min(p_all)) < 2.0:
        law = dataclasses.replace(law, delta=1e-8)
        log.warning("delta=0 with p_min < 2 is non-smooth at eps=0; regularized with delta=1e-8")
    p_nodes = p_all.reshape(-1)[op.masked_idx]
    x_prev = op.to_free(u_prev)
    fk = data.f_at(k)
    fk_free = None
    if fk is not None:
        flat = fk.reshape(-1, op.d)
        fk_free = np.concatenate([flat[op.free_idx, i] for i in range(op.d)])
    Fk = data.F_at(k)
    Fk_masked = op.masked_values(Fk, op.d * (op.d + 1) // 2) if Fk is not None else None
    tol = _tolerance(data, u_prev, k)

    if low is None or low.is_zero:
        x, J, res, it = _descend(
            op, x_prev, x_prev, data.tau, p_nodes, law, fk_free, Fk_masked, None, tol, max_iter
        )
        u = op.to_field(x)
        if return_info:
            return u, {"energy": J, "residual": res, "iters": it}
        return u

    # damped fixed point in the explicit b argument
    v = x_prev.copy()
    total_iters = 0
    drift = np.inf
    for _ in range(picard_max):
        b_nodes = low(op.to_field(v).values).reshape(-1, op.d)
        b_free = np.concatenate([b_nodes[op.free_idx, i] for i in range(op.d)])
        x, J, res, it = _descend(
            op, v, x_prev, data.tau, p_nodes, law, fk_free, Fk_masked, b_free, tol, max_iter
        )
        total_iters += it
        v_new = 0.5 * v + 0.5 * x
        drift = float(np.sqrt(np.sum((v_new - v) ** 2) / max(v.size, 1)))
        v = v_new
        if drift <= tol:
            u = op.to_field(x)
            if return_info:
                return u, {"energy": J, "residual": res, "iters": total_iters}
            return u
    raise RotheStepError(f"Picard loop did not settle in {picard_max} iterations", drift)


def rothe_solve(data, law, low=None, collect_diagnostics=True):
    """March the implicit scheme over all steps; returns (trajectory, diagnostics).

    The trajectory holds K+1 VectorFields starting from u0 projected onto
    the free dofs (Dirichlet layer zeroed).  Diagnostics record per-step
    energy, L2 norm, the exponent modular of eps(u), the final residual,
    and the iteration count.
    """
    domain = data.domain
    op = EpsOperator(domain)
    d = op.d
    if low is not None and not low.is_zero:
        p_minus = law.exponent.p_minus
        bound = critical_growth_bound(p_minus, d)
        if low.r >= bound:
            raise ValueError(
                f"lower-order growth r={low.r} is supercritical (needs r < {bound:.3f})"
            )
    vol = domain.grid.cell_volume

    u = op.to_field(op.to_free(data.u0))  # projects the boundary layer to zero
    traj = [u]
    diags = []
    for k in range(1, data.steps + 1):
        u, info = energy_step(traj[-1], k, law, low, data, op=op, return_info=True)
        traj.append(u)
        if collect_diagnostics:
            x = op.to_free(u)
            p_nodes = law.exponent_at(data, k).reshape(-1)[op.masked_idx]
            eps = op.eps(x)
            mag = np.sqrt(np.sum(op.weights * eps**2, axis=-1))
            diags.append(
                StepDiagnostics(
                    k=k,
                    t=k * data.tau,
                    energy=info["energy"] * vol,
                    l2norm=float(np.sqrt(np.sum(u.values**2) * vol)),
                    modular_eps=float(np.sum(mag**p_nodes) * vol),
                    residual=info["residual"],
                    iters=info["iters"],
                )
            )
    return traj, diags


def write_diagnostics_csv(path, diags, comment=None, extra_columns=None):
    """Per-step diagnostics CSV: k,t,energy,l2norm,modular_eps,residual,iters."""
    extra = extra_columns or {}
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        cols = ["k", "t", "energy", "l2norm", "modular_eps", "residual", "iters"] + list(extra)
        fh.write(",".join(cols) + "\n")
        for i, dg in enumerate(diags):
            row = [str(dg.k)] + [
                fmt_float(v)
                for v in (dg.t, dg.energy, dg.l2norm, dg.modular_eps, dg.residual)
            ] + [str(dg.iters)]
            row += [fmt_float(extra[name][i]) for name in extra]
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# discrete a priori (energy) inequality


def energy_inequality_report(traj, law, low, data):
    """Per-step sides of the discrete coercivity (a priori) bound.

    Tested with the solution itself, the step equations telescope into

        1/2 ||u^K||^2 + (c0/2) sum tau rho_p(eps u^k)
            <= 1/2 ||u^0||^2 + sum tau [ (f,u^k) + (F,eps u^k) + g_k ]
               + sum tau [ c0 rho_p(delta) + ||c1||_1 + ||c2||_1 ],

    where g_k is the measured weak-form defect of step k (zero for exact
    minimizers).  Returns a list of (lhs, rhs) pairs for K = 1..steps.
    """
    op = EpsOperator(data.domain)
    vol = data.domain.grid.cell_volume
    d = op.d
    w = op.weights
    half_u0 = 0.5 * float(np.sum(traj[0].values**2)) * vol

    lhs_rhs = []
    acc_eps = 0.0
    acc_data = 0.0
    acc_floor = 0.0
    for k in range(1, data.steps + 1):
        p_nodes = law.exponent_at(data, k).reshape(-1)[op.masked_idx]
        law_eff = law
        if law.delta == 0.0 and float(p_nodes.min()) < 2.0:
            law_eff = dataclasses.replace(law, delta=1e-8)
        x = op.to_free(traj[k])
        x_prev = op.to_free(traj[k - 1])
        eps = op.eps(x)
        mag = np.sqrt(np.sum(w * eps**2, axis=-1))

        fk = data.f_at(k)
        fk_free = None
        f_pair = 0.0
        if fk is not None:
            flat = fk.reshape(-1, d)
            fk_free = np.concatenate([flat[op.free_idx, i] for i in range(d)])
            f_pair = float(np.dot(fk_free, x)) * vol
        Fk = data.F_at(k)
        Fk_m = None
        F_pair = 0.0
        if Fk is not None:
            Fk_m = op.masked_values(Fk, d * (d + 1) // 2)
            F_pair = float(np.sum(w * Fk_m * eps)) * vol

        b_free = None
        if low is not None and not low.is_zero:
            b_nodes = low(traj[k].values).reshape(-1, d)
            b_free = np.concatenate([b_nodes[op.free_idx, i] for i in range(d)])
        _, g = _step_energy_grad(
            op, x, x_prev, data.tau, p_nodes, law_eff, fk_free, Fk_m, b_free
        )
        g_k = float(np.dot(g, x)) * vol

        acc_eps += data.tau * float(np.sum(mag**p_nodes)) * vol
        acc_data += data.tau * (f_pair + F_pair + g_k)
        rho_delta = float(np.sum(law_eff.delta ** p_nodes)) * vol if law_eff.delta > 0 else 0.0
        c2_mass = (low.c2 if low is not None else 0.0) * data.domain.measure()
        c1_mass = law.c1_offset * data.domain.measure()
        acc_floor += data.tau * (law.c0 * rho_delta + c1_mass + c2_mass)

        lhs = 0.5 * float(np.sum(traj[k].values**2)) * vol + 0.5 * law.c0 * acc_eps
        rhs = half_u0 + acc_data + acc_floor
        lhs_rhs.append((lhs, rhs))
    return lhs_rhs


# ---------------------------------------------------------------------------
# integration by parts in time


def _space_inner(u_vals, v_vals, mask, vol):
    prod = np.sum(u_vals * v_vals, axis=-1)
    return np.sum(np.where(mask, prod, 0.0), axis=tuple(range(1, prod.ndim))) * vol


def _time_derivative(vals, tau):
    """Central differences in time with second-order one-sided ends.

    First-order ends would pair with the trapezoid rule into an exact
    summation-by-parts identity, leaving nothing to measure; the
    second-order ends keep a genuine O(tau^2) quadrature residual.
    """
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2.0 * tau)
    out[0] = (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * tau)
    out[-1] = (3.0 * vals[-1] - 4.0 * vals[-2] + vals[-3]) / (2.0 * tau)
    return out


def discrete_ibp_check(u, v, domain):
    """Residual of the integration-by-parts formula in time.

    |int (du/dt, v) dt - [(u, v)]_0^T + int (dv/dt, u) dt| with discrete
    time derivatives and trapezoid time quadrature; O(tau^2) for smooth
    inputs, exactly zero when one factor is constant or linear in time.
    """
    if u.grid != v.grid or not u.grid.matches_spatial(domain.grid):
        raise ValueError("u, v must share a space-time grid over the domain")
    if u.grid.dims[0] < 3:
        raise ValueError("need at least 3 time nodes")
    tau = u.grid.spacing[0]
    vol = domain.grid.cell_volume
    du = _time_derivative(u.values, tau)
    dv = _time_derivative(v.values, tau)
    a = _space_inner(du, v.values, domain.mask, vol)
    b = _space_inner(dv, u.values, domain.mask, vol)
    pair = _space_inner(u.values, v.values, domain.mask, vol)

    def trapz(y):
        return tau * (0.5 * y[0] + np.sum(y[1:-1]) + 0.5 * y[-1])

    boundary = pair[-1] - pair[0]
    return float(abs(trapz(a) - boundary + trapz(b)))


# ---------------------------------------------------------------------------
# manufactured solutions


def mms_bump(s, order=0):
    """C-infinity bump on (0,1), its first, or its second derivative.

    b(s) = exp(4 - 1/(s(1-s))) inside (0,1), 0 outside; normalized to peak
    1 at s = 1/2.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    q = si * (1.0 - si)
    b = np.exp(4.0 - 1.0 / q)
    if order == 0:
        out[inside] = b
    elif order == 1:
        out[inside] = b * (1.0 - 2.0 * si) / q**2
    elif order == 2:
        one = (1.0 - 2.0 * si) ** 2
        out[inside] = b * (one - 2.0 * q**2 - 2.0 * one * q) / q**4
    else:
        raise ValueError("order must be 0, 1, or 2")
    return out


def _mms_psi(grid, lo, hi):
    """Separable bump psi and its needed partials on a 2-d grid box."""
    xx = grid.coords()
    L = [hi[a] - lo[a] for a in range(2)]
    s = [(xx[a] - lo[a]) / L[a] for a in range(2)]
    bx, by = mms_bump(s[0]), mms_bump(s[1])
    bx1, by1 = mms_bump(s[0], 1) / L[0], mms_bump(s[1], 1) / L[1]
    bx2, by2 = mms_bump(s[0], 2) / L[0] ** 2, mms_bump(s[1], 2) / L[1] ** 2
    psi = bx * by
    return {
        "psi": psi,
        "xx": bx2 * by,
        "yy": bx * by2,
        "xy": bx1 * by1,
    }


def mms_solution_p2(domain, T, K, box=None, g_amplitude=0.5):
    """Manufactured fields for the p = 2, delta = 0 flux: u*, f (analytic), u0.

    u*(t, x) = g(t) (psi, -psi) with psi a separable smooth bump and
    g(t) = 1 + g_amplitude sin(2 pi t / T); the forcing comes from the
    closed-form divergence of the symmetric gradient, so the spatial error
    of the scheme is genuinely second order.
    """
    g2 = domain.grid
    if box is None:
        lo = [g2.origin[a] for a in range(2)]
        hi = [g2.origin[a] + (g2.dims[a] - 1) * g2.spacing[a] for a in range(2)]
        box = (lo, hi)
    lo, hi = box
    parts = _mms_psi(g2, lo, hi)
    psi = parts["psi"]
    dive1 = parts["xx"] + 0.5 * parts["yy"] - 0.5 * parts["xy"]
    dive2 = 0.5 * parts["xy"] - 0.5 * parts["xx"] - parts["yy"]

    tau = T / K
    times = np.arange(K + 1) * tau

    def g(t):
        return 1.0 + g_amplitude * np.sin(2.0 * np.pi * t / T)

    def gp(t):
        return g_amplitude * 2.0 * np.pi / T * np.cos(2.0 * np.pi * t / T)

    w = np.stack([psi, -psi], axis=-1)
    st = Grid((K + 1,) + g2.dims, (tau,) + g2.spacing, (0.0,) + g2.origin)
    u_star = VectorField(st, g(times)[:, None, None, None] * w[None, ...])
    f_vals = (
        gp(times)[:, None, None, None] * w[None, ...]
        - g(times)[:, None, None, None] * np.stack([dive1, dive2], axis=-1)[None, ...]
    )
    f = VectorField(st, f_vals)
    u0 = VectorField(g2, g(0.0) * w)
    return u_star, f, u0


def mms_time_derivative_p2(domain, T, K, g_amplitude=0.5):
    """Exact time derivative of the p=2 manufactured solution at vertex index k."""
    g2 = domain.grid
    lo = [g2.origin[a] for a in range(2)]
    hi = [g2.origin[a] + (g2.dims[a] - 1) * g2.spacing[a] for a in range(2)]
    parts = _mms_psi(g2, lo, hi)
    w = np.stack([parts["psi"], -parts["psi"]], axis=-1)

    def deriv(k):
        t = k * T / K
        gp = g_amplitude * 2.0 * np.pi / T * np.cos(2.0 * np.pi * t / T)
        return gp * w

    return deriv


def mms_varp(domain, T, K, exponent_fn, delta, refine=4, g_amplitude=0.5):
    """Manufactured problem for a variable exponent: forcing from a finer grid.

    The divergence of the nonlinear flux has no convenient closed form for
    variable p, so the forcing is assembled with the same discrete
    operators on a `refine`-times finer vertex grid and sampled back at the
    shared coarse nodes.  Returns (u_star, f, u0, law).
    """
    g2 = domain.grid
    lo = [g2.origin[a] for a in range(2)]
    hi = [g2.origin[a] + (g2.dims[a] - 1) * g2.spacing[a] for a in range(2)]
    cells = [g2.dims[a] - 1 for a in range(2)]
    u_star, _, u0 = mms_solution_p2(domain, T, K, box=(lo, hi), g_amplitude=g_amplitude)

    def law_on(grid):
        xx = grid.coords()
        return ConstitutiveLaw(
            exponent=ExponentField(ScalarField(grid, exponent_fn(*xx))), delta=delta
        )

    fine_grid = Grid(
        [c * refine + 1 for c in cells],
        [s / refine for s in g2.spacing],
        g2.origin,
    )
    pad = [s * 0.01 for s in fine_grid.spacing]
    from .fields import make_rectangle_domain

    fine_dom = make_rectangle_domain(
        [lo[a] - pad[a] for a in range(2)], [hi[a] + pad[a] for a in range(2)], fine_grid
    )
    star_fine, _, _ = mms_solution_p2(fine_dom, T, K, box=(lo, hi), g_amplitude=g_amplitude)
    fine_data = ProblemData(domain=fine_dom, u0=VectorField(fine_grid, star_fine.values[0]), T=T, tau=T / K)
    f_fine = mms_forcing_discrete(
        star_fine, law_on(fine_grid), fine_data, mms_time_derivative_p2(fine_dom, T, K, g_amplitude)
    )
    sl = (slice(None), slice(None, None, refine), slice(None, None, refine), slice(None))
    f = VectorField(u_star.grid, f_fine.values[sl])
    return u_star, f, u0, law_on(g2)


def mms_forcing_discrete(u_star, law, data, time_derivative):
    """Forcing that makes u* the exact semidiscrete solution.

    f_k := du*/dt(t_k) + adjoint-eps of S(eps_h u*(t_k)) on the free dofs,
    built with the solver's own discrete operators; the remaining error of
    the full scheme is then pure backward-Euler time error.
    """
    op = EpsOperator(data.domain)
    d = op.d
    K = data.steps
    g = data.domain.grid
    out = np.zeros((K + 1,) + g.dims + (d,))
    for k in range(K + 1):
        p_nodes = law.exponent_at(data, k).reshape(-1)[op.masked_idx]
        law_eff = law
        if law.delta == 0.0 and float(p_nodes.min()) < 2.0:
            law_eff = dataclasses.replace(law, delta=1e-8)
        x = op.to_free(VectorField(g, u_star.values[k]))
        eps = op.eps(x)
        S = law_eff.flux(eps, p_nodes, d)
        div_term = op.eps_adjoint(S)
        dt_vals = time_derivative(k)  # exact time derivative on the spatial grid
        flat = dt_vals.reshape(-1, d)
        vec = np.concatenate([flat[op.free_idx, i] for i in range(d)]) + div_term
        comp = np.zeros((g.node_count(), d))
        for i in range(d):
            comp[op.free_idx, i] = vec[i * op.n_free : (i + 1) * op.n_free]
        out[k] = comp.reshape(g.dims + (d,))
    return VectorField(u_star.grid, out)
