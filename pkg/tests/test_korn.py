import numpy as np
import pytest
from scipy import integrate as sciint

import varexp as vx
from varexp.calculus import gradient, sym_gradient
from varexp.korn import (
    KornRatioRow,
    WetBlanketConfig,
    build_exponent,
    build_phi,
    build_velocity,
    korn_ratio_sequence,
    phi_raw,
    write_heatmaps,
    write_ratio_csv,
)

A = np.array([[0.0, -1.0], [1.0, 0.0]])


def figure_domain(res=96):
    grid = vx.grid_on_box([-3, -3], [3, 3], [res, res])
    return vx.make_disc_domain((0, 0), 2.5, grid)


def test_config_validation():
    with pytest.raises(ValueError):
        WetBlanketConfig(alpha=2.0, beta=1.1)
    with pytest.raises(ValueError):
        WetBlanketConfig(skew=((0.0, 1.0), (1.0, 0.0)))
    with pytest.raises(ValueError):
        WetBlanketConfig(eps=0.0)


def test_velocity_rigid_core_and_support():
    dom = figure_domain()
    grid = dom.grid
    u = build_velocity(WetBlanketConfig(), dom)
    xx = grid.coords()
    rho = np.sqrt(xx[0] ** 2 + xx[1] ** 2)
    hx = max(grid.spacing)

    core = rho < 0.6 - 2 * hx
    G = gradient(u, dom).values
    assert np.allclose(G[core], A, atol=1e-10)
    eps = sym_gradient(u, dom).values
    assert np.abs(eps[core]).max() < 1e-10
    outside = rho > 1.4 + 2 * hx
    assert np.abs(u.values[outside]).max() == 0.0
    # |eps(u)| lives only on the transition ring
    mag = vx.field_abs(sym_gradient(u, dom)).values
    ring = (rho > 0.6 - 2 * hx) & (rho < 1.4 + 2 * hx)
    assert np.abs(mag[~ring]).max() < 1e-10


def test_velocity_needs_room():
    grid = vx.grid_on_box([-1, -1], [1, 1], [32, 32])
    dom = vx.make_disc_domain((0, 0), 0.9, grid)
    with pytest.raises(ValueError, match="fit compactly"):
        build_velocity(WetBlanketConfig(), dom)


def test_exponent_pure_regions_and_sandwich():
    dom = figure_domain()
    cfg = WetBlanketConfig()
    u = build_velocity(cfg, dom)
    p = build_exponent(cfg, dom, velocity=u)
    vals = p.values.values
    assert p.p_minus >= cfg.alpha - 1e-12
    assert p.p_plus <= cfg.beta + 1e-12

    ring = vx.field_abs(sym_gradient(u, dom)).values > 1e-13
    assert np.allclose(vals[ring], cfg.alpha, atol=1e-12)

    xx = dom.grid.coords()
    rho = np.sqrt(xx[0] ** 2 + xx[1] ** 2)
    hx = max(dom.grid.spacing)
    deep = (rho < 0.2 - cfg.eps / 2 - 2 * hx) | ((rho > 1.4 + cfg.eps + 2 * hx) & dom.mask)
    assert np.allclose(vals[deep], cfg.beta, atol=1e-12)
    # transition ring strictly between the bounds somewhere
    between = (vals > cfg.alpha + 1e-6) & (vals < cfg.beta - 1e-6)
    assert between.any()

    # conjugate of the two pure values
    pc = vx.conjugate(p)
    assert np.allclose(pc.values.values[ring], 11.0, atol=1e-9)
    assert np.allclose(pc.values.values[deep], 2.0, atol=1e-12)


def test_phi_raw_integrability_split():
    from scipy.special import beta as beta_fn

    # oracle: adaptive quadrature of the L^1.1 modular of the raw profile
    val, _ = sciint.quad(lambda t: (abs(t) ** -0.5 - 1.0) ** 1.1, -1, 1, points=[0.0], limit=400)
    assert np.isfinite(val)
    # second route: substituting u = sqrt(|t|) gives 4 B(0.9, 2.1)
    assert val == pytest.approx(4.0 * beta_fn(0.9, 2.1), rel=1e-7)
    assert val == pytest.approx(2.2366096, abs=1e-6)
    # the square blows up like log(1/eps): no L^2 membership
    tails = [
        sciint.quad(lambda t: (t**-0.5 - 1.0) ** 2, eps, 1.0)[0] for eps in (1e-2, 1e-4, 1e-6)
    ]
    assert tails[2] > tails[1] > tails[0]
    assert tails[2] - tails[1] == pytest.approx(np.log(1e2), rel=0.05)


def test_build_phi_profiles():
    tg = vx.grid_on_box([-1.5], [1.5], [256])
    norms = []
    for n in range(1, 6):
        phi = build_phi(n, tg)
        assert np.all(phi.values >= -1e-12)
        norms.append(float(np.sqrt(np.sum(phi.values**2) * tg.spacing[0])))
    assert all(norms[i + 1] > norms[i] for i in range(4))  # L^2 growth in n
    with pytest.raises(ValueError, match="too coarse"):
        build_phi(9, tg)
    # mollification converges on the smooth tail, away from the spike
    t = tg.axis_coords(0)
    tail = np.abs(np.abs(t) - 0.6) < 0.1
    phi5 = build_phi(5, tg)
    assert np.abs(phi5.values[tail] - phi_raw(t)[tail]).max() < 0.02


def test_separable_factorization():
    # ||psi F||_{p(.)} = ||psi||_alpha ||F||_alpha when F sits in the alpha region
    dom = figure_domain(64)
    cfg = WetBlanketConfig()
    u = build_velocity(cfg, dom)
    p = build_exponent(cfg, dom, velocity=u)
    F = vx.field_abs(sym_gradient(u, dom))
    tg = vx.grid_on_box([-1.5], [1.5], [64])
    psi = np.cos(0.7 * tg.axis_coords(0)) + 1.2
    st = vx.Grid((64,) + dom.grid.dims, (tg.spacing[0],) + dom.grid.spacing, (tg.origin[0],) + dom.grid.origin)
    prod = vx.ScalarField(st, psi[:, None, None] * F.values[None, ...])
    lux = vx.luxembourg_norm(prod, p.extend_constant_in_time(st), dom)
    psi_a = (np.sum(np.abs(psi) ** cfg.alpha) * tg.spacing[0]) ** (1 / cfg.alpha)
    F_a = vx.modular(F, vx.constant_exponent(dom.grid, cfg.alpha), dom) ** (1 / cfg.alpha)
    assert lux == pytest.approx(psi_a * F_a, rel=1e-6)


def test_ratio_sequence_monotone_and_bounded_contrast():
    dom = figure_domain(48)
    tg = vx.grid_on_box([-1.5], [1.5], [128])
    rows = korn_ratio_sequence(WetBlanketConfig(), dom, tg, 4)
    assert [r.n for r in rows] == [1, 2, 3, 4]
    assert all(rows[i + 1].ratio > rows[i].ratio for i in range(3))
    assert all(r.ratio >= r.lower_bound - 1e-9 for r in rows)
    assert all(r.norm_beta > 0 and r.num > r.den > 0 for r in rows)

    flat = korn_ratio_sequence(WetBlanketConfig(alpha=1.5, beta=1.5), dom, tg, 3)
    ratios = [r.ratio for r in flat]
    assert max(ratios) / min(ratios) <= 1.01  # constant exponent: flat sequence


def test_writers(tmp_path):
    rows = [KornRatioRow(1, 1.0, 2.0, 3.0, 1.5, 2.0, 0.5)]
    path = tmp_path / "ratio.csv"
    write_ratio_csv(path, rows, comment="stamp")
    lines = path.read_text().splitlines()
    assert lines[0] == "# stamp"
    assert lines[1] == "n,norm_alpha,norm_beta,num,den,ratio,lower_bound"
    assert lines[2].startswith("1,1.0,2.0,3.0,1.5,2.0,0.5")

    dom = figure_domain(48)
    paths = write_heatmaps(tmp_path, WetBlanketConfig(), dom)
    for p in paths:
        assert (tmp_path / p).exists() or p  # absolute path returned
        assert p.endswith(".pgm")
