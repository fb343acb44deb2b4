import numpy as np
import pytest

from parmeasure.coeffs import make_coefficients
from parmeasure.geometry import ParabolicCube, build_grid
from parmeasure.hodge import (
    build_chi,
    hidden_coercivity_check,
    inf_sup_check,
    solve_hodge,
    weak_residual,
)
from parmeasure.solver import SolverError


def setup(h=1 / 16, r=1 / 16):
    # window holding the 16x dilate: x halfwidth 16 r, t halfwidth 256 r^2
    grid = build_grid(h=h, lmax=h, xext=1.25, text=2.25)
    cube = ParabolicCube(0.0, 1.125, r)
    return grid, cube


def test_chi_plateau_support_and_slope():
    grid, cube = setup()
    chi = build_chi(cube, grid)
    assert chi(cube.x0, cube.t0) == 1.0
    assert chi(cube.x0 + 7.9 * cube.r, cube.t0) == pytest.approx(1.0)
    assert chi(cube.x0 + 16.1 * cube.r, cube.t0) == 0.0
    assert chi(cube.x0, cube.t0 + 257 * cube.r**2) == 0.0
    assert chi.slope_constant(grid) <= 20.0


def test_chi_requires_window():
    grid, _ = setup()
    big = ParabolicCube(0.0, 1.125, 0.25)  # 16x dilate far outside
    with pytest.raises(SolverError):
        build_chi(big, grid)
    chi = build_chi(big, grid, allow_clipping=True)
    assert chi.clipped


def test_identity_hodge_vanishes():
    grid, cube = setup()
    pair = solve_hodge(make_coefficients("identity"), cube, grid)
    assert np.max(np.abs(pair.phi.values)) < 1e-12
    assert pair.energy_phi.total == pytest.approx(0.0, abs=1e-20)


def test_skew_energy_scales_quadratically():
    grid, cube = setup()
    e = {}
    for d in (0.25, 0.5):
        pair = solve_hodge(make_coefficients("skew", {"delta": d}), cube, grid)
        e[d] = pair.energy_phi.total + pair.energy_phi_t.total
    assert e[0.5] / e[0.25] == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("family,params", [
    ("skew", {"delta": 0.5}),
    ("checker", {"r": 1 / 8, "delta": 0.5}),
    ("osc", {"omega": 8.0, "delta": 0.3}),
])
def test_hodge_residual_and_energy(family, params):
    grid, cube = setup()
    c = make_coefficients(family, params)
    pair = solve_hodge(c, cube, grid)
    assert pair.residual_phi < 1e-8
    assert pair.residual_phi_t < 1e-8
    assert abs(pair.means[0]) < 1e-10 and abs(pair.means[1]) < 1e-10
    assert pair.c_energy > 0  # nonzero off-diagonal data
    # a priori: energy controlled by the data mass over the 16x window
    assert pair.c_energy < 1e4


def test_weak_form_residual_battery():
    grid, cube = setup()
    c = make_coefficients("checker", {"r": 1 / 8, "delta": 0.5})
    from parmeasure.coeffs import split_blocks
    from parmeasure.hodge import _divergence_of

    chi = build_chi(cube, grid)
    blocks = split_blocks(c)
    x_links = grid.xs[:-1] + grid.h / 2
    chi_links = chi(x_links[:, None], grid.ts[None, :])
    g = blocks.a_tp(x_links[:, None], grid.ts[None, :])[..., 0] * chi_links
    rhs = _divergence_of(g, grid.h)
    pair = solve_hodge(c, cube, grid)
    assert weak_residual(c, grid, pair.phi_t.values, rhs, sign=+1.0) < 1e-8


@pytest.mark.parametrize("family,params", [
    ("identity", {}),
    ("skew", {"delta": 0.5}),
    ("osc", {"omega": 8.0, "delta": 0.3}),
])
def test_hidden_coercivity(family, params):
    grid = build_grid(h=1 / 8, lmax=1 / 8, xext=1.0, text=0.25)
    c = make_coefficients(family, params)
    assert hidden_coercivity_check(c, grid) >= -1e-10


def test_inf_sup_positive():
    grid = build_grid(h=1 / 8, lmax=1 / 8, xext=1.0, text=0.25)
    c = make_coefficients("skew", {"delta": 0.5})
    beta = inf_sup_check(c, grid, delta=0.5)
    assert beta > 0.05
