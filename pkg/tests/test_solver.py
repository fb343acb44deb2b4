import numpy as np
import pytest

from parmeasure.coeffs import make_coefficients
from parmeasure.geometry import build_grid, whitney_decomposition
from parmeasure.heatref import boundary_kernel, gaussian_boundary_solution
from parmeasure.solver import (
    ADIStepper,
    ImplicitStepper,
    SpectralStepper,
    caccioppoli_check,
    gradient_field,
    solve_adjoint_row,
    solve_forward,
)


def small_grid():
    return build_grid(h=1 / 8, lmax=0.5, xext=1.0, text=0.25)


@pytest.mark.parametrize("family,params,kind", [
    ("identity", {}, "implicit"),
    ("skew", {"delta": 0.5}, "implicit"),
    ("skew", {"delta": 0.5}, "adi"),
    ("checker", {"r": 0.25, "delta": 0.5}, "implicit"),
    ("osc", {"omega": 8.0, "delta": 0.3}, "adi"),
])
def test_constants_solve_exactly(family, params, kind):
    g = small_grid()
    c = make_coefficients(family, params)
    f = np.ones((g.nx, g.nt))
    u = solve_forward(c, f, g, side_value=1.0, top_value=1.0, initial_value=1.0, stepper=kind)
    assert np.max(np.abs(u.values - 1.0)) < 1e-12


def test_spectral_matches_implicit_exactly():
    g = small_grid()
    c = make_coefficients("identity")
    rng = np.random.default_rng(0)
    f = rng.random((g.nx, g.nt))
    u_imp = solve_forward(c, f, g, stepper="implicit")
    u_spec = solve_forward(c, f, g, stepper="spectral")
    assert np.max(np.abs(u_imp.values - u_spec.values)) < 1e-10


def test_adi_consistent_with_implicit():
    # the splitting transient lives in the first steps after the data
    # switches on; past it the two schemes agree to splitting accuracy
    g = build_grid(h=1 / 16, lmax=0.5, xext=1.0, text=0.25)
    c = make_coefficients("skew", {"delta": 0.5})
    rng = np.random.default_rng(1)
    f = np.tile(rng.random(g.nx)[:, None], (1, g.nt))
    u_imp = solve_forward(c, f, g, stepper="implicit")
    u_adi = solve_forward(c, f, g, stepper="adi")
    scale = np.max(np.abs(u_imp.values))
    late = slice(g.nt // 2, None)
    assert np.max(np.abs(u_imp.values[:, :, late] - u_adi.values[:, :, late])) < 1e-3 * scale


def test_max_principle_heat_case():
    g = small_grid()
    c = make_coefficients("identity")
    rng = np.random.default_rng(2)
    f = rng.random((g.nx, g.nt))
    u = solve_forward(c, f, g, stepper="implicit")
    assert u.mp_viol == 0.0
    assert np.max(u.values) <= 1.0 + 1e-12
    assert np.min(u.values) >= -1e-12


def test_comparison_principle_heat_case():
    g = small_grid()
    c = make_coefficients("identity")
    rng = np.random.default_rng(3)
    f1 = rng.random((g.nx, g.nt))
    f2 = f1 + rng.random((g.nx, g.nt))
    u1 = solve_forward(c, f1, g, stepper="implicit")
    u2 = solve_forward(c, f2, g, stepper="implicit")
    assert np.all(u1.values <= u2.values + 1e-12)


def test_heat_reflection_oracle():
    # A = I with a Gaussian bump on the boundary, against the closed-form
    # half-plane solution (quadrature to 1e-9); the box is tall and wide
    # enough that truncation is negligible at the sampled nodes
    g = build_grid(h=1 / 32, lmax=1.5, xext=1.5, text=0.125)
    c = make_coefficients("identity")
    sigma = 0.25
    f = np.exp(-(g.xs**2) / (2 * sigma**2))[:, None] * np.ones((1, g.nt))
    u = solve_forward(c, f, g, stepper="spectral")
    rng = np.random.default_rng(4)
    errs, scale = [], 0.0
    for _ in range(40):
        i = rng.integers(3, 17)  # lambda in [4h, 0.53]
        j = rng.integers(24, g.nx - 24)
        m = rng.integers(g.nt // 2, g.nt)
        want = gaussian_boundary_solution(g.lam[i], g.xs[j], g.ts[m], sigma=sigma)
        errs.append(abs(u.values[i, j, m] - want))
        scale = max(scale, abs(want))
    assert max(errs) < 1e-2 * scale


@pytest.mark.parametrize("family,params,kind", [
    ("identity", {}, "implicit"),
    ("identity", {}, "spectral"),
    ("skew", {"delta": 0.5}, "implicit"),
    ("skew", {"delta": 0.5}, "adi"),
    ("checker", {"r": 0.25, "delta": 0.5}, "implicit"),
    ("osc", {"omega": 8.0, "delta": 0.3}, "adi"),
])
def test_transpose_duality(family, params, kind):
    g = small_grid()
    c = make_coefficients(family, params)
    pole = (0.5, 0.0, 0.1875)
    rows = solve_adjoint_row(c, pole, g, stepper=kind)
    cell = g.h * g.k
    rng = np.random.default_rng(5)
    for _ in range(20):
        f = rng.standard_normal((g.nx, g.nt))
        u = solve_forward(c, f, g, stepper=kind)
        direct = u.values[g.lam_index(pole[0]), g.x_index(pole[1]), g.t_index(pole[2])]
        via_row = np.sum(rows * f) * cell
        assert abs(via_row - direct) <= 1e-8 * np.max(np.abs(f))


def test_adjoint_row_nonnegative_heat():
    g = small_grid()
    c = make_coefficients("identity")
    rows = solve_adjoint_row(c, (0.5, 0.0, 0.1875), g, stepper="implicit")
    assert rows.min() >= 0.0


def test_adjoint_row_matches_reflection_kernel():
    # a tall box so the top face barely perturbs the kernel on the window,
    # with the pole high enough (16h) to resolve the first-passage spike
    g = build_grid(h=1 / 32, lmax=2.25, xext=2.0, text=1.0)
    c = make_coefficients("identity")
    pole = (0.5, 0.0, 1.0)
    rows = solve_adjoint_row(c, pole, g, stepper="spectral")
    got = rows[1:-1, 1:]
    want = boundary_kernel(pole[0], pole[1], pole[2], g.xs[1:-1, None], g.ts[None, 1:])
    num = np.sum(np.abs(got - want))
    den = np.sum(np.abs(want))
    assert num / den < 0.05


def test_gradient_field_trivials():
    g = small_grid()
    c = make_coefficients("identity")
    f = np.zeros((g.nx, g.nt))
    u = solve_forward(c, f, g, stepper="implicit")
    # overwrite with synthetic fields
    u.values = np.broadcast_to(g.lam[:, None, None], u.values.shape).copy()
    u.boundary = np.zeros((g.nx, g.nt))
    dlam, dx = gradient_field(u)
    assert np.allclose(dlam[:-1], 1.0) and np.allclose(dx, 0.0)
    u.values = np.broadcast_to(g.xs[None, :, None], u.values.shape).copy()
    u.boundary = np.broadcast_to(g.xs[:, None], (g.nx, g.nt)).copy()
    dlam, dx = gradient_field(u)
    assert np.allclose(dlam, 0.0) and np.allclose(dx[:, 1:-1], 1.0)
    u.values = np.broadcast_to((g.lam**2)[:, None, None], u.values.shape).copy()
    u.boundary = np.zeros((g.nx, g.nt))
    dlam, dx = gradient_field(u)
    assert np.allclose(dlam[:-1], 2 * g.lam[:-1, None, None])


def test_caccioppoli_constant_ratio_zero():
    g = build_grid(h=1 / 32, lmax=1.0, xext=0.5, text=0.25)
    c = make_coefficients("identity")
    f = np.ones((g.nx, g.nt))
    u = solve_forward(c, f, g, side_value=1.0, top_value=1.0, initial_value=1.0,
                      stepper="implicit")
    cubes = [w for w in whitney_decomposition(g)
             if w.lam_hi - w.lam_lo >= 4 and w.x_hi - w.x_lo >= 4 and w.t_hi - w.t_lo >= 16]
    ratios = [r for r in caccioppoli_check(u, cubes) if r is not None]
    assert ratios and max(ratios) < 1e-20


def test_caccioppoli_bounded_for_measure_data():
    g = build_grid(h=1 / 32, lmax=1.0, xext=0.5, text=0.25)
    c = make_coefficients("identity")
    f = (g.xs[:, None] > 0).astype(float) * np.ones((1, g.nt))
    u = solve_forward(c, f, g, stepper="implicit")
    cubes = [w for w in whitney_decomposition(g)
             if w.lam_hi - w.lam_lo >= 4 and w.x_hi - w.x_lo >= 4 and w.t_hi - w.t_lo >= 16]
    ratios = [r for r in caccioppoli_check(u, cubes, max_cubes=400) if r is not None]
    assert ratios and max(ratios) <= 50.0


def test_streaming_matches_stored():
    g = small_grid()
    c = make_coefficients("skew", {"delta": 0.5})
    rng = np.random.default_rng(6)
    f = rng.random((g.nx, g.nt))
    u = solve_forward(c, f, g, stepper="implicit")
    seen = {}

    def on_step(m, t, u_prev, u_curr, f_row):
        seen[m] = u_curr.copy()

    solve_forward(c, f, g, stepper="implicit", store=False, on_step=on_step)
    assert np.allclose(seen[g.nt - 1], u.values[:, :, -1])
    assert np.allclose(seen[5], u.values[:, :, 5])


def test_residual_probe_small():
    g = small_grid()
    c = make_coefficients("skew", {"delta": 0.5})
    rng = np.random.default_rng(7)
    f = rng.random((g.nx, g.nt))
    u = solve_forward(c, f, g, stepper="implicit")
    assert u.max_residual < 1e-10
