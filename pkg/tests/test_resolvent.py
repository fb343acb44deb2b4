import numpy as np
import pytest

from parmeasure.coeffs import make_coefficients
from parmeasure.geometry import build_grid
from parmeasure.resolvent import (
    apply_resolvent,
    d_lambda_resolvent,
    kernel_gaussian_probe,
    resolvent_chain,
    stack_lambdas,
    tangential_faces,
    theta_fields,
)


def bgrid(h=1 / 16, xext=2.0, text=1.0):
    return build_grid(h=h, lmax=h, xext=xext, text=text)


@pytest.fixture(scope="module")
def heat_setup():
    g = bgrid()
    c = make_coefficients("identity")
    return g, c, tangential_faces(c, g)


def bump_field(g, xw=0.5, t0=0.4, t1=0.6):
    fx = np.exp(-(g.xs / xw) ** 2)
    ft = np.exp(-(((g.ts - 0.5) / 0.1) ** 2)) * ((g.ts > t0 - 0.25) & (g.ts < t1 + 0.25))
    return fx[:, None] * ft[None, :]


@pytest.mark.parametrize("family,params", [
    ("identity", {}),
    ("skew", {"delta": 0.5}),
    ("checker", {"r": 0.25, "delta": 0.5}),
    ("osc", {"omega": 8.0, "delta": 0.3}),
])
def test_conservation_every_lambda(family, params):
    g = bgrid(text=0.5)
    c = make_coefficients(family, params)
    af = tangential_faces(c, g)
    ones = np.ones((g.nx, g.nt))
    for lam in stack_lambdas(g.h, 1.0, per_decade=8):
        for side in ("forward", "adjoint"):
            w = apply_resolvent(side, lam, 2, ones, g, af)
            assert np.max(np.abs(w - 1.0)) < 1e-8


def test_small_lambda_limit(heat_setup):
    g, c, af = heat_setup
    v = bump_field(g)
    w = apply_resolvent("forward", g.h / 4, 1, v, g, af)
    assert np.max(np.abs(w - v)) <= 1e-2 * np.max(np.abs(v))


def test_resolvent_composition(heat_setup):
    g, c, af = heat_setup
    v = bump_field(g)
    lam = 0.25
    w12 = apply_resolvent("forward", lam, 1, apply_resolvent("forward", lam, 2, v, g, af), g, af)
    w3 = apply_resolvent("forward", lam, 3, v, g, af)
    assert np.max(np.abs(w12 - w3)) < 1e-12 * np.max(np.abs(v))


def test_dlambda_identity_vs_finite_difference(heat_setup):
    g, c, af = heat_setup
    v = bump_field(g)
    lam, m = 0.25, 2
    got = d_lambda_resolvent("forward", lam, m, v, g, af)
    dl = lam * 1e-3
    plus = apply_resolvent("forward", lam + dl, m, v, g, af)
    minus = apply_resolvent("forward", lam - dl, m, v, g, af)
    fd = (plus - minus) / (2 * dl)
    scale = np.max(np.abs(fd))
    assert np.max(np.abs(got - fd)) < 1e-3 * scale


def test_dlambda_of_constant_vanishes(heat_setup):
    g, c, af = heat_setup
    ones = np.ones((g.nx, g.nt))
    out = d_lambda_resolvent("adjoint", 0.5, 2, ones, g, af)
    assert np.max(np.abs(out)) < 1e-8


def test_dlambda_linear(heat_setup):
    g, c, af = heat_setup
    rng = np.random.default_rng(0)
    v1 = bump_field(g)
    v2 = bump_field(g, xw=0.3)
    a, b = 1.3, -0.4
    lhs = d_lambda_resolvent("forward", 0.25, 2, a * v1 + b * v2, g, af)
    rhs = (a * d_lambda_resolvent("forward", 0.25, 2, v1, g, af)
           + b * d_lambda_resolvent("forward", 0.25, 2, v2, g, af))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_theta_shrinks_with_lambda(heat_setup):
    g, c, af = heat_setup
    phi = bump_field(g)
    norms = []
    for lam in (0.5, 0.25, 0.125, 0.0625):
        th, _ = theta_fields(lam, phi, phi, g, af)
        norms.append(np.linalg.norm(th))
    assert norms == sorted(norms, reverse=True)
    th_const, _ = theta_fields(0.25, np.ones_like(phi), np.ones_like(phi), g, af)
    assert np.max(np.abs(th_const)) < 1e-8


def test_theta_fundamental_theorem(heat_setup):
    # theta_lam - theta_mu = integral over (mu, lam) of dP* dsigma
    g, c, af = heat_setup
    phi = bump_field(g)
    lam_hi, lam_lo = 0.5, 0.125
    sigmas = np.geomspace(lam_lo, lam_hi, 129)
    vals = [d_lambda_resolvent("adjoint", s, 2, phi, g, af) for s in sigmas]
    quad = np.zeros_like(phi)
    for i in range(len(sigmas) - 1):
        quad += 0.5 * (vals[i] + vals[i + 1]) * (sigmas[i + 1] - sigmas[i])
    th_hi, _ = theta_fields(lam_hi, phi, phi, g, af)
    th_lo, _ = theta_fields(lam_lo, phi, phi, g, af)
    diff = th_hi - th_lo
    assert np.max(np.abs(-quad - diff)) < 1e-3 * max(np.max(np.abs(diff)), 1e-12)


def test_adjoint_consistency(heat_setup):
    g, c, af = heat_setup
    v = bump_field(g)
    rng = np.random.default_rng(1)
    w = bump_field(g, xw=0.4) * rng.random()
    lam = 0.125
    lhs = np.sum(apply_resolvent("forward", lam, 2, v, g, af) * w)
    rhs = np.sum(v * apply_resolvent("adjoint", lam, 2, w, g, af))
    assert abs(lhs - rhs) < 1e-9 * abs(lhs)


def test_kernel_probe_heat_rate():
    g = build_grid(h=1 / 32, lmax=1 / 32, xext=1.0, text=0.25)
    c = make_coefficients("identity")
    reports = kernel_gaussian_probe(c, g, lam=1 / 8, m=1, sources=[(0.0, 0.0625)])
    rep = reports[0]
    assert rep["causality_mass"] <= 1e-8
    assert 0.15 <= rep["c"] <= 0.25


def test_kernel_probe_checker_envelope():
    g = build_grid(h=1 / 32, lmax=1 / 32, xext=1.0, text=0.25)
    c = make_coefficients("checker", {"r": 0.25, "delta": 0.5})
    reports = kernel_gaussian_probe(c, g, lam=1 / 8, m=1, sources=[(0.0, 0.0625), (0.25, 0.125)])
    for rep in reports:
        assert rep["causality_mass"] <= 1e-8
        assert rep["c"] > 0  # gaussian-type decay with some rate
        assert rep["C"] > 0
