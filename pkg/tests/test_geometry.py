import numpy as np
import pytest

from parmeasure.geometry import (
    ParabolicCube,
    build_grid,
    corkscrew_point,
    in_cone,
    overlap_multiplicity,
    parabolic_distance,
    parabolic_norm,
    whitney_decomposition,
)


def test_build_grid_counts():
    g = build_grid(h=1 / 64, lmax=1.0, xext=2.0, text=4.0)
    assert g.nlam == 64
    assert g.nx == 257
    assert g.nt == 16385
    assert g.lam[0] == pytest.approx(1 / 64)
    assert g.lam[-1] == pytest.approx(1.0)


def test_parabolic_scaling():
    g = build_grid(h=1 / 8, lmax=0.5, xext=1.0, text=1.0)
    assert g.k == pytest.approx(1 / 64)


def test_non_commensurate_extent():
    with pytest.raises(ValueError):
        build_grid(h=1 / 8, lmax=0.3, xext=1.0, text=1.0)
    with pytest.raises(ValueError):
        build_grid(h=1 / 8, lmax=0.5, xext=1.0, text=0.01)


def test_corkscrew_examples():
    assert corkscrew_point(ParabolicCube(0.0, 0.0, 1.0)) == (4.0, 0.0, 16.0)
    assert corkscrew_point(ParabolicCube(0.0, 0.0, 0.5)) == (2.0, 0.0, 4.0)
    assert corkscrew_point(ParabolicCube(0.0, 0.0, 1.0), backward=True) == (4.0, 0.0, -16.0)


def test_corkscrew_translation_equivariance():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b, r = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 2)
        p0 = corkscrew_point(ParabolicCube(0.0, 0.0, r))
        p1 = corkscrew_point(ParabolicCube(a, b, r))
        assert p1[0] == p0[0]
        assert p1[1] == pytest.approx(p0[1] + a)
        assert p1[2] == pytest.approx(p0[2] + b)


def test_parabolic_norm_dilation():
    rng = np.random.default_rng(1)
    x, t = rng.standard_normal(100), rng.standard_normal(100)
    for r in (0.5, 2.0, 3.7):
        assert np.allclose(parabolic_norm(r * x, r**2 * t), r * parabolic_norm(x, t))


def test_cube_volume_dilation():
    c = ParabolicCube(0.2, 0.3, 0.25)
    for f in (2, 4, 16):
        assert c.dilate(f).volume == pytest.approx(f**3 * c.volume)


def test_whitney_band_for_half():
    g = build_grid(h=1 / 16, lmax=1.0, xext=0.5, text=0.25)
    cubes = whitney_decomposition(g)
    i = g.lam_index(0.5)
    owners = [w for w in cubes if w.lam_lo <= i < w.lam_hi]
    assert owners
    for w in owners:
        assert 1 / 16 <= w.ell <= 1 / 8
        # distance-to-boundary ratio stays within one dyadic generation
        assert 4 * w.ell <= g.lam[w.lam_lo] < 8 * w.ell + 1e-12


def test_whitney_partition_covers_once():
    g = build_grid(h=1 / 8, lmax=0.5, xext=0.25, text=1 / 16)
    cubes = whitney_decomposition(g)
    count = np.zeros((g.nlam, g.nx, g.nt), dtype=int)
    for w in cubes:
        count[w.lam_lo:w.lam_hi, w.x_lo:w.x_hi, w.t_lo:w.t_hi] += 1
    assert np.all(count == 1)


def test_whitney_double_overlap_bounded():
    g = build_grid(h=1 / 8, lmax=0.5, xext=0.25, text=1 / 16)
    cubes = whitney_decomposition(g)
    assert overlap_multiplicity(g, cubes) <= 2 ** (1 + 3)


def test_parabolic_distance_examples():
    xs, ts = np.array([0.0]), np.array([0.0])
    assert parabolic_distance((0.0, 0.0), xs, ts) == 0.0
    assert parabolic_distance((1.0, 0.0), xs, ts) == pytest.approx(1.0)
    assert parabolic_distance((0.0, 4.0), xs, ts) == pytest.approx(2.0)


def test_parabolic_distance_empty_set():
    with pytest.raises(ValueError):
        parabolic_distance((0.0, 0.0), np.array([]), np.array([]))


def test_cone_nesting():
    rng = np.random.default_rng(2)
    lam = rng.uniform(0.01, 1, 200)
    x = rng.uniform(-1, 1, 200)
    t = rng.uniform(-1, 1, 200)
    inner = in_cone(0.5, (0.0, 0.0), lam, x, t)
    outer = in_cone(1.5, (0.0, 0.0), lam, x, t)
    assert np.all(outer[inner])


def test_cube_masks_and_clipping():
    g = build_grid(h=1 / 16, lmax=0.5, xext=1.0, text=1.0)
    c = ParabolicCube(0.0, 0.5, 0.25)
    mx, mt = c.node_masks(g)
    assert abs(g.xs[mx].min() + 0.25) < 1e-12 and abs(g.xs[mx].max() - 0.25) < 1e-12
    assert not c.clipped_by(g)
    assert ParabolicCube(0.95, 0.5, 0.25).clipped_by(g)
    assert ParabolicCube(0.0, 0.01, 0.25).clipped_by(g)
