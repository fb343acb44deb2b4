import numpy as np
import pytest

from parmeasure.coeffs import (
    CoefficientField,
    NonEllipticError,
    make_coefficients,
    split_blocks,
    verify_ellipticity,
)


def brute_force_constants(field, n_pairs=10_000, seed=1):
    """Independent oracle: min Rayleigh quotient / max bilinear magnitude
    over randomly sampled unit pairs at randomly sampled points."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-2, 2, size=64)
    ts = rng.uniform(0, 4, size=64)
    A = field.entries(xs, ts)
    kmin, cmax = np.inf, 0.0
    for _ in range(n_pairs // 64):
        xi = rng.standard_normal(field.n + 1)
        xi /= np.linalg.norm(xi)
        zeta = rng.standard_normal(field.n + 1)
        zeta /= np.linalg.norm(zeta)
        Axi = A @ xi
        kmin = min(kmin, float(np.min(Axi @ xi)))
        cmax = max(cmax, float(np.max(np.abs(Axi @ zeta))))
    return kmin, cmax


def test_identity_constants():
    f = make_coefficients("identity")
    kh, ch = verify_ellipticity(f)
    assert kh == pytest.approx(1.0, abs=1e-12)
    assert ch == pytest.approx(1.0, abs=1e-12)
    assert f.kappa == 1.0 and f.bigC == 1.0


def test_skew_kappa_is_one():
    # symmetric part of [[1, d], [-d, 1]] is the identity
    f = make_coefficients("skew", {"delta": 0.5})
    kmin, _ = brute_force_constants(f)
    assert kmin == pytest.approx(1.0, abs=1e-12)
    kh, _ = verify_ellipticity(f)
    assert kh == pytest.approx(1.0, abs=1e-12)


def test_skew_unit_delta_operator_norm():
    f = make_coefficients("skew", {"delta": 1.0})
    kh, ch = verify_ellipticity(f, n_directions=10_000)
    assert kh == pytest.approx(1.0, abs=1e-12)
    # |A xi| = sqrt(2) for every unit xi when A = [[1,1],[-1,1]]
    assert ch == pytest.approx(np.sqrt(2), rel=1e-9)
    _, cbrute = brute_force_constants(f)
    assert cbrute <= ch + 1e-9


def test_nonelliptic_constant_matrix():
    with pytest.raises(NonEllipticError) as err:
        make_coefficients("const", {"matrix": [[1.0, 2.0], [0.0, 1.0]]})
    xi = err.value.xi
    assert xi is not None
    # Rayleigh quotient (xi0 + xi1)^2 vanishes along xi ~ (1, -1)
    assert abs(xi[0] + xi[1]) < 1e-9


def test_osc_kappa_bound():
    f = make_coefficients("osc", {"omega": 8.0, "delta": 0.3})
    kh, _ = verify_ellipticity(f)
    assert kh >= 0.7 - 1e-9
    kmin, _ = brute_force_constants(f)
    assert kmin >= 0.7 - 1e-9


def test_osc_too_large_delta_rejected():
    with pytest.raises(NonEllipticError):
        make_coefficients("osc", {"omega": 2.0, "delta": 1.0})


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown"):
        make_coefficients("mystery")


def test_unknown_parameter_rejected():
    with pytest.raises(ValueError):
        make_coefficients("skew", {"delta": 0.5, "typo": 1})


def test_split_blocks_identity():
    b = split_blocks(make_coefficients("identity"))
    assert b.a_pp(0.3, 0.7) == 1.0
    assert np.all(b.a_pt(0.3, 0.7) == 0.0)
    assert np.all(b.a_tp(0.3, 0.7) == 0.0)
    assert np.all(b.a_tt(0.3, 0.7) == 1.0)


def test_split_blocks_skew():
    b = split_blocks(make_coefficients("skew", {"delta": 0.5}))
    assert np.all(b.a_pt(0.1, 0.2) == 0.5)
    assert np.all(b.a_tp(0.1, 0.2) == -0.5)


@pytest.mark.parametrize("name,params", [
    ("identity", {}),
    ("skew", {"delta": 0.5}),
    ("checker", {"r": 0.25, "delta": 0.5}),
    ("osc", {"omega": 8.0, "delta": 0.3}),
])
def test_split_roundtrip_bitwise(name, params):
    f = make_coefficients(name, params)
    b = split_blocks(f)
    rng = np.random.default_rng(2)
    xs = rng.uniform(-2, 2, size=50)
    ts = rng.uniform(0, 4, size=50)
    assert np.array_equal(b.reassemble(xs, ts), f.entries(xs, ts))


@pytest.mark.parametrize("name,params", [
    ("skew", {"delta": 0.5}),
    ("checker", {"r": 0.25, "delta": 0.5}),
    ("osc", {"omega": 8.0, "delta": 0.3}),
])
def test_rayleigh_never_below_kappa_hat(name, params):
    f = make_coefficients(name, params)
    kh, _ = verify_ellipticity(f)
    assert kh > 0
    rng = np.random.default_rng(3)
    xs = rng.uniform(-3, 3, size=200)
    ts = rng.uniform(-1, 5, size=200)
    A = f.entries(xs, ts)
    ang = rng.uniform(0, np.pi, size=128)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rq = np.einsum("pij,dj,di->pd", A, dirs, dirs)
    assert rq.min() >= kh - 1e-9


def test_checker_time_key_changes_per_cell():
    f = make_coefficients("checker", {"r": 0.5, "delta": 0.5})
    assert f.time_key(0.1) == f.time_key(0.2)
    assert f.time_key(0.1) != f.time_key(0.3)  # crosses t = r^2 = 0.25


def test_declared_constants_match_verification():
    for name, params in [("identity", {}), ("skew", {"delta": 0.5}),
                         ("checker", {"r": 0.25, "delta": 0.5}),
                         ("osc", {"omega": 8.0, "delta": 0.3})]:
        f = make_coefficients(name, params)
        kh, ch = verify_ellipticity(f, n_directions=4096)
        assert kh >= f.kappa - 1e-9
        assert ch <= f.bigC + 1e-9
