"""Coefficient matrices A(x,t) for the half-space operator.

The matrix acts on (lambda, x) gradients, is independent of lambda, and is
only assumed real, bounded, measurable and uniformly elliptic:

    kappa |xi|^2 <= xi . A(x,t) xi,   |A(x,t) xi . zeta| <= C |xi| |zeta|.

Built-in families: identity, skew, checker, osc, const.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "CoefficientField",
    "BlockSplit",
    "NonEllipticError",
    "make_coefficients",
    "verify_ellipticity",
    "split_blocks",
    "FAMILIES",
]

EXACT_TOL = 1e-12


class NonEllipticError(ValueError):
    """Raised when a coefficient matrix fails the lower ellipticity bound.

    Carries the witness point and direction where xi . A xi <= 0.
    """

    def __init__(self, message, x=None, t=None, xi=None, value=None):
        super().__init__(message)
        self.x = x
        self.t = t
        self.xi = xi
        self.value = value


@dataclass(frozen=True)
class CoefficientField:
    """A matrix map (x, t) -> (n+1) x (n+1), constant in lambda.

    ``entries`` accepts broadcastable arrays and returns an array of shape
    ``broadcast(x, t).shape + (n+1, n+1)``.  ``time_key`` maps a time to a
    hashable cache key; steppers refactorize only when the key changes
    (``None`` means the matrix varies continuously in t).
    """

    name: str
    params: dict
    n: int
    kappa: float
    bigC: float
    entries: Callable[[np.ndarray, np.ndarray], np.ndarray]
    time_key: Optional[Callable[[float], object]] = None
    constant_diagonal: bool = False  # A_00, A_tt constant and off-diagonal constant-or-zero interiorwise
    time_independent: bool = False

    def __call__(self, x, t):
        return self.entries(np.asarray(x, dtype=float), np.asarray(t, dtype=float))

    def describe(self):
        ps = ", ".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({ps})" if ps else self.name


@dataclass(frozen=True)
class BlockSplit:
    """The four blocks of A in the (normal, tangential) splitting.

    a_pp is the scalar A_perp,perp; a_pt the 1 x n row A_perp,par; a_tp the
    n x 1 column A_par,perp; a_tt the n x n tangential block.  Each is a
    callable with the same broadcasting contract as the parent field.
    """

    parent: CoefficientField
    a_pp: Callable
    a_pt: Callable
    a_tp: Callable
    a_tt: Callable

    def reassemble(self, x, t):
        """Rebuild the full matrix from the blocks (bitwise round trip)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        n = self.parent.n
        shape = np.broadcast(x, t).shape
        out = np.empty(shape + (n + 1, n + 1))
        out[..., 0, 0] = self.a_pp(x, t)
        out[..., 0, 1:] = self.a_pt(x, t)
        out[..., 1:, 0] = self.a_tp(x, t)
        out[..., 1:, 1:] = self.a_tt(x, t)
        return out


def _identity_entries(n):
    eye = np.eye(n + 1)

    def entries(x, t):
        shape = np.broadcast(np.asarray(x), np.asarray(t)).shape
        return np.broadcast_to(eye, shape + (n + 1, n + 1)).copy()

    return entries


def _skew_entries(delta):
    base = np.array([[1.0, delta], [-delta, 1.0]])

    def entries(x, t):
        shape = np.broadcast(np.asarray(x), np.asarray(t)).shape
        return np.broadcast_to(base, shape + (2, 2)).copy()

    return entries


def _checker_entries(r, delta):
    def entries(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        sign = np.where((np.floor(x / r) + np.floor(t / r**2)) % 2 == 0, 1.0, -1.0)
        shape = np.broadcast(x, t).shape
        out = np.zeros(shape + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 0, 1] = delta * sign
        out[..., 1, 0] = -delta * sign
        return out

    return entries


def _osc_entries(omega, delta):
    def entries(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        m = delta * np.sin(omega * x) * np.sin(omega * t)
        shape = np.broadcast(x, t).shape
        out = np.zeros(shape + (2, 2))
        out[..., 0, 0] = 1.0 + m
        out[..., 1, 1] = 1.0 + m
        out[..., 0, 1] = delta
        out[..., 1, 0] = -delta
        return out

    return entries


def _const_entries(matrix):
    base = np.asarray(matrix, dtype=float)

    def entries(x, t):
        shape = np.broadcast(np.asarray(x), np.asarray(t)).shape
        return np.broadcast_to(base, shape + base.shape).copy()

    return entries


def make_coefficients(name, params=None, n=1):
    """Instantiate a built-in coefficient family.

    Parameters
    ----------
    name : str
        One of ``identity``, ``skew`` (delta), ``checker`` (r, delta),
        ``osc`` (omega, delta), ``const`` (matrix).
    params : dict, optional
        Family parameters; unknown keys are rejected.
    n : int
        Tangential dimension.  Only ``identity`` and ``const`` accept n != 1.

    Returns
    -------
    CoefficientField
        With declared ellipticity constants consistent with a sampled
        verification.

    Raises
    ------
    ValueError
        Unknown family or malformed parameters.
    NonEllipticError
        Parameters produce a matrix violating the lower bound.
    """
    params = dict(params or {})

    def expect(allowed):
        extra = set(params) - set(allowed)
        if extra:
            raise ValueError(f"family {name!r} does not accept parameters {sorted(extra)}")

    if name == "identity":
        expect(())
        f = CoefficientField(name, {}, n, 1.0, 1.0, _identity_entries(n),
                             time_key=lambda t: 0, constant_diagonal=True, time_independent=True)
    elif name == "skew":
        expect(("delta",))
        if n != 1:
            raise ValueError("skew family is defined for n = 1")
        delta = float(params.get("delta", 0.5))
        f = CoefficientField(name, {"delta": delta}, 1, 1.0, float(np.hypot(1.0, delta)),
                             _skew_entries(delta), time_key=lambda t: 0,
                             constant_diagonal=True, time_independent=True)
    elif name == "checker":
        expect(("r", "delta"))
        if n != 1:
            raise ValueError("checker family is defined for n = 1")
        r = float(params.get("r", 0.25))
        delta = float(params.get("delta", 0.5))
        if r <= 0:
            raise ValueError("checker cell scale r must be positive")
        rr = r
        f = CoefficientField(name, {"r": r, "delta": delta}, 1, 1.0, float(np.hypot(1.0, delta)),
                             _checker_entries(r, delta),
                             time_key=lambda t, _rr=rr: int(np.floor(t / _rr**2)),
                             constant_diagonal=True)
    elif name == "osc":
        expect(("omega", "delta"))
        if n != 1:
            raise ValueError("osc family is defined for n = 1")
        omega = float(params.get("omega", 8.0))
        delta = float(params.get("delta", 0.3))
        if delta >= 1.0:
            raise NonEllipticError(
                f"osc with delta = {delta} is not elliptic (diagonal 1 - delta <= 0)",
                xi=np.array([1.0, 0.0]), value=1.0 - delta)
        f = CoefficientField(name, {"omega": omega, "delta": delta}, 1,
                             1.0 - delta, float(np.hypot(1.0 + delta, delta)),
                             _osc_entries(omega, delta))
    elif name == "const":
        expect(("matrix",))
        if "matrix" not in params:
            raise ValueError("const family requires a 'matrix' parameter")
        mat = np.asarray(params["matrix"], dtype=float)
        if mat.shape != (n + 1, n + 1):
            raise ValueError(f"const matrix must have shape {(n + 1, n + 1)}, got {mat.shape}")
        sym = 0.5 * (mat + mat.T)
        lam = np.linalg.eigvalsh(sym)
        if lam[0] <= 0:
            vec = np.linalg.eigh(sym)[1][:, 0]
            raise NonEllipticError(
                f"constant matrix is not elliptic: xi.A xi = {lam[0]:.3g} along xi = {vec}",
                xi=vec, value=float(lam[0]))
        f = CoefficientField(name, {"matrix": mat}, n, float(lam[0]),
                             float(np.linalg.norm(mat, 2)), _const_entries(mat),
                             time_key=lambda t: 0, time_independent=True)
    else:
        raise ValueError(f"unknown coefficient family {name!r}")

    # cheap sampled sanity check; closed-form constants above are exact
    kh, _ = verify_ellipticity(f, sampler=_default_sampler(), n_directions=512)
    if kh <= 0:
        raise NonEllipticError(f"family {name!r} with {params} failed sampled ellipticity")
    return f


def _default_sampler():
    xs = np.linspace(-2.0, 2.0, 41)
    ts = np.linspace(0.0, 4.0, 41)
    return xs[:, None], ts[None, :]


def _unit_directions(dim, count, rng=None):
    if dim == 2:
        ang = np.linspace(0.0, np.pi, count, endpoint=False)  # xi and -xi give equal forms
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = rng or np.random.default_rng(0)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def verify_ellipticity(field, sampler=None, n_directions=10_000):
    """Sampled ellipticity constants of a coefficient field.

    Scans Rayleigh quotients xi . A(x,t) xi over unit directions at every
    sample point (min -> kappa_hat) and the bilinear magnitudes
    sup_zeta |A xi . zeta| = |A xi| (max -> bigC_hat).

    Parameters
    ----------
    sampler : Grid, tuple of arrays, or None
        Sample points.  A Grid contributes its boundary nodes (subsampled to
        at most ~4096 points); a tuple is broadcast as (xs, ts).

    Returns
    -------
    (kappa_hat, bigC_hat) : tuple of float

    Raises
    ------
    NonEllipticError
        If the sampled minimum is <= 0; carries the witness (x, t, xi).
    """
    xs, ts = _sampler_points(sampler)
    A = field.entries(xs, ts)
    A = A.reshape(-1, field.n + 1, field.n + 1)
    pts_x = np.broadcast_to(xs, np.broadcast(xs, ts).shape).ravel()
    pts_t = np.broadcast_to(ts, np.broadcast(xs, ts).shape).ravel()

    dirs = _unit_directions(field.n + 1, n_directions)
    kappa_hat = np.inf
    bigC_hat = 0.0
    arg = (None, None, None)
    for chunk in np.array_split(dirs, max(1, len(dirs) // 256)):
        Axi = np.einsum("pij,dj->pdi", A, chunk)
        rq = np.einsum("pdi,di->pd", Axi, chunk)
        norms = np.linalg.norm(Axi, axis=2)
        i, d = np.unravel_index(np.argmin(rq), rq.shape)
        if rq[i, d] < kappa_hat:
            kappa_hat = float(rq[i, d])
            arg = (float(pts_x[i]), float(pts_t[i]), chunk[d].copy())
        bigC_hat = max(bigC_hat, float(norms.max()))
    if kappa_hat <= 0:
        x, t, xi = arg
        raise NonEllipticError(
            f"non-elliptic sample: xi.A xi = {kappa_hat:.3g} at (x,t) = ({x:.3g},{t:.3g}), xi = {xi}",
            x=x, t=t, xi=xi, value=kappa_hat)
    return kappa_hat, bigC_hat


def _sampler_points(sampler):
    if sampler is None:
        return _default_sampler()
    if isinstance(sampler, tuple):
        xs, ts = sampler
        return np.asarray(xs, dtype=float), np.asarray(ts, dtype=float)
    # duck-typed Grid
    xs = np.asarray(sampler.xs, dtype=float)
    ts = np.asarray(sampler.ts, dtype=float)
    sx = max(1, len(xs) // 64)
    st = max(1, len(ts) // 64)
    return xs[::sx][:, None], ts[::st][None, :]


def split_blocks(field):
    """Split A into its normal/tangential blocks; reassembly is exact."""
    n = field.n

    def a_pp(x, t):
        return field.entries(x, t)[..., 0, 0]

    def a_pt(x, t):
        return field.entries(x, t)[..., 0, 1:]

    def a_tp(x, t):
        return field.entries(x, t)[..., 1:, 0]

    def a_tt(x, t):
        return field.entries(x, t)[..., 1:, 1:]

    return BlockSplit(field, a_pp, a_pt, a_tp, a_tt)


FAMILIES = ("identity", "skew", "checker", "osc", "const")
