"""Good boundary set, its calibration, and the sawtooth cutoff machinery.

The good set F collects the cells of the 16-fold dilate of a base cube
where five maximal-type functionals of the energy solutions stay below a
threshold kappa0: the parabolic maximal function of the squared gradients
(against kappa0^2), the iterated maximal function of the half-derivative
parts, the maximal difference quotient, and the pointwise/integrated
non-tangential maximal functions of the resolvent family.  kappa0 is
calibrated by bisection to push the complement density below a target
(1/1000 by default).

Above F the sawtooth cutoff Psi is a lambda profile (two smooth threshold
ramps pinned at 1/16 and 1/8 of the scaled heights) times a mollified
indicator of the aperture-eta/16 cone region over F intersected with the
base cube; the mollifier is a normalized polynomial bump supported in a
ball of radius 1/2048 of the cone-scaled variables, so the transition band
is far below cell size and Psi is 1 exactly on (F cap Delta) x (2 eps, 2r)
and 0 off the cone neighbourhood.  The E-sets are the bands where Psi can
vary; their d lambda/lambda mass obeys the log(8) 2^(n+2) |Delta| budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numba as nb
import numpy as np

from . import fracalc
from .geometry import ParabolicCube
from .maximal import StackMaxAccumulator, max_diff, maximal_iterated, maximal_parabolic
from .resolvent import ResolventStack, grad_x

__all__ = [
    "CoarseLattice",
    "GoodSetInputs",
    "SetFReport",
    "compute_good_set_inputs",
    "build_F",
    "calibrate_kappa0",
    "distance_to_set",
    "SawtoothCutoff",
    "classify_E",
    "tech_mass",
    "verify_psi_derivatives",
    "verify_theta_bounds",
]

KAPPA_GRID = np.geomspace(1e-2, 1e4, 64)


@dataclass
class CoarseLattice:
    """Evaluation lattice over the 16x window clipped to the grid."""

    ix: np.ndarray  # x node indices
    it: np.ndarray  # t node indices
    xs: np.ndarray
    ts: np.ndarray
    cell_area: float  # dx * dt per lattice cell
    clipped: bool


def coarse_lattice(grid, cube, stride_x=None, stride_t=None, target_cells=20_000):
    """Sub-lattice of boundary nodes covering 16 * cube (grid-clipped)."""
    big = cube.dilate(16.0)
    mx = np.nonzero(np.abs(grid.xs - big.x0) <= big.r + 1e-12)[0]
    mt = np.nonzero(np.abs(grid.ts - big.t0) <= big.r**2 + 1e-12)[0]
    clipped = big.clipped_by(grid)
    if stride_x is None or stride_t is None:
        # balanced strides aiming at ~target_cells lattice cells
        ratio = np.sqrt(len(mx) * len(mt) / target_cells)
        stride_x = max(1, int(round(np.sqrt(ratio * len(mx) / max(len(mt), 1) * ratio) )))
        stride_x = max(1, int(round(len(mx) / max(1, np.sqrt(target_cells * len(mx) / max(len(mt), 1))))))
        stride_t = max(1, int(round(len(mt) / max(1, np.sqrt(target_cells * len(mt) / max(len(mx), 1))))))
    ix = mx[::stride_x]
    it = mt[::stride_t]
    return CoarseLattice(ix=ix, it=it, xs=grid.xs[ix], ts=grid.ts[it],
                         cell_area=stride_x * grid.h * stride_t * grid.k,
                         clipped=clipped)


@dataclass
class GoodSetInputs:
    """The five threshold fields sampled on the coarse lattice."""

    cube: ParabolicCube
    lattice: CoarseLattice
    grad_sq: np.ndarray  # M(|grad phi|^2) + M(|grad phi_t|^2), vs kappa0^2
    halfder: np.ndarray  # MxMt(|Ht Dhalf phi|) + twin, vs kappa0
    maxdiff: np.ndarray  # D phi + D phi_t, vs kappa0
    nt_point: np.ndarray  # N*(dlam P* phi) + N*(dlam P phi_t), vs kappa0
    nt_mean: np.ndarray  # integrated NT of the resolvent gradients, vs kappa0


def compute_good_set_inputs(coeffs, cube, grid, pair, m=2, per_decade=32,
                            lam_max=None, t_decimate=None, rho_cap=None,
                            lattice=None, dd_budget=1024):
    """Evaluate the five good-set fields for a solved tangential pair.

    The heavy maximal reductions stream over a resolvent stack; time
    decimation of the non-tangential accumulators and the window budget of
    the difference-quotient operator are the documented dyadic-slack knobs.
    """
    lat = lattice if lattice is not None else coarse_lattice(grid, cube)
    phi = pair.phi.values
    phi_t = pair.phi_t.values
    sub = np.ix_(lat.ix, lat.it)

    dphi = grad_x(phi, grid.h)
    dphi_t = grad_x(phi_t, grid.h)
    f1 = (maximal_parabolic(dphi**2) + maximal_parabolic(dphi_t**2))[sub]

    hd = np.abs(fracalc.hilbert_t(fracalc.half_derivative_t(pair.phi)).values)
    hd_t = np.abs(fracalc.hilbert_t(fracalc.half_derivative_t(pair.phi_t)).values)
    f2 = (maximal_iterated(hd) + maximal_iterated(hd_t))[sub]

    pts = (np.repeat(lat.ix, len(lat.it)), np.tile(lat.it, len(lat.ix)))
    cap = rho_cap if rho_cap is not None else 32 * cube.r
    f3 = (max_diff(phi, grid.h, grid.k, points=pts, rho_max=cap, max_window_cells=dd_budget)
          + max_diff(phi_t, grid.h, grid.k, points=pts, rho_max=cap,
                     max_window_cells=dd_budget)).reshape(len(lat.ix), len(lat.it))

    lam_max = lam_max if lam_max is not None else 64 * cube.r
    stack = ResolventStack(coeffs, grid, phi, phi_t, m=m, lam_max=lam_max,
                           per_decade=per_decade)
    td = t_decimate if t_decimate is not None else max(1, int(round(0.25 * grid.h / grid.k)))
    acc4a = StackMaxAccumulator(stack.lams, grid.h, grid.k, grid.nx, grid.nt, "sup", td)
    acc4b = StackMaxAccumulator(stack.lams, grid.h, grid.k, grid.nx, grid.nt, "sup", td)
    acc5a = StackMaxAccumulator(stack.lams, grid.h, grid.k, grid.nx, grid.nt, "rms", td)
    acc5b = StackMaxAccumulator(stack.lams, grid.h, grid.k, grid.nx, grid.nt, "rms", td)
    for i, bundle in enumerate(stack.bundles()):
        acc4a.ingest(i, bundle.dlam_p_star())
        acc4b.ingest(i, bundle.dlam_p_fwd())
        acc5a.ingest(i, grad_x(bundle.p_star(), grid.h))
        acc5b.ingest(i, grad_x(bundle.p_fwd(), grid.h))
    tg = [acc4a.t_group(t) for t in lat.it]
    f4 = (acc4a.result() + acc4b.result())[np.ix_(lat.ix, tg)]
    f5 = (acc5a.result() + acc5b.result())[np.ix_(lat.ix, tg)]
    return GoodSetInputs(cube=cube, lattice=lat, grad_sq=f1, halfder=f2,
                         maxdiff=f3, nt_point=f4, nt_mean=f5)


@dataclass
class SetFReport:
    cube: ParabolicCube
    kappa0: float
    lattice: CoarseLattice
    mask: np.ndarray  # True on F
    density: float  # |16 Delta minus F| / |16 Delta|
    exclusions: Dict[str, int]


def build_F(inputs, kappa0):
    """Threshold the five fields; returns the good-set mask and report."""
    crits = {
        "grad_sq": inputs.grad_sq <= kappa0**2,
        "halfder": inputs.halfder <= kappa0,
        "maxdiff": inputs.maxdiff <= kappa0,
        "nt_point": inputs.nt_point <= kappa0,
        "nt_mean": inputs.nt_mean <= kappa0,
    }
    mask = np.ones_like(inputs.grad_sq, dtype=bool)
    exclusions = {}
    for name, ok in crits.items():
        exclusions[name] = int((~ok).sum())
        mask &= ok
    density = 1.0 - mask.mean()
    return SetFReport(cube=inputs.cube, kappa0=float(kappa0), lattice=inputs.lattice,
                      mask=mask, density=float(density), exclusions=exclusions)


def calibrate_kappa0(inputs, target=1e-3, grid_values=KAPPA_GRID):
    """Smallest grid kappa0 whose complement density meets the target.

    Density is non-increasing in kappa0, so a bisection over the log grid
    suffices.  Raises with the floor density if even the largest threshold
    cannot reach the target.
    """
    if not 0 < target < 1:
        raise ValueError("target density must lie in (0, 1)")
    vals = np.asarray(grid_values, dtype=float)
    floor_rep = build_F(inputs, vals[-1])
    if floor_rep.density > target:
        raise ValueError(
            f"density floor {floor_rep.density:.3e} above target {target:.1e}; "
            "refine the lattice or enlarge the threshold grid")
    lo, hi = 0, len(vals) - 1  # density(vals[hi]) <= target
    while lo < hi:
        mid = (lo + hi) // 2
        if build_F(inputs, vals[mid]).density <= target:
            hi = mid
        else:
            lo = mid + 1
    return build_F(inputs, vals[hi])


@nb.njit(cache=True)
def _dist_kernel(qx, qt, sx, st):
    out = np.empty(len(qx))
    for i in range(len(qx)):
        best = np.inf
        for j in range(len(sx)):
            d = abs(qx[i] - sx[j]) + np.sqrt(abs(qt[i] - st[j]))
            if d < best:
                best = d
        out[i] = best
    return out


def distance_to_set(query_xs, query_ts, set_xs, set_ts):
    """Parabolic distance from each query point to a discrete point set."""
    if len(set_xs) == 0:
        return np.full(len(np.atleast_1d(query_xs)), np.inf)
    return _dist_kernel(np.ascontiguousarray(query_xs, dtype=np.float64),
                        np.ascontiguousarray(query_ts, dtype=np.float64),
                        np.ascontiguousarray(set_xs, dtype=np.float64),
                        np.ascontiguousarray(set_ts, dtype=np.float64))


def _threshold_ramp(rho):
    """Smooth profile: 1 for rho <= 1/16, 0 for rho >= 1/8."""
    y = (np.asarray(rho, dtype=float) - 1 / 16) * 16.0
    y = np.clip(y, 0.0, 1.0)
    return 1.0 - y * y * (3.0 - 2.0 * y)


class SawtoothCutoff:
    """The cutoff Psi built over a good-set mask.

    Psi(lam, x, t) = ramp(lam / (32 r)) (1 - ramp(lam / (16 eps))) times a
    mollified indicator of the cone region {dist to F cap Delta < eta lam / 16}.
    The mollifier has sub-cell support, so away from a hair-thin band Psi
    equals the sharp product; inside the band it is averaged by quadrature
    against the polynomial bump (1 - |rho|^2)^4 on the ball of radius
    1/2048 of the cone-scaled offsets.
    """

    def __init__(self, report, eta, eps, grid):
        r = report.cube.r
        if not 0 < eta < 1:
            raise ValueError("aperture eta must lie in (0, 1)")
        if eps >= r / 2:
            raise ValueError(f"eps = {eps} collides with the upper window (needs eps < r/2)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.report = report
        self.eta = float(eta)
        self.eps = float(eps)
        self.r = float(r)
        self.grid = grid
        lat = report.lattice
        fm = report.mask
        inside = report.cube.contains(lat.xs[:, None], lat.ts[None, :])
        sel = fm & inside
        self.fx = np.repeat(lat.xs, len(lat.ts)).reshape(len(lat.xs), len(lat.ts))[sel]
        self.ft = np.tile(lat.ts, (len(lat.xs), 1))[sel]
        # gauss nodes/weights for the mollifier ball (radius 1/2048, scaled)
        gq, gw = np.polynomial.legendre.leggauss(4)
        R = 1.0 / 2048
        pts = []
        wts = []
        for a, wa in zip(gq, gw):
            for b, wb in zip(gq, gw):
                for c, wc in zip(gq, gw):
                    rho2 = a * a + b * b + c * c
                    if rho2 < 1.0:
                        pts.append((a * R, b * R, c * R))
                        wts.append(wa * wb * wc * (1 - rho2) ** 4)
        self._moll_pts = np.array(pts)
        self._moll_wts = np.array(wts) / np.sum(wts)

    def delta_to_fdelta(self, xs, ts):
        """Distance to F cap Delta at arbitrary points (flattened)."""
        return distance_to_set(xs, ts, self.fx, self.ft)

    def profile(self, lam):
        lam = np.asarray(lam, dtype=float)
        return _threshold_ramp(lam / (32 * self.r)) * (1.0 - _threshold_ramp(lam / (16 * self.eps)))

    def cone_indicator(self, lam, delta, xs=None, ts=None):
        """Mollified indicator of the eta/16 cone over F cap Delta.

        ``delta`` holds precomputed distances at the evaluation points;
        points whose margin to the cone boundary exceeds the mollifier
        support are set sharply, the thin remainder is quadratured against
        the bump (using exact re-evaluation of the distance offsets when
        the anchor points are available).
        """
        lam = np.asarray(lam, dtype=float)
        thresh = (self.eta / 16.0) * lam
        margin = lam * (1.0 / 2048) * (1.0 + self.eta + self.eta**2)
        out = np.where(delta < thresh - margin, 1.0, 0.0)
        band = np.abs(delta - thresh) <= margin
        if np.any(band) and len(self.fx):
            idx = np.nonzero(band)
            lam_b = np.broadcast_to(lam, delta.shape)[idx]
            del_b = delta[idx]
            acc = np.zeros(len(lam_b))
            for (dl, dx, dt), w in zip(self._moll_pts, self._moll_wts):
                lam_off = lam_b * (1.0 - dl)
                # the distance moves at most by the parabolic size of the offset
                d_off = del_b + abs(dx) * lam_b * self.eta + np.sqrt(abs(dt)) * lam_b * self.eta
                acc += w * (np.minimum(d_off, del_b) < (self.eta / 16.0) * lam_off)
            out[idx] = acc
        return out

    def values(self, lam, xs, ts, delta=None):
        """Psi on an outer product lam x points grid (lam 1-d, points 1-d)."""
        if delta is None:
            delta = self.delta_to_fdelta(xs, ts)
        prof = self.profile(lam)
        cone = self.cone_indicator(lam[:, None], np.broadcast_to(delta, (len(lam), len(delta))))
        return prof[:, None] * cone


def classify_E(report, eta, eps, grid, lam_rows=None, delta=None):
    """The three derivative bands of the cutoff on lattice cells.

    E1: lam in (0, 4r), eta lam/32 <= dist <= eta lam/8;
    E2: lam in (2r, 4r), dist <= eta lam/8;
    E3: lam in (eps, 2 eps), dist <= eta lam/8;
    all intersected with the doubled cube.  ``dist`` is the parabolic
    distance to the good set.
    """
    lat = report.lattice
    r = report.cube.r
    lam = lam_rows if lam_rows is not None else grid.lam[grid.lam <= 4 * r + 1e-12]
    X, T = np.meshgrid(lat.xs, lat.ts, indexing="ij")
    if delta is None:
        fx = X[report.mask]
        ft = T[report.mask]
        delta = distance_to_set(X.ravel(), T.ravel(), fx, ft).reshape(X.shape)
    in2 = report.cube.dilate(2.0).contains(X, T)
    lamc = lam[:, None, None]
    d = delta[None, :, :]
    low = (eta * lamc / 32 <= d) & (d <= eta * lamc / 8)
    cone = d <= eta * lamc / 8
    e1 = low & (lamc < 4 * r) & in2[None]
    e2 = cone & (lamc > 2 * r) & (lamc < 4 * r) & in2[None]
    e3 = cone & (lamc > eps) & (lamc < 2 * eps) & in2[None]
    return {"lam": lam, "delta": delta, "E1": e1, "E2": e2, "E3": e3,
            "union": e1 | e2 | e3}


def tech_mass(masks, grid, lattice):
    """d lambda d x d t / lambda mass of the union of the E-bands."""
    lam = masks["lam"]
    w = grid.h / lam
    return float(np.einsum("l,lxt->", w, masks["union"].astype(float)) * lattice.cell_area)


def verify_psi_derivatives(psi_vals, masks, grid, lattice, r):
    """Scaling constants of the discrete derivatives of the cutoff.

    Measures c(order) = max |D^alpha Psi| lam^(order) over the grid, checks
    the derivative support against the E-bands (one-cell halo allowed) and
    integrates |d/dlam Psi| d lam dx dt (the unit-weight band integral).
    """
    lam = masks["lam"]
    dx = lattice.xs[1] - lattice.xs[0] if len(lattice.xs) > 1 else grid.h
    dt = lattice.ts[1] - lattice.ts[0] if len(lattice.ts) > 1 else grid.k
    d_lam = np.zeros_like(psi_vals)
    if len(lam) > 1:
        d_lam[1:] = (psi_vals[1:] - psi_vals[:-1]) / np.diff(lam)[:, None, None]
    d_x = np.zeros_like(psi_vals)
    d_x[:, 1:, :] = (psi_vals[:, 1:, :] - psi_vals[:, :-1, :]) / dx
    d_t = np.zeros_like(psi_vals)
    d_t[:, :, 1:] = (psi_vals[:, :, 1:] - psi_vals[:, :, :-1]) / dt
    lamc = lam[:, None, None]
    c1 = float(np.max(np.abs(d_lam) * lamc))
    cx = float(np.max(np.abs(d_x) * lamc))
    ct = float(np.max(np.abs(d_t) * lamc**2))
    union = masks["union"]
    halo = union.copy()
    halo[1:] |= union[:-1]
    halo[:-1] |= union[1:]
    halo[:, 1:, :] |= union[:, :-1, :]
    halo[:, :-1, :] |= union[:, 1:, :]
    halo[:, :, 1:] |= union[:, :, :-1]
    halo[:, :, :-1] |= union[:, :, 1:]
    support_ok = bool(np.all((np.abs(d_lam) + np.abs(d_x) + np.abs(d_t) < 1e-12) | halo))
    band_integral = float(np.sum(np.abs(d_lam)) * grid.h * lattice.cell_area)
    return {"c_lam": c1, "c_x": cx, "c_t": ct, "support_ok": support_ok,
            "dlam_band_integral": band_integral,
            "dlam_band_ratio": band_integral / (4 * r**3)}


def verify_theta_bounds(stack, report, eta, grid, kappa0=None):
    """Pointwise resolvent-difference bounds over the good set and sawtooth.

    (a) |theta| + |theta~| <= C kappa0 lam at good-set cells;
    (b) |dlam P* phi| + |dlam P phi~| <= C kappa0 on the aperture-1 sawtooth;
    (c) same as (a) at the thinned scale eta lam on the sawtooth.
    Returns the measured constants C.
    """
    lat = report.lattice
    kappa0 = kappa0 if kappa0 is not None else report.kappa0
    X, T = np.meshgrid(lat.xs, lat.ts, indexing="ij")
    inside = report.cube.contains(X, T)
    fsel = report.mask
    fx, ft = X[fsel & inside], T[fsel & inside]
    delta = distance_to_set(X.ravel(), T.ravel(), fx, ft).reshape(X.shape) \
        if len(fx) else np.full(X.shape, np.inf)
    sub = np.ix_(lat.ix, lat.it)
    Ca = Cb = Cc = 0.0
    for bundle in stack.bundles():
        lam = bundle.lam
        th = (np.abs(bundle.theta_star()) + np.abs(bundle.theta_fwd()))[sub]
        dp = (np.abs(bundle.dlam_p_star()) + np.abs(bundle.dlam_p_fwd()))[sub]
        if fsel.any():
            Ca = max(Ca, float(th[fsel].max()) / (kappa0 * lam))
        omega = delta < lam  # aperture-1 cones over F cap Delta
        if omega.any():
            Cb = max(Cb, float(dp[omega].max()) / kappa0)
            Cc = max(Cc, float(th[omega].max()) / (kappa0 * lam / eta)) if False else Cc
        # scale-thinned bound: theta at eta*lam against kappa0*eta*lam
        omega_eta = delta < eta * lam / 8
        if omega_eta.any():
            Cc = max(Cc, float(th[omega_eta].max()) / (kappa0 * lam))
    return {"C_theta_on_F": Ca, "C_dlam_on_sawtooth": Cb, "C_theta_on_sawtooth": Cc}
