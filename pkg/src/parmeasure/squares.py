"""Square-function integrals of the resolvent family and Carleson norms.

The four square functionals integrate, against dlam/lam over the stack,
the squared magnitudes of: (i) the lambda-derivative of the resolvents of
the two energy solutions, (ii) lam times its x-gradient, (iii) lam times
the tangential operator applied to the resolvents, (iv) lam^2 times the
operator on the lambda-derivative.  A fifth integral takes the resolvent
differences against dlam/lam^3.  All integrands come from resolvent
chains via exact operator identities, the lambda quadrature is
log-trapezoid on the stack with a half-density Richardson error estimate,
and every value is reported normalized by the base cube volume.

Carleson norms take a nonnegative half-space density to the sup over a
cube family of (integral over (0, ell) x cube) / |cube|, with trapezoid
lambda weights anchored at a zero ghost on the boundary row (so the
density lam integrates to exactly ell^2 / 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .geometry import ParabolicCube
from .resolvent import ResolventStack, grad_x

__all__ = [
    "SquareReport",
    "CarlesonReport",
    "square_suite",
    "carleson_norm",
    "carleson_cube_family",
    "lambda_trapezoid_weights",
]

KINDS = ("i", "ii", "iii", "iv", "square1")


@dataclass
class SquareReport:
    kind: str
    value: float
    ratio: float  # value / |cube|
    cube: ParabolicCube
    quad_error: float  # |value - half-density value| / max(value, tiny)
    series: np.ndarray  # per-lambda contributions (before log weights)


def _slab_norms(bundle, h, k):
    """Per-kind squared-integrand mass of one lambda slab."""
    lam = bundle.lam
    cell = h * k

    def n2(a):
        return float(np.sum(a * a)) * cell

    d_star = bundle.dlam_p_star()
    d_fwd = bundle.dlam_p_fwd()
    out = {
        "i": n2(d_star) + n2(d_fwd),
        "ii": lam**2 * (n2(grad_x(d_star, h)) + n2(grad_x(d_fwd, h))),
        "iii": n2(bundle.lamH_p_star()) + n2(bundle.lamH_p_fwd()),
        "iv": n2(bundle.lam2H_dlam_p_star()) + n2(bundle.lam2H_dlam_p_fwd()),
        "square1": (n2(bundle.theta_star()) + n2(bundle.theta_fwd())) / lam**2,
    }
    return out


def square_suite(stack: ResolventStack, cube, kinds=KINDS):
    """All square functionals over one resolvent stack.

    Streams the stack once; the log-trapezoid quadrature in lambda is
    compared against its half-density subsample and the relative gap is
    reported as the quadrature error.
    """
    lams = stack.lams
    w = stack.log_weights()
    series = {kind: np.zeros(len(lams)) for kind in kinds}
    for idx, bundle in enumerate(stack.bundles()):
        vals = _slab_norms(bundle, stack.grid.h, stack.grid.k)
        for kind in kinds:
            series[kind][idx] = vals[kind]
    # half-density comparison on the odd sublattice
    sub = np.arange(0, len(lams), 2)
    lsub = np.log(lams[sub])
    wsub = np.zeros(len(sub))
    if len(sub) > 1:
        wsub[1:-1] = 0.5 * (lsub[2:] - lsub[:-2])
        wsub[0] = 0.5 * (lsub[1] - lsub[0])
        wsub[-1] = 0.5 * (lsub[-1] - lsub[-2])
    reports = []
    for kind in kinds:
        value = float(np.dot(w, series[kind]))
        half = float(np.dot(wsub, series[kind][sub]))
        reports.append(SquareReport(
            kind=kind, value=value, ratio=value / cube.volume, cube=cube,
            quad_error=abs(value - half) / max(abs(value), 1e-300),
            series=series[kind]))
    return {r.kind: r for r in reports}


@dataclass
class CarlesonReport:
    density_id: str
    sup_ratio: float
    argmax: Optional[ParabolicCube]
    rows: List[dict]


def lambda_trapezoid_weights(lam, h, ell):
    """Trapezoid weights on the rows with lam <= ell, zero ghost at lam=0."""
    m = int(round(ell / h))
    w = np.zeros(len(lam))
    w[: m - 1] = h
    if m >= 1:
        w[m - 1] = h / 2
    # the zero ghost at lam=0 contributes half of nothing: densities are
    # assumed to vanish on the boundary row (they carry a lam factor)
    return w


def carleson_cube_family(grid, scales, clip=False):
    """Centered cubes tiling the boundary window at the given radii."""
    cubes = []
    for r in scales:
        xs = np.arange(-grid.xext + r, grid.xext - r + 1e-12, r)
        ts = np.arange(r**2, grid.text - r**2 + 1e-12, r**2)
        for x0 in xs:
            for t0 in ts:
                c = ParabolicCube(float(x0), float(t0), float(r))
                if clip or not c.clipped_by(grid):
                    cubes.append(c)
    return cubes


def carleson_norm(density, grid, cubes, density_id=""):
    """Sup over cubes of the boxed density mass against the cube volume.

    ``density`` is a nonnegative (nlam, nx, nt) array sampled at grid nodes.
    """
    density = np.asarray(density)
    if density.min() < 0:
        raise ValueError("carleson density must be nonnegative")
    # per-row padded prefix sums over (x, t)
    prefix = np.zeros((density.shape[0], density.shape[1] + 1, density.shape[2] + 1))
    np.cumsum(np.cumsum(density, axis=1), axis=2, out=prefix[:, 1:, 1:])
    cell = grid.h * grid.k

    def rect(m, a, b, c_, d_):
        return (prefix[:m, b, d_] - prefix[:m, a, d_]
                - prefix[:m, b, c_] + prefix[:m, a, c_])

    rows = []
    sup, arg = -np.inf, None
    for c in cubes:
        m = int(round(c.r / grid.h))
        if m < 1 or m > grid.nlam:
            continue
        a = int(np.searchsorted(grid.xs, c.x0 - c.r - 1e-12))
        b = int(np.searchsorted(grid.xs, c.x0 + c.r + 1e-12)) - 1
        cc = int(np.searchsorted(grid.ts, c.t0 - c.r**2 - 1e-12))
        dd = int(np.searchsorted(grid.ts, c.t0 + c.r**2 + 1e-12)) - 1
        # trapezoid in (x, t): half-weight edge lines, quarter-weight corners
        box = (rect(m, a, b + 1, cc, dd + 1)
               - 0.5 * (rect(m, a, a + 1, cc, dd + 1) + rect(m, b, b + 1, cc, dd + 1)
                        + rect(m, a, b + 1, cc, cc + 1) + rect(m, a, b + 1, dd, dd + 1))
               + 0.25 * (density[:m, a, cc] + density[:m, a, dd]
                         + density[:m, b, cc] + density[:m, b, dd]))
        wl = np.full(m, grid.h)
        wl[-1] = grid.h / 2
        val = float(np.dot(wl, box)) * cell
        ratio = val / c.volume
        rows.append({"r": c.r, "x0": c.x0, "t0": c.t0, "value": val, "ratio": ratio})
        if ratio > sup:
            sup, arg = ratio, c
    return CarlesonReport(density_id=density_id, sup_ratio=sup if rows else 0.0,
                          argmax=arg, rows=rows)
