"""Discrete half-space geometry with parabolic scaling.

Coordinates are (lambda, x, t) with lambda > 0 the distance to the boundary
plane.  Lengths scale like x, times like x^2; the parabolic norm is
``|x| + sqrt(|t|)`` and a parabolic cube of radius r spans r in x and r^2
in t.  Tangential dimension is fixed to n = 1 here (the coefficient module
is n-generic, the grid machinery is not).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = [
    "parabolic_norm",
    "Grid",
    "build_grid",
    "ParabolicCube",
    "corkscrew_point",
    "WhitneyCube",
    "whitney_decomposition",
    "overlap_multiplicity",
    "parabolic_distance",
    "in_cone",
]

N_DIM = 1  # tangential dimension of the grid machinery


def parabolic_norm(x, t):
    """||(x, t)|| = |x| + |t|^(1/2); homogeneous under (x,t) -> (rx, r^2 t)."""
    return np.abs(x) + np.sqrt(np.abs(t))


def _commensurate(extent, step, what):
    ratio = extent / step
    n = int(round(ratio))
    if n <= 0 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"{what} = {extent} is not a positive multiple of {step}")
    return n


@dataclass(frozen=True)
class Grid:
    """Uniform grid on (0, lmax] x [-xext, xext] x [0, text] with k = h^2.

    lam holds the interior lambda rows h, 2h, ..., lmax; the boundary row
    lambda = 0 is kept separate (it carries Dirichlet data, not unknowns).
    """

    h: float
    k: float
    lmax: float
    xext: float
    text: float
    lam: np.ndarray
    xs: np.ndarray
    ts: np.ndarray

    @property
    def nlam(self):
        return len(self.lam)

    @property
    def nx(self):
        return len(self.xs)

    @property
    def nt(self):
        return len(self.ts)

    def x_index(self, x):
        j = int(round((x + self.xext) / self.h))
        if not (0 <= j < self.nx) or abs(self.xs[j] - x) > 1e-9 * max(1.0, abs(x)) + 1e-12:
            raise ValueError(f"x = {x} is not a grid node")
        return j

    def t_index(self, t):
        m = int(round(t / self.k))
        if not (0 <= m < self.nt) or abs(self.ts[m] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise ValueError(f"t = {t} is not a grid node")
        return m

    def lam_index(self, lam):
        i = int(round(lam / self.h))
        if not (1 <= i <= self.nlam):
            raise ValueError(f"lambda = {lam} is outside (0, {self.lmax}]")
        return i - 1

    def describe(self):
        return (f"h=1/{round(1 / self.h)} lmax={self.lmax} xext={self.xext} "
                f"text={self.text} ({self.nlam}x{self.nx}x{self.nt})")


def build_grid(h, lmax, xext, text):
    """Build a Grid; extents must be commensurate with h (and h^2 in time)."""
    if h <= 0:
        raise ValueError("step h must be positive")
    k = h * h
    nl = _commensurate(lmax, h, "lmax")
    nxh = _commensurate(xext, h, "xext")
    nt = _commensurate(text, k, "text")
    lam = h * np.arange(1, nl + 1)
    xs = h * np.arange(-nxh, nxh + 1)
    ts = k * np.arange(0, nt + 1)
    return Grid(h=h, k=k, lmax=lmax, xext=xext, text=text, lam=lam, xs=xs, ts=ts)


@dataclass(frozen=True)
class ParabolicCube:
    """Delta_r(x0, t0) = [x0 - r, x0 + r] x (t0 - r^2, t0 + r^2), ell = r.

    Dilation keeps the center and scales (r, r^2); |c Delta| = c^(n+2) |Delta|.
    Q_r is realized as the interval of radius r (n = 1 ball convention).
    """

    x0: float
    t0: float
    r: float

    @property
    def volume(self):
        return (2 * self.r) ** N_DIM * 2 * self.r**2

    def dilate(self, c):
        return ParabolicCube(self.x0, self.t0, c * self.r)

    def x_interval(self):
        return (self.x0 - self.r, self.x0 + self.r)

    def t_interval(self):
        return (self.t0 - self.r**2, self.t0 + self.r**2)

    def contains(self, x, t):
        return (np.abs(np.asarray(x) - self.x0) <= self.r) & (np.abs(np.asarray(t) - self.t0) <= self.r**2)

    def clipped_by(self, grid):
        """True if the cube sticks out of the grid's boundary rectangle."""
        return (self.x0 - self.r < -grid.xext - 1e-12 or self.x0 + self.r > grid.xext + 1e-12
                or self.t0 - self.r**2 < -1e-12 or self.t0 + self.r**2 > grid.text + 1e-12)

    def node_masks(self, grid):
        """Boolean masks (on grid.xs, grid.ts) of the clipped cube."""
        mx = np.abs(grid.xs - self.x0) <= self.r + 1e-12
        mt = np.abs(grid.ts - self.t0) <= self.r**2 + 1e-12
        return mx, mt


def corkscrew_point(cube, backward=False):
    """Interior reference point (4r, x0, t0 +/- 16 r^2) above a cube.

    The forward point sits 16 r^2 ahead of the cube center; the backward
    variant (for the adjoint measure) sits 16 r^2 behind.
    """
    s = -1.0 if backward else 1.0
    return (4 * cube.r, cube.x0, cube.t0 + s * 16 * cube.r**2)


@dataclass(frozen=True)
class WhitneyCube:
    """A dyadic interior cube at distance ~ 4 ell from the boundary.

    Node index ranges are half-open; lam rows satisfy 4 ell <= lambda < 8 ell.
    """

    ell: float
    lam_lo: int  # lam row indices [lam_lo, lam_hi)
    lam_hi: int
    x_lo: int
    x_hi: int
    t_lo: int
    t_hi: int

    def double(self, grid):
        """Index ranges of the doubled cube 2W, clipped to the grid.

        Each axis grows to twice its node count (split as evenly as the
        lattice allows), so doubles of neighbours overlap boundedly.
        """
        def grow(lo, hi, nmax):
            d = hi - lo
            return max(0, lo - d // 2), min(nmax, hi + d - d // 2)

        l0, l1 = grow(self.lam_lo, self.lam_hi, grid.nlam)
        x0, x1 = grow(self.x_lo, self.x_hi, grid.nx)
        t0, t1 = grow(self.t_lo, self.t_hi, grid.nt)
        return (l0, l1, x0, x1, t0, t1)


def whitney_decomposition(grid):
    """Partition the interior nodes into parabolic Whitney cubes.

    Generation j has sidelength ell_j = 2^(j-2) h and owns the lambda rows
    with 4 ell_j <= lambda < 8 ell_j (row indices [2^j, 2^(j+1))), sliced
    into layers of thickness ell_j, so every cube has parabolic side
    (ell, ell, ell^2) and sits at distance 4..8 ell from the boundary.  The
    first two generations have sub-h sidelength and degenerate to single
    nodes.
    """
    cubes: List[WhitneyCube] = []
    j = 0
    while 2**j <= grid.nlam:
        ell = grid.h * 2**j / 4.0
        band_lo = 2**j - 1  # row index of lambda = 2^j h
        band_hi = min(grid.nlam, 2 ** (j + 1) - 1)
        nl_cells = max(1, 2 ** (j - 2)) if j >= 2 else 1
        nx_cells = nl_cells
        nt_cells = nl_cells**2
        for lam_lo in range(band_lo, band_hi, nl_cells):
            lam_hi = min(band_hi, lam_lo + nl_cells)
            for x_lo in range(0, grid.nx, nx_cells):
                for t_lo in range(0, grid.nt, nt_cells):
                    cubes.append(WhitneyCube(ell, lam_lo, lam_hi,
                                             x_lo, min(grid.nx, x_lo + nx_cells),
                                             t_lo, min(grid.nt, t_lo + nt_cells)))
        j += 1
    return cubes


def overlap_multiplicity(grid, cubes, sample_stride=1):
    """Max number of doubled cubes covering any node (sampled)."""
    count = np.zeros((grid.nlam, (grid.nx - 1) // sample_stride + 1,
                      (grid.nt - 1) // sample_stride + 1), dtype=np.int32)
    for w in cubes:
        l0, l1, x0, x1, t0, t1 = w.double(grid)
        count[l0:l1, (x0 + sample_stride - 1) // sample_stride:(x1 + sample_stride - 1) // sample_stride,
              (t0 + sample_stride - 1) // sample_stride:(t1 + sample_stride - 1) // sample_stride] += 1
    return int(count.max())


def parabolic_distance(point, set_xs, set_ts):
    """min over the set of ||(x - y, t - s)||; the set must be nonempty."""
    set_xs = np.asarray(set_xs, dtype=float)
    set_ts = np.asarray(set_ts, dtype=float)
    if set_xs.size == 0:
        raise ValueError("parabolic distance to an empty set")
    x, t = point
    return float(np.min(np.abs(x - set_xs) + np.sqrt(np.abs(t - set_ts))))


def in_cone(eta, vertex, lam, x, t):
    """Membership in the parabolic cone of aperture eta with the given vertex."""
    x0, t0 = vertex
    return parabolic_norm(np.asarray(x) - x0, np.asarray(t) - t0) < eta * np.asarray(lam)
