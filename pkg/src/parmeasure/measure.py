"""Parabolic measure at the corkscrew pole and its quantitative scans.

The measure of a boundary set E is the value at the pole of the solution
with data 1_E; one transpose solve therefore yields the whole measure row,
binned here into parabolic partition cells around the base cube.  Scans
quantify doubling, quantitative absolute continuity (small measure ratio
forces small Lebesgue ratio) and reverse Hölder integrability of the
density.  The subset scan certifies the property only relative to its
finite probe family (dyadic subcells and density sublevel sets, the
extremal candidates) and reports say so.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import Grid, ParabolicCube, corkscrew_point
from .solver import SolverError, make_stepper, solve_adjoint_row

__all__ = [
    "MeasureEstimate",
    "PoissonKernel",
    "DoublingReport",
    "AinftyScan",
    "BpReport",
    "parabolic_measure",
    "poisson_kernel",
    "doubling_check",
    "ainfty_scan",
    "bp_check",
]

MASS_FLOOR = 1e-8


@dataclass
class MeasureEstimate:
    """Cell masses of the measure at the corkscrew pole of 4 * cube."""

    cube: ParabolicCube
    pole: tuple
    px: float  # partition cell x-size; t-size is px^2
    x_edges: np.ndarray  # (ncx + 1,)
    t_edges: np.ndarray  # (nct + 1,)
    masses: np.ndarray  # (ncx, nct), clipped nonnegative
    clip_mass: float
    far_mass: float  # captured outside the partition window
    truncation_loss: float  # 1 - sum(masses)  (faces + far field)
    coeffs_name: str = ""
    grid_note: str = ""
    clipped_window: bool = False

    @property
    def cell_area(self):
        return self.px * self.px**2

    def x_centers(self):
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    def t_centers(self):
        return 0.5 * (self.t_edges[:-1] + self.t_edges[1:])

    def cell_mask(self, cube):
        """Boolean (ncx, nct) mask of cells whose centers lie in the cube."""
        mx = np.abs(self.x_centers() - cube.x0) <= cube.r + 1e-12
        mt = np.abs(self.t_centers() - cube.t0) <= cube.r**2 + 1e-12
        return np.outer(mx, mt)

    def mass_of(self, cube):
        return float(self.masses[self.cell_mask(cube)].sum())

    def lebesgue_of(self, cube):
        return float(self.cell_mask(cube).sum()) * self.cell_area


@dataclass
class PoissonKernel:
    """Density of the measure cells against dx dt."""

    estimate: MeasureEstimate
    densities: np.ndarray

    def masses_back(self):
        return self.densities * self.estimate.cell_area


@dataclass
class DoublingReport:
    rows: List[dict]  # r, mass, mass2, ratio
    max_ratio: float
    skipped: List[float]


@dataclass
class AinftyScan:
    """Worst Lebesgue ratio per measure-ratio threshold, over the probes."""

    deltas: np.ndarray
    eps: np.ndarray
    n_probes: int
    note: str = "certified relative to the finite probe family only"

    def eps_at(self, delta):
        i = np.searchsorted(self.deltas, delta, side="right") - 1
        return float(self.eps[max(i, 0)])


@dataclass
class BpReport:
    p_values: np.ndarray
    ratios: np.ndarray  # sup over probed subcubes per p
    best_p: Optional[float]  # largest p with ratio <= 10
    excluded_cubes: int = 0


def _partition_edges(center, half, cell):
    n = int(np.ceil(half / cell - 1e-12))
    return center + cell * np.arange(-n, n + 1), 2 * n


def parabolic_measure(coeffs, cube, grid, partition=None, window_dilate=4.0,
                      stepper="auto", on_progress=None):
    """Estimate the measure at the corkscrew pole above ``4 * cube``.

    Runs one transpose solve backward from the pole and bins the boundary
    weights into parabolic cells (x-size ``partition``, t-size its square)
    on a window of ``window_dilate * cube`` around the cube.  Negative cell
    masses (possible for nonsymmetric coefficients, whose discrete rows are
    not sign-definite) are clipped to zero with the clipped total recorded.

    Raises
    ------
    SolverError
        If the grid under-resolves the cube (< 16 cells per side) or the
        pole falls outside the grid.
    """
    r0 = cube.r
    if 2 * r0 / grid.h < 16 - 1e-9:
        raise SolverError(f"cube radius {r0} under-resolved: needs >= 16 cells per side")
    pole = corkscrew_point(cube.dilate(4.0))
    if pole[2] > grid.text + 1e-12 or pole[0] > grid.lmax + 1e-12:
        raise SolverError(f"pole {pole} outside grid (lmax={grid.lmax}, text={grid.text})")
    px = partition if partition is not None else r0 / 8
    px = max(grid.h, round(px / grid.h) * grid.h)
    x_edges, ncx = _partition_edges(cube.x0, window_dilate * r0, px)
    t_edges, nct = _partition_edges(cube.t0, (window_dilate * r0) ** 2, px**2)
    clipped_window = (x_edges[0] < -grid.xext - 1e-12 or x_edges[-1] > grid.xext + 1e-12
                      or t_edges[0] < -1e-12 or t_edges[-1] > grid.text + 1e-12)

    xmap = np.floor((grid.xs - x_edges[0]) / px).astype(np.int64)
    x_ok = (xmap >= 0) & (xmap < ncx) & (np.abs(grid.xs - cube.x0) <= window_dilate * r0 + 1e-12)
    xmap_c = np.where(x_ok, xmap, 0)
    pt = px**2
    cell = grid.h * grid.k
    masses = np.zeros((ncx, nct))
    state = {"far": 0.0, "total": 0.0}

    def on_row(m, t, g):
        w = g * cell
        tot = float(w.sum())
        state["total"] += tot
        ct = int(np.floor((t - t_edges[0]) / pt))
        if 0 <= ct < nct:
            in_w = np.bincount(xmap_c, weights=np.where(x_ok, w, 0.0), minlength=ncx)
            masses[:, ct] += in_w
            state["far"] += tot - float(in_w.sum())
        else:
            state["far"] += tot
        if on_progress is not None and m % 4096 == 0:
            on_progress(m)

    solve_adjoint_row(coeffs, pole, grid, stepper=stepper, on_row=on_row, store=False)
    neg = masses < 0
    clip_mass = float(-masses[neg].sum())
    masses[neg] = 0.0
    window_mass = float(masses.sum())
    return MeasureEstimate(
        cube=cube, pole=pole, px=px, x_edges=x_edges, t_edges=t_edges,
        masses=masses, clip_mass=clip_mass, far_mass=state["far"],
        truncation_loss=1.0 - window_mass, coeffs_name=coeffs.describe(),
        grid_note=grid.describe(), clipped_window=clipped_window)


def poisson_kernel(est):
    """Per-cell density; integrating back over cells returns the masses."""
    return PoissonKernel(estimate=est, densities=est.masses / est.cell_area)


def doubling_check(est, scales=None):
    """Mass ratios of doubled cubes around the base cube center.

    Cubes with mass below the floor 1e-8 are skipped and flagged.
    """
    cube = est.cube
    scales = scales if scales is not None else [cube.r / 8, cube.r / 4, cube.r / 2]
    rows, skipped = [], []
    for r in scales:
        d = ParabolicCube(cube.x0, cube.t0, r)
        m1 = est.mass_of(d)
        m2 = est.mass_of(d.dilate(2.0))
        if m1 < MASS_FLOOR:
            skipped.append(r)
            continue
        rows.append({"r": r, "mass": m1, "mass2": m2, "ratio": m2 / m1})
    max_ratio = max((row["ratio"] for row in rows), default=float("nan"))
    return DoublingReport(rows=rows, max_ratio=max_ratio, skipped=skipped)


def _children(cube):
    r = cube.r / 2
    return [ParabolicCube(cube.x0 + ix * r, cube.t0 + it * r**2, r)
            for ix in (-1, 1) for it in (-3, -1, 1, 3)]


def dyadic_family(cube, levels):
    """The cube plus ``levels`` generations of parabolic dyadic children."""
    out, current = [cube], [cube]
    for _ in range(levels):
        current = [child for c in current for child in _children(c)]
        out.extend(current)
    return out


def ainfty_scan(est, levels=2, sub_levels=2, deltas=None):
    """Quantitative absolute-continuity scan over a finite probe family.

    For every dyadic subcube Delta of the base cube, the probed subsets E
    are (a) its dyadic subcells ``sub_levels`` further down and (b) the
    sublevel sets of the density inside Delta (prefixes of the cells
    sorted by density, the extremal sets for fixed mass).  The table maps
    each measure-ratio threshold delta to the worst observed |E|/|Delta|.
    """
    deltas = np.asarray(deltas if deltas is not None
                        else np.logspace(-5, 0, 26, endpoint=False))
    pairs_w, pairs_l = [], []
    for delta_cube in dyadic_family(est.cube, levels):
        mask = est.cell_mask(delta_cube)
        ncells = int(mask.sum())
        if ncells == 0:
            continue
        wD = float(est.masses[mask].sum())
        if wD < MASS_FLOOR:
            continue
        vals = np.sort(est.masses[mask])
        cum = np.cumsum(vals) / wD
        leb = np.arange(1, ncells + 1) / ncells
        pairs_w.append(cum[:-1])  # exclude E = Delta itself (ratio 1)
        pairs_l.append(leb[:-1])
        for sub in dyadic_family(delta_cube, sub_levels)[1:]:
            smask = est.cell_mask(sub) & mask
            sc = int(smask.sum())
            if sc == 0:
                continue
            pairs_w.append(np.array([est.masses[smask].sum() / wD]))
            pairs_l.append(np.array([sc / ncells]))
    if not pairs_w:
        return AinftyScan(deltas=deltas, eps=np.zeros_like(deltas), n_probes=0)
    w = np.concatenate(pairs_w)
    l = np.concatenate(pairs_l)
    eps = np.zeros_like(deltas)
    for i, d in enumerate(deltas):
        sel = w < d
        eps[i] = l[sel].max() if np.any(sel) else 0.0
    eps = np.maximum.accumulate(eps)
    return AinftyScan(deltas=deltas, eps=eps, n_probes=len(w))


def bp_check(kernel, p_values=(1.1, 1.25, 1.5, 2.0), levels=3, ratio_cap=10.0):
    """Reverse Hölder ratios of the density over dyadic subcubes.

    Ratio per cube: (mean K^p)^(1/p) / mean K.  Cubes where the kernel
    vanishes identically are excluded and counted.  ``best_p`` is the
    largest probed p whose sup ratio stays at or below the cap.
    """
    est = kernel.estimate
    p_values = np.asarray(p_values, dtype=float)
    sups = np.zeros(len(p_values))
    excluded = 0
    for cube in dyadic_family(est.cube, levels):
        mask = est.cell_mask(cube)
        if int(mask.sum()) < 4:
            continue
        K = kernel.densities[mask]
        mean = K.mean()
        if mean <= 0:
            excluded += 1
            continue
        for i, p in enumerate(p_values):
            ratio = (np.mean(K**p)) ** (1.0 / p) / mean
            sups[i] = max(sups[i], ratio)
    ok = [float(p) for p, r in zip(p_values, sups) if r <= ratio_cap and r > 0]
    return BpReport(p_values=p_values, ratios=sups, best_p=max(ok) if ok else None,
                    excluded_cubes=excluded)
