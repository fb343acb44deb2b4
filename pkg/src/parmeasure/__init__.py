"""Numerical laboratory for parabolic measure in the upper half space.

Computes the measure attached to ``d/dt u = div A(x,t) grad u`` on
``{lambda > 0}`` for bounded measurable, possibly nonsymmetric A, and runs
quantitative checks on it: doubling, A-infinity and reverse Holder scans,
energy solves for the off-diagonal coefficient blocks, resolvent calculus,
maximal and square function bounds, good-set construction with sawtooth
cutoffs, and the Carleson-estimate audit.
"""

from .coeffs import CoefficientField, BlockSplit, NonEllipticError, make_coefficients, split_blocks, verify_ellipticity
from .geometry import Grid, ParabolicCube, WhitneyCube, build_grid, corkscrew_point, parabolic_distance, parabolic_norm, whitney_decomposition

__all__ = [
    "CoefficientField",
    "BlockSplit",
    "NonEllipticError",
    "make_coefficients",
    "split_blocks",
    "verify_ellipticity",
    "Grid",
    "ParabolicCube",
    "WhitneyCube",
    "build_grid",
    "corkscrew_point",
    "parabolic_distance",
    "parabolic_norm",
    "whitney_decomposition",
]
