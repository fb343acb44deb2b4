"""Closed forms for the heat equation on the half plane (A = I, n = 1).

The boundary-to-interior kernel factorizes into the first-passage density
in the normal variable times the heat kernel in the tangential variable
(reflection principle).  These are the independent comparison route for
the A = I runs; the estimator never calls into this module.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

__all__ = [
    "heat_kernel",
    "first_passage_density",
    "boundary_kernel",
    "gaussian_boundary_solution",
    "kernel_cell_mass",
    "kernel_box_mass",
]


def heat_kernel(x, tau):
    """Kernel of d/dt = d^2/dx^2 on the line."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(tau > 0, np.exp(-(x**2) / (4 * np.maximum(tau, 1e-300)))
                       / np.sqrt(4 * np.pi * np.maximum(tau, 1e-300)), 0.0)
    return out


def first_passage_density(lam, tau):
    """Density in tau of the first boundary hit from height lam."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(tau > 0,
                       lam * np.exp(-(lam**2) / (4 * np.maximum(tau, 1e-300)))
                       / np.sqrt(4 * np.pi * np.maximum(tau, 1e-300) ** 3), 0.0)
    return out


def boundary_kernel(lam, x, t, y, s):
    """Poisson kernel of the half plane: density of the measure at
    (lam, x, t) with respect to dy ds on the boundary."""
    tau = t - s
    return first_passage_density(lam, tau) * heat_kernel(x - y, tau)


def gaussian_boundary_solution(lam, x, t, sigma=0.25, tol=1e-9):
    """Solution with boundary data exp(-y^2 / (2 sigma^2)), zero initial row.

    The tangential convolution is Gaussian-exact; the remaining time
    integral is done adaptively.
    """
    def integrand(s):
        tau = t - s
        if tau <= 0:
            return 0.0
        var = sigma**2 + 2 * tau
        conv = sigma / np.sqrt(var) * np.exp(-(x**2) / (2 * var))
        return first_passage_density(lam, tau) * conv

    val, _ = quad(integrand, 0.0, t, epsabs=tol, epsrel=tol, limit=400)
    return val


def kernel_cell_mass(pole, x_lo, x_hi, t_lo, t_hi, order=6):
    """Gauss-Legendre quadrature of the kernel over one boundary cell."""
    lam, x0, t0 = pole
    gx, wx = np.polynomial.legendre.leggauss(order)
    xs = 0.5 * (x_hi + x_lo) + 0.5 * (x_hi - x_lo) * gx
    ts = 0.5 * (t_hi + t_lo) + 0.5 * (t_hi - t_lo) * gx
    wxs = 0.5 * (x_hi - x_lo) * wx
    wts = 0.5 * (t_hi - t_lo) * wx
    vals = boundary_kernel(lam, x0, t0, xs[:, None], ts[None, :])
    return float(wxs @ vals @ wts)


def kernel_box_mass(pole, x_lo, x_hi, t_lo, t_hi, nx=24, nt=24, order=4):
    """Composite quadrature over a boundary rectangle (panels x Gauss)."""
    xs = np.linspace(x_lo, x_hi, nx + 1)
    ts = np.linspace(t_lo, t_hi, nt + 1)
    total = 0.0
    for i in range(nx):
        for j in range(nt):
            total += kernel_cell_mass(pole, xs[i], xs[i + 1], ts[j], ts[j + 1], order=order)
    return total
