"""Energy solves absorbing the off-diagonal coefficient blocks.

Around a base cube, the smooth cutoff chi is 1 on the 8-fold dilate and
vanishes outside the 16-fold dilate.  The two problems solved here are

    (-d/dt - div_x a grad_x) phi       = div_x(A_perp,par chi),
    ( d/dt - div_x a grad_x) phi_tilde = div_x(A_par,perp chi),

with a the tangential block, posed on the boundary plane in a discrete
space of grid functions in x times Fourier modes in t.  The time pairing
is diagonal per mode (symbol +-i tau, the factorized d/dt form), the
spatial part is the exact flux-form tridiagonal with no-flux edges, and
time-dependent a couples modes through an FFT-applied multiplication.
Solutions are pinned to mean zero (the problems only determine them
modulo constants) and returned with their energy report and the
discrete-system residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fracalc
from .coeffs import split_blocks
from .geometry import ParabolicCube
from .solver import SolverError

__all__ = [
    "CutoffChi",
    "HodgePair",
    "build_chi",
    "solve_hodge",
    "hidden_coercivity_check",
    "inf_sup_check",
    "weak_residual",
]


def _quintic_ramp(y):
    """1 at y <= 0, 0 at y >= 1, C^2 monotone in between."""
    y = np.clip(y, 0.0, 1.0)
    return 1.0 - (10 * y**3 - 15 * y**4 + 6 * y**5)


@dataclass
class CutoffChi:
    """Tensor cutoff: 1 on 8*cube, 0 outside 16*cube, quintic ramps."""

    cube: ParabolicCube
    clipped: bool = False

    def __call__(self, x, t):
        c, r = self.cube, self.cube.r
        rx = _quintic_ramp((np.abs(np.asarray(x) - c.x0) - 8 * r) / (8 * r))
        rt = _quintic_ramp((np.abs(np.asarray(t) - c.t0) - 64 * r**2) / (192 * r**2))
        return rx * rt

    def slope_constant(self, grid):
        """Measured r max|grad_x chi| + r^2 max|dt chi| on the grid."""
        r = self.cube.r
        vals = self(grid.xs[:, None], grid.ts[None, :])
        gx = np.max(np.abs(np.diff(vals, axis=0))) / grid.h
        gt = np.max(np.abs(np.diff(vals, axis=1))) / grid.k
        return r * gx + r**2 * gt


def build_chi(cube, grid, allow_clipping=False):
    """Cutoff for the 8-fold dilate of a cube.

    Raises unless the 16-fold dilate fits in the grid's boundary rectangle;
    pass ``allow_clipping=True`` to accept a window-clipped cutoff (the
    report is flagged).
    """
    big = cube.dilate(16.0)
    clipped = (big.x0 - big.r < -grid.xext - 1e-12 or big.x0 + big.r > grid.xext + 1e-12
               or big.t0 - big.r**2 < -1e-12 or big.t0 + big.r**2 > grid.text + 1e-12)
    if clipped and not allow_clipping:
        raise SolverError(f"16x dilate of {cube} exceeds the grid window")
    return CutoffChi(cube=cube, clipped=clipped)


@dataclass
class HodgePair:
    """The two energy solutions with their diagnostics."""

    phi: fracalc.TimeSignalField
    phi_t: fracalc.TimeSignalField
    energy_phi: fracalc.EnergySeminorm
    energy_phi_t: fracalc.EnergySeminorm
    c_energy: float  # (energy_phi.total + energy_phi_t.total) / |cube|
    residual_phi: float
    residual_phi_t: float
    means: tuple
    chi: CutoffChi
    cube: ParabolicCube


class _TangentialForm:
    """Discrete tangential operator +-i tau + K_a and its pairings."""

    def __init__(self, coeffs, grid):
        self.grid = grid
        self.h, self.k = grid.h, grid.k
        self.nx, self.nt = grid.nx, grid.nt
        A = coeffs.entries(grid.xs[None, :], grid.ts[:, None])
        self.a_links = 0.5 * (A[..., 1, 1][:, :-1] + A[..., 1, 1][:, 1:]).T  # (nx-1, nt)
        self.a_mean = self.a_links.mean(axis=1)
        self.tau = fracalc.taus(self.nt, self.k)
        self.time_dependent = bool(np.ptp(self.a_links, axis=1).max() > 1e-13)

    def K_apply_hat(self, u_hat):
        """Spatial part in mode space (FFT round trip when a varies in t)."""
        if not self.time_dependent:
            flux = self.a_mean[:, None] * (u_hat[1:] - u_hat[:-1]) / self.h
        else:
            u = np.fft.ifft(u_hat, axis=1)
            flux = np.fft.fft(self.a_links * (u[1:] - u[:-1]) / self.h, axis=1)
        div = np.zeros_like(u_hat)
        div[:-1] += flux / self.h
        div[1:] -= flux / self.h
        return -div  # K_a = -div(a grad), matching the direct solve

    def op_hat(self, u_hat, sign):
        """(sign * i tau + K_a) u in mode space."""
        return 1j * sign * self.tau[None, :] * u_hat + self.K_apply_hat(u_hat)

    def solve(self, rhs, sign, tol=1e-10, max_iter=400):
        """Solve (sign i tau + K_a) u = rhs for a real rhs field (nx, nt).

        Direct per-mode tridiagonal solve with the time-averaged a; when a
        is time dependent the direct solve preconditions a fixed-point
        iteration on the mode-mixing remainder.
        """
        rhs_hat = np.fft.fft(np.asarray(rhs, dtype=float), axis=1)
        u_hat = self._solve_mean(rhs_hat, sign)
        res = None
        if self.time_dependent:
            for _ in range(max_iter):
                r = rhs_hat - self.op_hat(u_hat, sign)
                r[:, 0] -= r[:, 0].mean()  # zero-mode gauge
                res = self._norm(r) / max(self._norm(rhs_hat), 1e-300)
                if res < tol:
                    break
                u_hat = u_hat + self._solve_mean(r, sign)
            else:
                raise SolverError(f"tangential solve stalled at residual {res:.2e}")
        u_hat[:, 0] -= u_hat[:, 0].mean()
        r = rhs_hat - self.op_hat(u_hat, sign)
        r[:, 0] -= r[:, 0].mean()
        res = self._norm(r) / max(self._norm(rhs_hat), 1e-300)
        u = np.fft.ifft(u_hat, axis=1)
        return u.real, res

    @staticmethod
    def _norm(v):
        return float(np.linalg.norm(v.ravel()))

    def _solve_mean(self, rhs_hat, sign):
        """Per-mode Thomas with the time-averaged coefficient."""
        nx, nt = rhs_hat.shape
        a = self.a_mean
        h2 = self.h**2
        lo = np.zeros(nx, dtype=complex)
        up = np.zeros(nx, dtype=complex)
        lo[1:] = -a / h2
        up[:-1] = -a / h2
        dg_base = np.zeros(nx)
        dg_base[:-1] += a / h2
        dg_base[1:] += a / h2
        out = np.empty_like(rhs_hat)
        tau = self.tau.copy()
        tau0 = tau == 0.0
        # zero mode: singular on constants; pin the first node and re-center
        dg = dg_base[:, None] + 1j * sign * tau[None, :]
        dg[0, tau0] += 1.0  # harmless pin; rhs has zero mean there
        cp = np.empty_like(rhs_hat)
        cp[0] = up[0] / dg[0]
        out[0] = rhs_hat[0] / dg[0]
        for j in range(1, nx):
            den = dg[j] - lo[j] * cp[j - 1]
            cp[j] = up[j] / den
            out[j] = (rhs_hat[j] - lo[j] * out[j - 1]) / den
        for j in range(nx - 2, -1, -1):
            out[j] -= cp[j] * out[j + 1]
        out[:, tau0] -= out[:, tau0].mean(axis=0, keepdims=True)
        return out


def _divergence_of(field_links, h):
    """div of a link field at nodes, zero-flux extension at the edges."""
    out = np.zeros((field_links.shape[0] + 1, field_links.shape[1]))
    out[:-1] += field_links / h
    out[1:] -= field_links / h
    return out


def solve_hodge(coeffs, cube, grid, chi=None, tol=1e-10):
    """Solve the pair of tangential energy problems for a base cube.

    Returns a HodgePair; the a priori constant ``c_energy`` is the summed
    energy divided by the cube volume.
    """
    chi = chi if chi is not None else build_chi(cube, grid)
    blocks = split_blocks(coeffs)
    form = _TangentialForm(coeffs, grid)
    x_links = grid.xs[:-1] + grid.h / 2
    chi_links = chi(x_links[:, None], grid.ts[None, :])
    a_pt = blocks.a_pt(x_links[:, None], grid.ts[None, :])[..., 0]
    a_tp = blocks.a_tp(x_links[:, None], grid.ts[None, :])[..., 0]
    rhs_phi = _divergence_of(a_pt * chi_links, grid.h)
    rhs_phi_t = _divergence_of(a_tp * chi_links, grid.h)
    phi, res_phi = form.solve(rhs_phi, sign=-1.0, tol=tol)
    phi_t, res_phi_t = form.solve(rhs_phi_t, sign=+1.0, tol=tol)
    f_phi = fracalc.TimeSignalField(values=phi, h=grid.h, k=grid.k)
    f_phi_t = fracalc.TimeSignalField(values=phi_t, h=grid.h, k=grid.k)
    e_phi = fracalc.energy_seminorm(f_phi)
    e_phi_t = fracalc.energy_seminorm(f_phi_t)
    return HodgePair(
        phi=f_phi, phi_t=f_phi_t, energy_phi=e_phi, energy_phi_t=e_phi_t,
        c_energy=(e_phi.total + e_phi_t.total) / cube.volume,
        residual_phi=res_phi, residual_phi_t=res_phi_t,
        means=(float(phi.mean()), float(phi_t.mean())),
        chi=chi, cube=cube)


def _pairing(form, u, v, sign):
    u_hat = np.fft.fft(u, axis=1)
    return np.vdot(np.fft.fft(v, axis=1), form.op_hat(u_hat, sign)) * form.h * form.k / form.nt


def weak_residual(coeffs, grid, solution, rhs, sign, n_tests=20, seed=0):
    """Relative residual of the discrete weak form against a random test
    battery: max over v of |B(u, v) - <rhs, v>| / (hk |rhs| |v|)."""
    form = _TangentialForm(coeffs, grid)
    rng = np.random.default_rng(seed)
    worst = 0.0
    hk = form.h * form.k
    rhs_norm = float(np.linalg.norm(rhs)) + 1e-300
    for _ in range(n_tests):
        v = rng.standard_normal((grid.nx, grid.nt))
        lhs = _pairing(form, solution, v, sign)
        rhs_v = np.sum(rhs * v) * hk
        worst = max(worst, abs(lhs - rhs_v) / (hk * rhs_norm * np.linalg.norm(v)))
    return worst


def hidden_coercivity_check(coeffs, grid, n_tests=10, seed=1):
    """min over random real v of (Re B(v,v) - kappa |grad v|^2); should be
    >= -tol by ellipticity since the time part pairs to zero."""
    form = _TangentialForm(coeffs, grid)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_tests):
        v = rng.standard_normal((grid.nx, grid.nt))
        v -= v.mean()
        b = _pairing(form, v, v, sign=+1.0)
        grad2 = float(np.sum((np.diff(v, axis=0) / grid.h) ** 2)) * grid.h * grid.k
        worst = min(worst, (b.real - coeffs.kappa * grad2) / max(grad2, 1e-300))
    return worst


def inf_sup_check(coeffs, grid, delta=0.5, n_tests=10, seed=2):
    """Twisted-family inf-sup constant: |B(v, v + delta H_t v)| against the
    energy norms, minimized over a random battery."""
    form = _TangentialForm(coeffs, grid)
    rng = np.random.default_rng(seed)
    beta = np.inf
    for _ in range(n_tests):
        v = rng.standard_normal((grid.nx, grid.nt))
        v -= v.mean()
        fld = fracalc.TimeSignalField(values=v, h=grid.h, k=grid.k)
        w = v + delta * fracalc.hilbert_t(fld).values
        b = abs(_pairing(form, v, w, sign=+1.0))
        ev = fracalc.energy_seminorm(fld).total
        ew = fracalc.energy_seminorm(fracalc.TimeSignalField(values=w, h=grid.h, k=grid.k)).total
        beta = min(beta, b / max(np.sqrt(ev * ew), 1e-300))
    return beta
