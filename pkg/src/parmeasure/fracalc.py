"""Half-order time derivative, Hilbert transform in t, energy seminorms.

All three operators are discrete Fourier multipliers along the time axis:
D_half has symbol i|tau|^(1/2), H_t has symbol -i sgn(tau), and their
composition factorizes d/dt = D_half H_t D_half.  Signals are treated as
periodic in t; data that is not compactly supported inside the window is
tapered over a margin before transforming, and energies are integrated on
the untapered core only.  Homogeneous operators annihilate constants (the
zero frequency maps to 0).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "TimeSignalField",
    "EnergySeminorm",
    "taus",
    "half_derivative_t",
    "hilbert_t",
    "taper",
    "energy_seminorm",
    "x_gradient",
]


@dataclass
class TimeSignalField:
    """Samples on an (x, t) lattice, time along the last axis.

    ``margin`` is the taper margin in samples at each end of the window;
    energies are computed on the core ``[margin, nt - margin)``.
    """

    values: np.ndarray
    h: float
    k: float
    tapered: bool = False
    margin: int = 0

    @property
    def nt(self):
        return self.values.shape[-1]

    def core_slice(self):
        return slice(self.margin, self.nt - self.margin if self.margin else None)

    def with_values(self, values):
        return replace(self, values=values)


@dataclass(frozen=True)
class EnergySeminorm:
    """The two halves of the homogeneous energy norm squared."""

    grad_part: float
    half_part: float

    @property
    def total(self):
        return self.grad_part + self.half_part


def taus(nt, k):
    """Angular frequencies 2 pi m / (nt k) of the discrete transform."""
    return 2.0 * np.pi * np.fft.fftfreq(nt, d=k)


def _apply_multiplier(values, k, symbol):
    nt = values.shape[-1]
    tau = taus(nt, k)
    mult = symbol(tau)
    mult[0] = 0.0  # constants are annihilated
    vhat = np.fft.fft(values, axis=-1)
    return np.fft.ifft(vhat * mult, axis=-1)


def half_derivative_t(field):
    """Half-order time derivative, symbol i |tau|^(1/2).

    Output is complex even for real input (the symbol is not Hermitian).
    """
    out = _apply_multiplier(field.values, field.k, lambda tau: 1j * np.sqrt(np.abs(tau)).astype(complex))
    return field.with_values(out)


def hilbert_t(field):
    """Hilbert transform in t, symbol -i sgn(tau); real input gives real output."""
    nt = field.nt

    def symbol(tau):
        m = -1j * np.sign(tau).astype(complex)
        if nt % 2 == 0:
            m[nt // 2] = 0.0  # Nyquist has no well-defined sign
        return m

    out = _apply_multiplier(field.values, field.k, symbol)
    if np.isrealobj(field.values):
        out = out.real
    return field.with_values(out)


def _smoothstep(y):
    y = np.clip(y, 0.0, 1.0)
    return y * y * (3.0 - 2.0 * y)


def taper(field, margin_fraction=1 / 8):
    """Multiply by a smooth window falling to 0 over margins of the window.

    The margin width (as a fraction of the time extent) is recorded on the
    returned field so energy integrals can skip it.
    """
    nt = field.nt
    m = max(2, int(round(nt * margin_fraction)))
    w = np.ones(nt)
    ramp = _smoothstep(np.arange(m) / m)
    w[:m] = ramp
    w[-m:] = ramp[::-1]
    return replace(field, values=field.values * w, tapered=True, margin=m)


def x_gradient(values, h):
    """Forward differences on x-links (first axis shrinks by one)."""
    return (values[1:] - values[:-1]) / h


def energy_seminorm(field):
    """Both parts of the homogeneous energy seminorm squared.

    grad_part integrates |d/dx v|^2 on x-links, half_part integrates
    |D_half v|^2 at nodes; both over the untapered time core, with cell
    measure h k.  Constants give (0, 0).
    """
    core = field.core_slice()
    dvx = x_gradient(field.values, field.h)
    grad = float(np.sum(np.abs(dvx[..., core]) ** 2) * field.h * field.k)
    dh = half_derivative_t(field).values
    half = float(np.sum(np.abs(dh[..., core]) ** 2) * field.h * field.k)
    return EnergySeminorm(grad_part=grad, half_part=half)
