"""Reproducing kernel of a symmetric bandpass space and its Gram matrices.

The band is ``(-omega1, -omega0] U [omega0, omega1)`` in radians per sample
interval.  Its kernel is the inverse Fourier transform of the band indicator,

    phi(t) = (sin(omega1 t) - sin(omega0 t)) / (pi t),    phi(0) = (omega1 - omega0) / pi.

With ``omega0 = 0`` and ``omega1 = pi`` this is ``sinc(t)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DistinctLocationsError

_TAYLOR_RADIUS = 1e-12


@dataclass(frozen=True)
class BandSpec:
    """Symmetric spectral support of the signal model."""

    omega0: float
    omega1: float

    def __post_init__(self):
        w0, w1 = float(self.omega0), float(self.omega1)
        if not (math.isfinite(w0) and math.isfinite(w1)):
            raise ValueError("band edges must be finite")
        if w0 < 0:
            raise ValueError(f"omega0 must be >= 0, got {w0}")
        if w1 <= w0:
            raise ValueError(f"omega1 must exceed omega0, got ({w0}, {w1})")
        object.__setattr__(self, "omega0", w0)
        object.__setattr__(self, "omega1", w1)

    @classmethod
    def lowpass(cls, omega1: float) -> "BandSpec":
        return cls(0.0, omega1)

    @classmethod
    def nyquist(cls) -> "BandSpec":
        return cls(0.0, math.pi)

    @classmethod
    def parse(cls, text: str) -> "BandSpec":
        """Parse ``"lo:hi"`` where each edge is a number or a multiple of pi
        (``pi``, ``pi/2``, ``3*pi/4``, ``0.25pi``)."""
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"band must look like 'lo:hi', got {text!r}")
        return cls(_parse_angle(parts[0]), _parse_angle(parts[1]))

    @property
    def peak(self) -> float:
        """phi(0): band measure divided by 2 pi."""
        return (self.omega1 - self.omega0) / math.pi

    def __str__(self):
        return f"{self.omega0!r}:{self.omega1!r}"


_ANGLE = re.compile(
    r"^\s*(?P<coef>[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)?\s*\*?\s*pi\s*(/\s*(?P<den>\d+(\.\d*)?))?\s*$"
)


def _parse_angle(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    m = _ANGLE.match(text)
    if m is None:
        raise ValueError(f"cannot parse angle {text!r}")
    coef = float(m.group("coef")) if m.group("coef") else 1.0
    den = float(m.group("den")) if m.group("den") else 1.0
    return coef * math.pi / den


def kernel_value(band: BandSpec, t):
    """Evaluate phi at offsets ``t`` (scalar or array, in sample intervals)."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w0, w1 = band.omega0, band.omega1
    small = np.abs(t) < _TAYLOR_RADIUS
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (np.sin(w1 * t) - np.sin(w0 * t)) / (np.pi * t)
    if small.any():
        ts = t[small]
        # second-order expansion avoids 0/0 and cancellation near the peak
        out[small] = band.peak - (w1**3 - w0**3) * ts * ts / (6 * np.pi)
    return float(out[0]) if scalar else out


def cross_matrix(band: BandSpec, queries, nodes) -> np.ndarray:
    """Matrix ``E[k, n] = phi(q_k - t_n)``."""
    q = np.asarray(queries, dtype=float).reshape(-1)
    t = np.asarray(nodes, dtype=float).reshape(-1)
    return kernel_value(band, q[:, None] - t[None, :])


def gram_matrix(band: BandSpec, locations) -> np.ndarray:
    """Gram matrix ``R[m, n] = phi(t_m - t_n)`` for distinct locations."""
    t = np.asarray(locations, dtype=float).reshape(-1)
    check_distinct(t)
    R = cross_matrix(band, t, t)
    # exact symmetry; the sine difference is evaluated once per pair
    return np.triu(R) + np.triu(R, 1).T


def check_distinct(locations: np.ndarray):
    if locations.size > 1:
        s = np.sort(locations)
        dup = np.flatnonzero(s[1:] == s[:-1])
        if dup.size:
            raise DistinctLocationsError(f"location {s[dup[0]]!r} appears more than once")
