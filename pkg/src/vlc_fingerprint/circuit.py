"""
LED equivalent-circuit model and line-of-sight channel.

The LED is a junction capacitance ``C_j`` in parallel with a series branch
made of the cladding resistance ``R_c`` and the quantum-well pair
``R_q || C_q``. Light output follows the current through ``R_q``; every
other gain in the link (amplifier, driver, optical channel, receiver,
quantum efficiency) is lumped into one real scale ``zeta``.

All public functions take angular frequency ``w = 2*pi*f`` in rad/s.
File formats and the CLI speak Hz; convert at the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the model's physical domain."""


def _positive_finite(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class CircuitParams:
    """Equivalent-circuit element values of one LED (SI units)."""

    r_c: float
    c_j: float
    r_q: float
    c_q: float

    def __post_init__(self):
        for name in ("r_c", "c_j", "r_q", "c_q"):
            _positive_finite(name, float(getattr(self, name)))

    def as_array(self) -> np.ndarray:
        return np.array([self.r_c, self.c_j, self.r_q, self.c_q], dtype=float)

    @classmethod
    def from_array(cls, values) -> "CircuitParams":
        r_c, c_j, r_q, c_q = (float(v) for v in values)
        return cls(r_c, c_j, r_q, c_q)

    def scaled(self, factors) -> "CircuitParams":
        """Element-wise multiply by ``factors`` (length 4)."""
        return CircuitParams.from_array(self.as_array() * np.asarray(factors, dtype=float))

    def denominator_coefficients(self) -> tuple[float, float]:
        """Return ``(a, b)`` with the transfer denominator ``1 - a w^2 + j b w``.

        These two numbers are everything the frequency response can reveal
        about the four element values.
        """
        a = self.r_c * self.r_q * self.c_q * self.c_j
        b = self.r_q * self.c_q + self.r_c * self.c_j + self.r_q * self.c_j
        return a, b


#: Defaults chosen to put the -3 dB corner near 2 MHz; not measured values.
NOMINAL_PARAMS = CircuitParams(r_c=5.0, c_j=500e-12, r_q=15.0, c_q=5e-9)


@dataclass(frozen=True)
class LinkScale:
    """Lumped link gain (amplifier, driver, channel, receiver, efficiency)."""

    zeta: float

    def __post_init__(self):
        _positive_finite("zeta", float(self.zeta))


UNIT_SCALE = LinkScale(1.0)


@dataclass(frozen=True)
class ChannelGeometry:
    """Line-of-sight placement of the receiver relative to the LED.

    Angles are in radians, ``d`` in metres and ``a_r`` in square metres.
    """

    d: float
    phi: float = 0.0
    psi: float = 0.0
    phi_half: float = math.pi / 3
    a_r: float = 1e-4
    g_psi: float = 1.0

    def __post_init__(self):
        _positive_finite("d", self.d)
        _positive_finite("a_r", self.a_r)
        if not (math.isfinite(self.g_psi) and self.g_psi >= 0):
            raise DomainError(f"g_psi must be >= 0, got {self.g_psi!r}")
        if not 0 < self.phi_half < math.pi / 2:
            raise DomainError(f"phi_half must lie in (0, pi/2), got {self.phi_half!r}")
        if not 0 <= self.phi < math.pi / 2:
            raise DomainError(f"phi must lie in [0, pi/2), got {self.phi!r}")
        if not 0 <= self.psi <= math.pi / 2:
            raise DomainError(f"psi must lie in [0, pi/2], got {self.psi!r}")


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing positive frequencies in Hz."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DomainError("frequency grid needs at least 2 points")
        if not np.all(np.isfinite(pts)) or pts[0] <= 0:
            raise DomainError("frequencies must be finite and positive")
        if np.any(np.diff(pts) <= 0):
            bad = int(np.argmax(np.diff(pts) <= 0)) + 1
            raise DomainError(f"frequencies must be strictly increasing (index {bad})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def logspace(cls, f_start: float = 100e3, f_stop: float = 100e6, n: int = 750) -> "FrequencyGrid":
        return cls(np.logspace(math.log10(f_start), math.log10(f_stop), n))

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.points

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, FrequencyGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


def lambertian_order(phi_half: float) -> float:
    """Lambertian order ``m = -ln 2 / ln(cos(phi_half))``."""
    if not 0 < phi_half < math.pi / 2:
        raise DomainError(f"phi_half must lie in (0, pi/2), got {phi_half!r}")
    # cos(60 deg) is 0.5000000000000001 in floating point; snap to the exact orders
    c = math.cos(phi_half)
    for exact, m in ((0.5, 1.0), (math.sqrt(0.5), 2.0)):
        if math.isclose(c, exact, rel_tol=4 * 2.2e-16, abs_tol=0.0):
            return m
    return -math.log(2) / math.log(c)


def channel_gain(geom: ChannelGeometry) -> float:
    """DC gain of the line-of-sight optical channel.

    ``(m+1) A_r / (2 pi d^2) * cos^m(phi) * g(psi) * cos(psi)``
    """
    m = lambertian_order(geom.phi_half)
    # cos(pi/2) evaluates to 6e-17, not zero
    if geom.psi == math.pi / 2 or geom.g_psi == 0:
        return 0.0
    gain = (m + 1) * geom.a_r / (2 * math.pi * geom.d ** 2)
    return gain * math.cos(geom.phi) ** m * geom.g_psi * math.cos(geom.psi)


def led_impedance(p: CircuitParams, w):
    """Complex LED impedance at angular frequency ``w`` (scalar or array)."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DomainError("angular frequency must be >= 0")
    num = p.r_c + p.r_q + 1j * w * p.r_c * p.r_q * p.c_q
    den = (1 - w ** 2 * p.r_c * p.r_q * p.c_q * p.c_j
           + 1j * w * (p.r_q * p.c_q + p.r_c * p.c_j + p.r_q * p.c_j))
    z = num / den
    return complex(z) if z.ndim == 0 else z


def vlc_transfer(p: CircuitParams, s: LinkScale, w):
    """Complex link transfer ``zeta / (1 - a w^2 + j b w)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DomainError("angular frequency must be >= 0")
    a, b = p.denominator_coefficients()
    # scale the unit response so the result is exactly linear in zeta
    h = s.zeta * (1.0 / (1 - a * w ** 2 + 1j * b * w))
    return complex(h) if h.ndim == 0 else h


def sweep_response(p: CircuitParams, s: LinkScale, grid: FrequencyGrid) -> np.ndarray:
    """Evaluate :func:`vlc_transfer` on every grid point (Hz)."""
    return np.asarray(vlc_transfer(p, s, grid.omega), dtype=complex)


def magnitude_db(values) -> np.ndarray:
    return 20 * np.log10(np.abs(values))
