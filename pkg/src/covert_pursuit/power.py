"""Physical power models for a solar-powered rotary-wing UAV.

Propulsion (horizontal flight), thrust (vertical flight), harvested solar
power, and a linear under-estimator of the solar curve used inside the
convex subproblems.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Barometric altitude factor of the solar attenuation model (1/m).
ALTITUDE_FACTOR = 2.2556e-5
ALTITUDE_EXPONENT = 5.2561
SOLAR_Z_MAX = 1.0 / ALTITUDE_FACTOR


class DomainError(ValueError):
    """Argument outside the domain of a physical model."""


@dataclass(frozen=True)
class PropulsionParams:
    p0: float = 3.4  # blade profile power, W
    p1: float = 118.0  # induced power, W
    u_tip: float = 60.0  # m/s
    v0: float = 5.4  # mean rotor induced velocity, m/s
    d_f: float = 0.3
    rho: float = 1.225  # kg/m^3
    s: float = 0.03
    a_disc: float = 0.28  # m^2

    def __post_init__(self):
        for name in ("p0", "p1", "u_tip", "v0", "d_f", "rho", "s", "a_disc"):
            if not getattr(self, name) > 0:
                raise DomainError(f"PropulsionParams.{name} must be > 0")

    @property
    def drag_coeff(self) -> float:
        """Coefficient of v^3 in the propulsion model."""
        return 0.5 * self.d_f * self.rho * self.s * self.a_disc


@dataclass(frozen=True)
class ThrustParams:
    mass: float = 4.0  # kg
    g: float = 9.8  # m/s^2

    def __post_init__(self):
        if not self.mass > 0 or not self.g > 0:
            raise DomainError("ThrustParams: mass and g must be > 0")

    @property
    def weight_force(self) -> float:
        return self.mass * self.g


@dataclass(frozen=True)
class SolarParams:
    eta: float = 0.4
    s_panel: float = 0.5  # m^2
    p_i: float = 1367.0  # W/m^2
    alpha: float = 0.8978
    cos_zenith: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise DomainError("SolarParams.eta must lie in (0, 1)")
        if not self.alpha > 0:
            raise DomainError("SolarParams.alpha must be > 0")
        if not 0 < self.cos_zenith <= 1:
            raise DomainError("SolarParams.cos_zenith must lie in (0, 1]")
        if not self.s_panel > 0 or not self.p_i > 0:
            raise DomainError("SolarParams: panel size and intensity must be > 0")


@dataclass(frozen=True)
class SolarLinearApprox:
    """Line c1*z + c2 standing in for the solar curve on ``z_band``."""

    c1: float
    c2: float
    z_band: tuple[float, float]
    audited: bool = True

    def __call__(self, z):
        return self.c1 * np.asarray(z, dtype=float) + self.c2


def propulsion_power_exact(v_h, p: PropulsionParams):
    """Propulsion power (W) of horizontal flight at speed ``v_h`` (m/s).

    Accepts scalars or arrays.
    """
    v = np.asarray(v_h, dtype=float)
    if np.any(v < 0) or np.any(~np.isfinite(v)):
        raise DomainError("horizontal speed must be finite and >= 0")
    v2 = v * v
    blade = p.p0 * (1.0 + 3.0 * v2 / p.u_tip**2)
    induced = p.p1 * induced_factor(v, p.v0)
    parasite = p.drag_coeff * v2 * v
    out = blade + induced + parasite
    return float(out) if out.ndim == 0 else out


def induced_factor(v_h, v0: float):
    """(sqrt(1 + v^4/4v0^4) - v^2/2v0^2)^(1/2), evaluated without cancellation."""
    r = np.asarray(v_h, dtype=float) ** 2 / v0**2
    # sqrt(r^2/4 + 1) - r/2 == 1 / (sqrt(r^2/4 + 1) + r/2)
    inner = 1.0 / (np.sqrt(0.25 * r * r + 1.0) + 0.5 * r)
    return np.sqrt(inner)


def solve_q_exact(v_h, v0: float):
    """Positive root q of 1/q^2 = q^2 + v_h^2/v0^2."""
    v = np.asarray(v_h, dtype=float)
    if np.any(v < 0):
        raise DomainError("horizontal speed must be >= 0")
    if not v0 > 0:
        raise DomainError("v0 must be > 0")
    q = induced_factor(v, v0)
    return float(q) if q.ndim == 0 else q


def thrust_power(z_curr, z_prev, tp: ThrustParams, delta: float):
    """Vertical-flight power W*(z_curr - z_prev)/delta; negative on descent."""
    if not delta > 0:
        raise DomainError("slot duration must be > 0")
    dz = np.asarray(z_curr, dtype=float) - np.asarray(z_prev, dtype=float)
    out = tp.weight_force * dz / delta
    return float(out) if out.ndim == 0 else out


def solar_power_exact(z, sp: SolarParams):
    """Harvested solar power (W) at altitude ``z`` (m)."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(z >= SOLAR_Z_MAX):
        raise DomainError(f"altitude must lie in [0, {SOLAR_Z_MAX:.1f}) m")
    base = 1.0 - ALTITUDE_FACTOR * z
    out = sp.eta * sp.s_panel * sp.p_i * np.exp(
        -(sp.alpha / sp.cos_zenith) * base**ALTITUDE_EXPONENT
    )
    return float(out) if out.ndim == 0 else out


def fit_solar_linear(
    sp: SolarParams, z_band, n_samples: int = 201, audit_points: int = 10_001
) -> SolarLinearApprox:
    """Least-squares line through the solar curve on ``z_band``, shifted down
    until it under-estimates the curve on a dense audit grid."""
    lo, hi = float(z_band[0]), float(z_band[1])
    if not hi > lo:
        raise DomainError("solar fit band must have positive width")
    if n_samples < 2:
        raise DomainError("need at least two samples to fit a line")
    zs = np.linspace(lo, hi, n_samples)
    c1, c2 = np.polyfit(zs, solar_power_exact(zs, sp), 1)
    grid = np.linspace(lo, hi, max(audit_points, n_samples))
    excess = np.max(c1 * grid + c2 - solar_power_exact(grid, sp))
    # extra ulp-scale margin keeps the audit strict after rounding
    c2 -= max(excess, 0.0) + 1e-12 * abs(c2)
    return SolarLinearApprox(float(c1), float(c2), (lo, hi), audited=True)


def solar_approx_from_constants(c1: float, c2: float, sp: SolarParams, z_band) -> SolarLinearApprox:
    """Use externally supplied coefficients without enforcing the lower bound.

    A warning is emitted when the line exceeds the exact curve on the band.
    """
    lo, hi = float(z_band[0]), float(z_band[1])
    grid = np.linspace(lo, hi, 1001)
    gap = np.max(c1 * grid + c2 - solar_power_exact(grid, sp))
    if gap > 0:
        warnings.warn(
            f"solar coefficients c1={c1}, c2={c2} exceed the exact solar power by up to "
            f"{gap:.3f} W on [{lo}, {hi}] m; lower-bound audit skipped",
            stacklevel=2,
        )
    return SolarLinearApprox(float(c1), float(c2), (lo, hi), audited=False)


def solar_lower_bound_gap(approx: SolarLinearApprox, sp: SolarParams, n: int = 10_001):
    """Return (max of line - exact, max relative gap |line - exact|/exact) on the band."""
    grid = np.linspace(approx.z_band[0], approx.z_band[1], n)
    exact = solar_power_exact(grid, sp)
    diff = approx(grid) - exact
    return float(diff.max()), float(np.max(np.abs(diff) / exact))


def hover_power(p: PropulsionParams) -> float:
    return p.p0 + p.p1
