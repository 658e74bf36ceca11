"""Closed-form geometry of the Reissner-Nordström exterior.

The metric is ``g = -D dt^2 + D^{-1} dr^2 + r^2 dω^2`` with

    D(r) = 1 - 2M/r + e^2/r^2 = (r - r_+)(r - r_-)/r^2.

Everything here is a pure function of an immutable :class:`BlackHoleBackground`.
Five coordinate charts are supported and tagged by short strings:

``"t_r"``      Schwarzschild-like time and area radius (exterior only)
``"t_rstar"``  time and tortoise radius (exterior only)
``"v_r"``      ingoing Eddington-Finkelstein, ``v = t + r*`` (regular on H+)
``"u_v"``      double null, ``u = t - r*`` (exterior only)
``"tstar_r"``  horizon-penetrating slicing time ``t* = v - r``

All quantities are expressed in units where the mass is explicit; the
library uses ``M = 1`` by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

CHARTS = ("t_r", "t_rstar", "v_r", "u_v", "tstar_r")
_EXTERIOR_ONLY = {"t_r", "t_rstar", "u_v"}
_MAX_POTENTIAL_ORDER = 8


class DomainError(ValueError):
    """A geometric quantity was requested outside its domain of definition."""


@dataclass(frozen=True)
class BlackHoleBackground:
    """Mass/charge pair of a (sub)extreme Reissner-Nordström black hole.

    Parameters
    ----------
    mass:
        ADM mass ``M > 0``.
    charge:
        Charge ``e`` with ``0 <= e <= M``. ``e == M`` is the extreme case.
    """

    mass: float = 1.0
    charge: float = 1.0
    r_plus: float = field(init=False)
    r_minus: float = field(init=False)

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise DomainError("mass must be positive")
        if not 0 <= self.charge <= self.mass * (1 + 1e-15):
            raise DomainError("charge must lie in [0, mass]")
        if self.extreme:
            r_plus = r_minus = float(self.mass)
        else:
            disc = math.sqrt(self.mass**2 - self.charge**2)
            r_plus = self.mass + disc
            # Stable form of M - sqrt(M^2 - e^2) avoiding cancellation.
            r_minus = self.charge**2 / r_plus
        object.__setattr__(self, "r_plus", r_plus)
        object.__setattr__(self, "r_minus", r_minus)

    @classmethod
    def extreme_rn(cls, mass: float = 1.0) -> "BlackHoleBackground":
        """The extreme background ``e = M``."""
        return cls(mass=mass, charge=mass)

    @classmethod
    def from_ratio(cls, mass: float = 1.0, charge_ratio: float = 1.0) -> "BlackHoleBackground":
        """Build a background from ``e/M``; a ratio of exactly one is extreme."""
        if not 0 <= charge_ratio <= 1:
            raise DomainError("charge_ratio must lie in [0,1]")
        charge = mass if charge_ratio == 1 else mass * charge_ratio
        return cls(mass=mass, charge=charge)

    @property
    def extreme(self) -> bool:
        return abs(self.charge - self.mass) <= 1e-14 * self.mass


# ---------------------------------------------------------------------------
# Metric potential and derived radial functions
# ---------------------------------------------------------------------------


def _check_positive_radius(r) -> np.ndarray:
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("radius must be positive")
    return arr


def _inverse_power_derivative(r, n: int, order: int):
    """d^order/dr^order of r^{-n}."""
    coeff = 1.0
    for j in range(order):
        coeff *= -(n + j)
    return coeff * r ** (-(n + order))


def metric_potential(bg: BlackHoleBackground, r, order: int = 0):
    """Return ``d^order D / dr^order`` evaluated in closed form.

    Works on scalars and arrays. ``order`` may be 0 to 8.
    """
    if not 0 <= order <= _MAX_POTENTIAL_ORDER:
        raise DomainError(f"order must lie in [0, {_MAX_POTENTIAL_ORDER}]")
    rr = _check_positive_radius(r)
    M, e = bg.mass, bg.charge
    if order == 0 and bg.extreme:
        # (1 - M/r)^2 has an exact double root at r = M.
        value = (1.0 - M / rr) ** 2
    else:
        value = (
            -2.0 * M * _inverse_power_derivative(rr, 1, order)
            + e**2 * _inverse_power_derivative(rr, 2, order)
        )
        if order == 0:
            value = value + 1.0
    return value if np.ndim(r) else float(value)


def radial_drift(bg: BlackHoleBackground, r):
    """``R = D' + 2D/r``, the first-order radial coefficient of the wave operator."""
    rr = _check_positive_radius(r)
    value = metric_potential(bg, rr, 1) + 2.0 * metric_potential(bg, rr, 0) / rr
    return value if np.ndim(r) else float(value)


def photon_sphere(bg: BlackHoleBackground) -> float:
    """Radius ``Q`` of the photon sphere (``2M`` in the extreme case)."""
    M, e = bg.mass, bg.charge
    return 1.5 * M * (1.0 + math.sqrt(1.0 - 8.0 * e**2 / (9.0 * M**2)))


def surface_gravity(bg: BlackHoleBackground, horizon: str = "outer") -> float:
    """Surface gravity ``κ± = (r± - r∓) / (2 r±^2)``."""
    if horizon == "outer":
        return (bg.r_plus - bg.r_minus) / (2.0 * bg.r_plus**2)
    if horizon == "inner":
        if bg.charge == 0:
            raise DomainError("the inner horizon does not exist for e = 0")
        return (bg.r_minus - bg.r_plus) / (2.0 * bg.r_minus**2)
    raise DomainError(f"unknown horizon {horizon!r}; use 'outer' or 'inner'")


# ---------------------------------------------------------------------------
# Tortoise coordinate
# ---------------------------------------------------------------------------


def _tortoise_unshifted(bg: BlackHoleBackground, x):
    """Antiderivative of 1/D written in terms of the offset ``x = r - r_+ > 0``.

    Using the offset keeps full relative precision arbitrarily close to the
    horizon, where r* diverges.
    """
    M = bg.mass
    r = bg.r_plus + x
    if bg.extreme:
        return r + 2.0 * M * np.log(x) - M**2 / x
    kp = surface_gravity(bg, "outer")
    value = r + np.log(x / bg.r_plus) / (2.0 * kp)
    if bg.r_minus > 0:
        km = surface_gravity(bg, "inner")
        value = value + np.log((r - bg.r_minus) / bg.r_minus) / (2.0 * km)
    return value


def _tortoise_constant(bg: BlackHoleBackground) -> float:
    return -float(_tortoise_unshifted(bg, photon_sphere(bg) - bg.r_plus))


def tortoise(bg: BlackHoleBackground, r):
    """Tortoise radius ``r*(r)`` normalised so that ``r*(Q) = 0``."""
    rr = np.asarray(r, dtype=float)
    if np.any(~(rr > bg.r_plus)):
        raise DomainError("tortoise coordinate requires r > r_plus")
    value = _tortoise_unshifted(bg, rr - bg.r_plus) + _tortoise_constant(bg)
    return value if np.ndim(r) else float(value)


def _tortoise_unshifted_log(bg: BlackHoleBackground, log_x: float) -> float:
    """Same as :func:`_tortoise_unshifted` but parametrised by ``log(r - r_+)``."""
    M = bg.mass
    x = math.exp(log_x)
    r = bg.r_plus + x
    if bg.extreme:
        return r + 2.0 * M * log_x - M**2 * math.exp(-log_x)
    value = r + (log_x - math.log(bg.r_plus)) / (2.0 * surface_gravity(bg, "outer"))
    if bg.r_minus > 0:
        value += math.log((r - bg.r_minus) / bg.r_minus) / (2.0 * surface_gravity(bg, "inner"))
    return value


def _tortoise_inverse_scalar(bg: BlackHoleBackground, rstar: float, const: float) -> float:
    target = rstar - const

    def residual(log_x: float) -> float:
        return _tortoise_unshifted_log(bg, log_x) - target

    # r* is monotone in log(r - r_+); expand a bracket geometrically.
    lo, hi, step = -1.0, 1.0, 1.0
    while residual(lo) > 0:
        lo -= step
        step *= 2.0
    while residual(hi) < 0:
        hi += 1.0
    try:
        log_x = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as exc:  # pragma: no cover - monotone bracket
        raise ArithmeticError(f"tortoise inversion failed for r*={rstar}") from exc
    return bg.r_plus + math.exp(log_x)


def tortoise_inverse(bg: BlackHoleBackground, rstar):
    """Area radius ``r`` with ``r*(r) = rstar``; accepts scalars or arrays."""
    const = _tortoise_constant(bg)
    arr = np.asarray(rstar, dtype=float)
    out = np.array([_tortoise_inverse_scalar(bg, float(s), const) for s in arr.ravel()])
    return out.reshape(arr.shape) if np.ndim(rstar) else float(out[0])


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartPoint:
    """A point of the (t, r)-plane expressed in one of the supported charts."""

    chart: str
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.chart not in CHARTS:
            raise ValueError(f"unknown chart {self.chart!r}; expected one of {CHARTS}")


def _to_v_r(bg: BlackHoleBackground, p: ChartPoint) -> tuple[float, float]:
    if p.chart == "v_r":
        return p.a, p.b
    if p.chart == "tstar_r":
        return p.a + p.b, p.b
    if p.chart == "t_r":
        return p.a + tortoise(bg, p.b), p.b
    if p.chart == "t_rstar":
        return p.a + p.b, tortoise_inverse(bg, p.b)
    # u_v
    u, v = p.a, p.b
    return v, tortoise_inverse(bg, 0.5 * (v - u))


def _from_v_r(bg: BlackHoleBackground, v: float, r: float, target: str) -> ChartPoint:
    if target == "v_r":
        return ChartPoint("v_r", v, r)
    if target == "tstar_r":
        return ChartPoint("tstar_r", v - r, r)
    rstar = tortoise(bg, r)
    if target == "t_r":
        return ChartPoint("t_r", v - rstar, r)
    if target == "t_rstar":
        return ChartPoint("t_rstar", v - rstar, rstar)
    return ChartPoint("u_v", v - 2.0 * rstar, v)


def chart_convert(bg: BlackHoleBackground, p: ChartPoint, target: str) -> ChartPoint:
    """Express the point ``p`` in the chart ``target``."""
    if target not in CHARTS:
        raise ValueError(f"unknown chart {target!r}; expected one of {CHARTS}")
    if p.chart == target:
        return p
    if p.chart in ("v_r", "tstar_r", "t_r") and p.b < bg.r_plus:
        raise DomainError("point lies inside the black hole")
    if target in _EXTERIOR_ONLY and p.chart in ("v_r", "tstar_r") and p.b <= bg.r_plus:
        raise DomainError(f"a point on the horizon has no {target} coordinates")
    v, r = _to_v_r(bg, p)
    return _from_v_r(bg, v, r, target)


# ---------------------------------------------------------------------------
# Wave operator
# ---------------------------------------------------------------------------


def wave_operator_coefficients(bg: BlackHoleBackground, chart: str, r: float, l: int) -> dict[str, float]:
    """Coefficients of the mode-reduced wave operator in a given chart.

    The keys name the derivative each coefficient multiplies. For ``"u_v"``
    the operator acts on ``φ = rψ`` and is written as
    ``∂u∂v φ = coefficient["phi"] · φ`` for solutions.
    """
    lam = l * (l + 1)
    if chart in ("v_r", "tstar_r"):
        if r < bg.r_plus:
            raise DomainError("r must not lie inside the black hole")
    elif chart in _EXTERIOR_ONLY:
        if r <= bg.r_plus:
            raise DomainError(f"chart {chart} does not cover r <= r_plus")
    else:
        raise ValueError(f"unknown chart {chart!r}; expected one of {CHARTS}")
    D = metric_potential(bg, r, 0)
    dD = metric_potential(bg, r, 1)
    R = radial_drift(bg, r)
    if chart == "v_r":
        return {"psi_rr": D, "psi_vr": 2.0, "psi_v": 2.0 / r, "psi_r": R, "psi": -lam / r**2}
    if chart == "tstar_r":
        return {
            "psi_tt": D - 2.0,
            "psi_tr": 2.0 - 2.0 * D,
            "psi_rr": D,
            "psi_t": 2.0 / r - R,
            "psi_r": R,
            "psi": -lam / r**2,
        }
    if chart == "t_r":
        return {"psi_tt": -1.0 / D, "psi_rr": D, "psi_r": R, "psi": -lam / r**2}
    if chart == "t_rstar":
        return {"psi_tt": -1.0 / D, "psi_ss": 1.0 / D, "psi_s": 2.0 / r, "psi": -lam / r**2}
    return {"phi": -0.25 * D * (dD / r + lam / r**2)}


# ---------------------------------------------------------------------------
# Geometry of the constant-t* slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceGeometry:
    """Induced geometry of the slices ``{t* = const}`` at radii ``r``.

    With ``t* = v - r`` the induced radial metric is ``(2 - D) dr^2`` and
    the future unit normal has (v, r) components
    ``n^v = 1/sqrt(2-D)``, ``n^r = -(1-D)/sqrt(2-D)``.
    """

    r: np.ndarray
    h_rr: np.ndarray
    volume: np.ndarray
    n_v: np.ndarray
    n_r: np.ndarray
    foliation: str = "tstar"

    @classmethod
    def at(cls, bg: BlackHoleBackground, r) -> "SliceGeometry":
        rr = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(rr < bg.r_plus):
            raise DomainError("slices are only described for r >= r_plus")
        D = metric_potential(bg, rr, 0)
        h = 2.0 - D
        vol = np.sqrt(h)
        return cls(r=rr, h_rr=h, volume=vol, n_v=1.0 / vol, n_r=-(1.0 - D) / vol)

    def normal_norm(self, bg: BlackHoleBackground) -> np.ndarray:
        """``g(n, n)`` in the (v, r) chart; equals -1 identically."""
        D = metric_potential(bg, self.r, 0)
        return -D * self.n_v**2 + 2.0 * self.n_v * self.n_r


def vr_metric(bg: BlackHoleBackground, r):
    """Components ``(g_vv, g_vr, g_rr)`` of the (v, r) block of the metric."""
    D = metric_potential(bg, r, 0)
    return -D, 1.0, 0.0


def vr_inverse_metric(bg: BlackHoleBackground, r):
    """Components ``(g^vv, g^vr, g^rr)`` of the inverse (v, r) block."""
    D = metric_potential(bg, r, 0)
    return 0.0, 1.0, D
