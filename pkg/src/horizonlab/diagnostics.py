"""Post-processing of evolution output: conserved charges, rates and inequalities.

Everything here is a pure function of arrays already produced by
:mod:`horizonlab.evolution`; nothing re-runs an evolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .currents import flux_through_slice
from .evolution import EvolutionResult, HorizonTrace, ModeField
from .geometry import BlackHoleBackground
from .horizon_calculus import ConservationLaw

LATE_WINDOW = (0.5, 0.9)
DRIFT_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# Series and fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HorizonSeries:
    """A scalar sampled along the horizon at increasing times ``t*``."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)

    @classmethod
    def from_trace(cls, trace: HorizonTrace, k: int) -> "HorizonSeries":
        """``∂_r^k|_v ψ(t*, r_+)`` from an evolution trace."""
        return cls(trace.times, trace.derivative(k), f"d^{k}psi/dr^{k}")

    def window(self, t1: float, t2: float) -> "HorizonSeries":
        keep = (self.times >= t1) & (self.times <= t2)
        return HorizonSeries(self.times[keep], self.values[keep], self.label)

    def late_window(self) -> tuple[float, float]:
        return late_window(float(self.times[-1]))

    def __len__(self) -> int:
        return len(self.times)


def late_window(t_final: float) -> tuple[float, float]:
    """The fit window ``[0.5 t_final, 0.9 t_final]``."""
    return LATE_WINDOW[0] * t_final, LATE_WINDOW[1] * t_final


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log|y| = intercept + exponent · log t*`` over ``window``.

    If the values change sign inside the window, ``segments`` holds a fit
    per constant-sign run and the top-level numbers describe ``|y|`` over the
    whole window.
    """

    window: tuple[float, float]
    exponent: float
    intercept: float
    residual: float
    segments: tuple = field(default=())

    def __call__(self, t):
        return np.exp(self.intercept) * np.asarray(t, dtype=float) ** self.exponent

    @property
    def sign_changes(self) -> int:
        return max(len(self.segments) - 1, 0)


def _loglog_fit(t: np.ndarray, y: np.ndarray, window) -> RateFit:
    x, z = np.log(t), np.log(np.abs(y))
    if len(x) < 2:
        raise ValueError("need at least two points to fit a power law")
    A = np.vstack([x, np.ones_like(x)]).T
    (p, c), *_ = np.linalg.lstsq(A, z, rcond=None)
    res = float(np.sqrt(np.mean((A @ np.array([p, c]) - z) ** 2)))
    return RateFit((float(window[0]), float(window[1])), float(p), float(c), res)


def fit_power_law(series: HorizonSeries, window: tuple[float, float] | None = None) -> RateFit:
    """Fit ``|value| ~ t*^p`` over ``window`` (default: the late window)."""
    window = series.late_window() if window is None else window
    t1, t2 = window
    if t1 <= 0 or t2 <= t1:
        raise ValueError("window must satisfy 0 < t1 < t2")
    if t1 < series.times[0] - 1e-12 or t2 > series.times[-1] + 1e-12:
        raise ValueError("window lies outside the series")
    w = series.window(t1, t2)
    nonzero = w.values != 0
    t, y = w.times[nonzero], w.values[nonzero]
    if len(t) < 2:
        raise ValueError("the series vanishes on the window")
    overall = _loglog_fit(t, y, window)
    sign = np.sign(y)
    breaks = np.flatnonzero(sign[1:] != sign[:-1]) + 1
    if len(breaks) == 0:
        return overall
    segments = []
    for part_t, part_y in zip(np.split(t, breaks), np.split(y, breaks)):
        if len(part_t) >= 2:
            segments.append(_loglog_fit(part_t, part_y, (part_t[0], part_t[-1])))
    return RateFit(overall.window, overall.exponent, overall.intercept, overall.residual, tuple(segments))


def observed_order(spacings, errors) -> tuple[float, np.ndarray]:
    """Convergence order from errors on a refinement sequence.

    Returns the least-squares slope of ``log error`` against ``log h`` and
    the pairwise orders between successive grids.
    """
    h = np.asarray(spacings, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    if len(h) < 2 or np.any(e <= 0):
        raise ValueError("need at least two non-zero errors")
    pairwise = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return slope, pairwise


# ---------------------------------------------------------------------------
# Horizon charges and rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AretakisSeries(HorizonSeries):
    """``H_l(t*)`` along the horizon together with its drift."""

    floor: float = DRIFT_FLOOR

    @property
    def initial(self) -> float:
        return float(self.values[0])

    @property
    def relative_drift(self) -> np.ndarray:
        """``|H(t) - H(0)| / max(|H(0)|, floor)``."""
        return np.abs(self.values - self.values[0]) / max(abs(self.values[0]), self.floor)

    @property
    def max_drift(self) -> float:
        return float(np.max(self.relative_drift))


def aretakis_series(
    trace: HorizonTrace,
    law: ConservationLaw,
    mass: float = 1.0,
    amplitude: float = 1.0,
) -> AretakisSeries:
    """Evaluate ``H_l`` on every recorded time of ``trace``."""
    if trace.order < law.l + 1:
        raise ValueError(f"H_{law.l} needs the trace to hold derivatives up to order {law.l + 1}")
    values = law.evaluate([trace.derivative(i) for i in range(law.l + 2)], mass)
    return AretakisSeries(trace.times, np.asarray(values, dtype=float), f"H_{law.l}", DRIFT_FLOOR * amplitude)


def pseudo_aretakis_series(bg: BlackHoleBackground, trace: HorizonTrace) -> HorizonSeries:
    """``∂_rψ + ψ/M`` on ``r = r_+``: the extreme ``l = 0`` charge evaluated off extremality."""
    values = trace.derivative(1) + trace.derivative(0) / bg.mass
    return HorizonSeries(trace.times, values, "pseudo_H_0")


def is_generic(law: ConservationLaw, trace: HorizonTrace, amplitude: float = 1.0, mass: float = 1.0) -> bool:
    """Data count as generic when ``|H_l(0)| ≥ 1e-8 · amplitude``."""
    h0 = law.evaluate([trace.radial[0, i] for i in range(law.l + 2)], mass)
    return abs(float(h0)) >= 1e-8 * abs(amplitude)


def expected_blowup_exponent(l: int, k: int) -> int:
    """Late-time growth exponent ``k - l - 1`` of ``∂_r^k ψ`` on an extreme horizon."""
    return k - l - 1


def blowup_slope(trace: HorizonTrace, l: int, k: int, window: tuple[float, float] | None = None) -> RateFit:
    """Log-log slope of ``|∂_r^k ψ(t*, r_+)|`` over the late window."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > trace.order:
        raise ValueError(f"trace holds derivatives up to order {trace.order}, not {k}")
    return fit_power_law(HorizonSeries.from_trace(trace, k), window)


# ---------------------------------------------------------------------------
# Functional inequalities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InequalityCheck:
    """Both sides of an inequality ``lhs ≤ rhs`` and their ratio (0 when both vanish)."""

    name: str
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return 0.0 if self.lhs == 0 else float("inf")
        return self.lhs / self.rhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)


def _slice_arrays(data):
    if isinstance(data, ModeField):
        return data.grid.r, data.psi, data.phi_r
    r, psi, dpsi = (np.asarray(a, dtype=float) for a in data)
    return r, psi, dpsi


def hardy_check(
    bg: BlackHoleBackground,
    data,
    which: str = "first",
    *,
    r0: float | None = None,
    r1: float | None = None,
    epsilon: float = 1.0,
) -> InequalityCheck:
    """One-dimensional Hardy inequalities along a slice, with explicit constants.

    ``data`` is a :class:`ModeField` or a tuple ``(ρ, ψ, ∂_ρψ)``; ``ρ = r``
    on the ``t*`` slices.

    * ``first``: ``∫ψ² dρ ≤ 4 ∫(ρ - r_+)² (∂_ρψ)² dρ`` over the whole slice.
    * ``second``: ``(r0 - r_+) ψ(r_+)² ≤ ε∫(∂_ρψ)² + ∫(1 + (ρ - r0)²/ε) ψ²`` on ``[r_+, r0]``.
    * ``third``: ``∫_A ψ² ≤ ∫_B (1 - h') ψ² + ∫_{A∪B} h² (∂_ρψ)²`` with
      ``A = [r_+, r0]``, ``B = [r0, r1]``, ``h = 2(ρ - r_+)`` on ``A`` and
      linear down to ``h(r1) = 0`` on ``B``.
    """
    r, psi, dpsi = _slice_arrays(data)
    rp = bg.r_plus
    if which == "first":
        scale = np.max(np.abs(psi)) if len(psi) else 0.0
        if scale > 0 and abs(psi[-1]) > 1e-6 * scale:
            warnings.warn("data do not decay at the outer end; the boundary term is not negligible", stacklevel=2)
        lhs = np.trapezoid(psi**2, r)
        rhs = 4.0 * np.trapezoid((r - rp) ** 2 * dpsi**2, r)
        return InequalityCheck("hardy_first", float(lhs), float(rhs))
    if which == "second":
        r0 = 1.5 * bg.mass if r0 is None else r0
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        keep = r <= r0 + 1e-12
        rr, p, dp = r[keep], psi[keep], dpsi[keep]
        lhs = (r0 - rp) * psi[0] ** 2
        rhs = epsilon * np.trapezoid(dp**2, rr) + np.trapezoid((1.0 + (rr - r0) ** 2 / epsilon) * p**2, rr)
        return InequalityCheck("hardy_second", float(lhs), float(rhs))
    if which == "third":
        r0 = 9 * bg.mass / 8 if r0 is None else r0
        r1 = 5 * bg.mass / 4 if r1 is None else r1
        if not rp < r0 < r1:
            raise ValueError("need r_+ < r0 < r1")
        inA, inAB = r <= r0 + 1e-12, r <= r1 + 1e-12
        slope = -2.0 * (r0 - rp) / (r1 - r0)
        h = np.where(r <= r0, 2.0 * (r - rp), 2.0 * (r0 - rp) + slope * (r - r0))
        inB = inAB & (r >= r0 - 1e-12)
        lhs = np.trapezoid(psi[inA] ** 2, r[inA])
        rhs = np.trapezoid((1.0 - slope) * psi[inB] ** 2, r[inB]) + np.trapezoid(h[inAB] ** 2 * dpsi[inAB] ** 2, r[inAB])
        return InequalityCheck("hardy_third", float(lhs), float(rhs))
    raise ValueError("which must be 'first', 'second' or 'third'")


@dataclass(frozen=True)
class PoincareCheck:
    """Pointwise sides ``L(L+1)/r² Σψ_l²`` and ``Σ l(l+1)/r² ψ_l²``."""

    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def max_relative_gap(self) -> float:
        scale = np.maximum(np.abs(self.rhs), np.finfo(float).tiny)
        gap = np.where(self.rhs == 0, np.abs(self.lhs), np.abs(self.rhs - self.lhs) / scale)
        return float(np.max(gap)) if gap.size else 0.0

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1 + 1e-12)))


def poincare_check(modes, L: int, r: np.ndarray | None = None) -> PoincareCheck:
    """Spherical Poincaré inequality for data supported on ``l ≥ L``.

    ``modes`` is a :class:`ModeField` or a mapping ``{l: ψ_l samples}``
    (then ``r`` is required). With orthonormal harmonics the angular
    integrals reduce to ``Σ ψ_l²`` and ``Σ l(l+1) ψ_l²``.
    """
    if isinstance(modes, ModeField):
        r = modes.grid.r
        modes = {modes.l: modes.psi}
    if r is None:
        raise ValueError("radii are needed when modes are given as a mapping")
    r = np.asarray(r, dtype=float)
    lhs = np.zeros_like(r)
    rhs = np.zeros_like(r)
    for l, psi in modes.items():
        psi = np.asarray(psi, dtype=float)
        if l < L and np.any(psi != 0):
            raise ValueError(f"mode l = {l} < L = {L} is present")
        lhs += L * (L + 1) / r**2 * psi**2
        rhs += l * (l + 1) / r**2 * psi**2
    return PoincareCheck(lhs, rhs)


# ---------------------------------------------------------------------------
# Energies along a run
# ---------------------------------------------------------------------------


def energy_timeseries(
    bg: BlackHoleBackground,
    result: EvolutionResult,
    V,
    region: tuple[float, float] | None = None,
    window: tuple[float, float] | None = None,
) -> tuple[HorizonSeries, RateFit | None]:
    """Flux of ``V`` through every stored slice, and a late-window fit.

    The fit is ``None`` when the series vanishes identically or the window
    holds fewer than two snapshots.
    """
    times = np.array([s.time for s in result.snapshots])
    values = np.array([flux_through_slice(bg, V, s, region).value for s in result.snapshots])
    series = HorizonSeries(times, values, f"{V.name}-energy")
    if not np.any(values != 0) or times[-1] <= 0:
        return series, None
    try:
        fit = fit_power_law(series, window)
    except ValueError:
        fit = None
    return series, fit
