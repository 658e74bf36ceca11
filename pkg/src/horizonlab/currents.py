"""Energy currents, multiplier vector fields and their bulk and flux terms.

For a multiplier ``V = f_v(r) ∂_v + f_r(r) ∂_r`` the energy current is
``J^V_μ = T_μν V^ν`` with ``T_μν = ∂_μψ ∂_νψ - ½ g_μν ∇ψ·∇ψ``, and its
divergence for a solution of the wave equation is the bulk term
``K^V = T_μν (∇^μ V)^ν``. In the (v, r) chart

    K^V = C_vv ψ_v² + C_vr ψ_v ψ_r + C_rr ψ_r² + C_ang |∇̸ψ|²

with ``C_vv = f_v'``, ``C_vr = D f_v' - 2 f_r / r``,
``C_rr = D (f_r'/2 - f_r/r) - f_r D'/2`` and ``C_ang = -f_r'/2``.

Modified currents ``J + g ψ∇ψ + h ψ² ∇w`` (``g``, ``h``, ``w`` radial) add

    g ∇ψ·∇ψ + (∇g + 2h∇w)·ψ∇ψ + (∇h·∇w + h □w) ψ²

to the bulk term, where ``∇ψ·∇ψ = 2ψ_vψ_r + Dψ_r² + |∇̸ψ|²``,
``∇F·∇ψ = F'(ψ_v + Dψ_r)`` and ``□w = (r² D w')'/r²``. Since
``∇w = w' ∂_{r*}``, the second-kind modification ``Div(F ψ² ∂_{r*})`` is
the special case ``h = 1``, ``w' = F``.

All radial profiles are sympy expressions in ``r``; derivatives are exact
and compiled to numpy once per multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from .evolution import HorizonTrace, ModeField, transversal_matrices
from .geometry import (
    BlackHoleBackground,
    DomainError,
    SliceGeometry,
    metric_potential,
    photon_sphere,
    radial_drift,
    surface_gravity,
    _tortoise_constant,
)

R = sp.Symbol("r", positive=True)

MULTIPLIERS = ("T", "N", "P", "X_alpha", "X_d", "X_0", "L_k")
MODIFICATIONS = ("none", "first_kind", "second_kind", "redshift_mod", "lagrangian")


# ---------------------------------------------------------------------------
# Symbolic building blocks
# ---------------------------------------------------------------------------


def smoothstep(z):
    """Quintic ``C²`` step: 0 for ``z ≤ 0``, 1 for ``z ≥ 1``."""
    return z**3 * (10 - 15 * z + 6 * z**2)


def blend(inner, outer, a: float, b: float):
    """Piecewise profile equal to ``inner`` on ``r ≤ a`` and ``outer`` on ``r ≥ b``.

    On ``[a, b]`` the two are joined by a quintic smoothstep, so the result is
    ``C²`` whenever ``inner`` and ``outer`` are smooth.
    """
    s = smoothstep((R - a) / (b - a))
    return sp.Piecewise((inner, R <= a), (inner + s * (outer - inner), R < b), (outer, True))


def metric_potential_expr(bg: BlackHoleBackground):
    """``D(r)`` as a sympy expression."""
    if bg.extreme:
        return (1 - bg.mass / R) ** 2
    return 1 - 2 * bg.mass / R + bg.charge**2 / R**2


def sqrt_potential_expr(bg: BlackHoleBackground):
    """``√D`` as a sympy expression (a polynomial in ``1/r`` when extreme)."""
    if bg.extreme:
        return 1 - bg.mass / R
    return sp.sqrt(metric_potential_expr(bg))


def tortoise_expr(bg: BlackHoleBackground):
    """``r*(r)`` as a sympy expression, normalised like :func:`geometry.tortoise`."""
    M, rp = bg.mass, bg.r_plus
    if bg.extreme:
        base = R + 2 * M * sp.log(R - M) - M**2 / (R - M)
    else:
        base = R + sp.log((R - rp) / rp) / (2 * surface_gravity(bg, "outer"))
        if bg.r_minus > 0:
            rm = bg.r_minus
            base += sp.log((R - rm) / rm) / (2 * surface_gravity(bg, "inner"))
    return base + _tortoise_constant(bg)


def _compile(expr):
    fn = sp.lambdify(R, expr, modules="numpy")

    def evaluate(r: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = fn(r)
        return np.broadcast_to(np.asarray(out, dtype=float), r.shape).copy()

    return evaluate


# ---------------------------------------------------------------------------
# Multiplier fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Modification:
    """Lower-order terms ``g ψ∇ψ + h ψ² ∇w`` added to ``J^V`` (``dw = w'``)."""

    kind: str = "none"
    g: object = sp.Integer(0)
    h: object = sp.Integer(0)
    dw: object = sp.Integer(0)

    def __post_init__(self) -> None:
        if self.kind not in MODIFICATIONS:
            raise ValueError(f"modification must be one of {MODIFICATIONS}")


@dataclass(frozen=True)
class MultiplierField:
    """``V = f_v(r) ∂_v + f_r(r) ∂_r`` with an optional current modification.

    ``region`` is the r-interval where the profiles are defined; an open
    lower end (``lower_open``) is used for fields built from ``r*``.
    ``params`` records the constants the construction depends on.
    """

    name: str
    background: BlackHoleBackground
    f_v: object
    f_r: object
    region: tuple[float, float]
    modification: Modification = field(default_factory=Modification)
    lower_open: bool = False
    params: dict = field(default_factory=dict, compare=False)

    @cached_property
    def _fns(self) -> dict:
        mod = self.modification
        exprs = {
            "f_v": self.f_v,
            "df_v": sp.diff(self.f_v, R),
            "f_r": self.f_r,
            "df_r": sp.diff(self.f_r, R),
            "g": mod.g,
            "dg": sp.diff(mod.g, R),
            "h": mod.h,
            "dh": sp.diff(mod.h, R),
            "dw": mod.dw,
            "ddw": sp.diff(mod.dw, R),
        }
        return {key: _compile(sp.sympify(e)) for key, e in exprs.items()}

    def check_region(self, r) -> np.ndarray:
        rr = np.atleast_1d(np.asarray(r, dtype=float))
        lo, hi = self.region
        below = rr <= lo if self.lower_open else rr < lo * (1 - 1e-14)
        if np.any(below) or np.any(rr > hi):
            bracket = "(" if self.lower_open else "["
            raise DomainError(f"{self.name} is defined on {bracket}{lo:g}, {hi:g}]")
        return rr

    def evaluate(self, key: str, r) -> np.ndarray:
        """Profile ``key`` (``f_v``, ``df_v``, ``f_r``, ``df_r``, ``g``, ...) at ``r``."""
        return self._fns[key](self.check_region(r))

    def components(self, r) -> tuple[np.ndarray, np.ndarray]:
        """``(f_v, f_r)`` at ``r``."""
        return self.evaluate("f_v", r), self.evaluate("f_r", r)

    def norm(self, r) -> np.ndarray:
        """``g(V, V) = -D f_v² + 2 f_v f_r``."""
        f_v, f_r = self.components(r)
        D = metric_potential(self.background, self.check_region(r), 0)
        return -D * f_v**2 + 2.0 * f_v * f_r

    def is_causal(self, r, tol: float = 1e-12) -> np.ndarray:
        """Pointwise ``g(V, V) ≤ 0`` (up to ``tol`` relative to ``f_v²``)."""
        f_v, _ = self.components(r)
        return self.norm(r) <= tol * np.maximum(f_v**2, 1.0)

    def omega(self, r) -> np.ndarray:
        """``ω_V = -g(V, V) / (2 (V^v)²)``; requires ``V^v > 0``."""
        f_v, _ = self.components(r)
        if np.any(f_v <= 0):
            raise DomainError("ω_V needs V^v > 0")
        return -self.norm(r) / (2.0 * f_v**2)


def _field(bg, name, f_v, f_r, region, modification=None, lower_open=False, **params) -> MultiplierField:
    return MultiplierField(
        name=name,
        background=bg,
        f_v=sp.sympify(f_v),
        f_r=sp.sympify(f_r),
        region=region,
        modification=modification or Modification(),
        lower_open=lower_open,
        params=params,
    )


def killing_T(bg: BlackHoleBackground) -> MultiplierField:
    """The stationary Killing field ``T = ∂_v``."""
    return _field(bg, "T", 1, 0, (bg.r_plus, math.inf))


def redshift_cutoff(bg: BlackHoleBackground, r0: float | None = None, r1: float | None = None):
    """Cut-off ``δ``: 1 on ``[M, r0]``, 0 for ``r ≥ r1`` (defaults ``9M/8``, ``8M/7``)."""
    M = bg.mass
    r0 = 9 * M / 8 if r0 is None else r0
    r1 = 8 * M / 7 if r1 is None else r1
    return blend(sp.Integer(1), sp.Integer(0), r0, r1)


def redshift_N(bg: BlackHoleBackground, modified: bool = False, h: float = -0.5) -> MultiplierField:
    """Red-shift multiplier ``N``.

    ``(f_v, f_r) = (16r, -3r/2 + M)`` on ``[M, 9M/8]``, joined smoothly to
    ``(1, 0)`` for ``r ≥ 8M/7``. With ``modified=True`` the current is
    ``J^N + h δ ψ∇ψ`` (default ``h = -1/2``) with the cut-off ``δ``.
    """
    M = bg.mass
    r0, r1 = 9 * M / 8, 8 * M / 7
    f_v = blend(16 * R, sp.Integer(1), r0, r1)
    f_r = blend(-sp.Rational(3, 2) * R + M, sp.Integer(0), r0, r1)
    mod = Modification("redshift_mod", g=sp.nsimplify(h) * redshift_cutoff(bg, r0, r1)) if modified else None
    name = "N,delta,h" if modified else "N"
    return _field(bg, name, f_v, f_r, (bg.r_plus, math.inf), mod, r0=r0, r1=r1, h=h if modified else None)


def degenerate_P(bg: BlackHoleBackground, r0: float | None = None, r1: float | None = None) -> MultiplierField:
    """Multiplier ``P`` with ``f_r = -√D`` near the horizon.

    On ``[M, r0]``: ``f_v = 16r``, ``f_r = -√D``; joined to ``(1, 0)`` on
    ``[r0, r1]`` (defaults ``9M/8``, ``8M/7``). ``P`` is timelike off the
    horizon and null on it.
    """
    M = bg.mass
    r0 = 9 * M / 8 if r0 is None else r0
    r1 = 8 * M / 7 if r1 is None else r1
    f_v = blend(16 * R, sp.Integer(1), r0, r1)
    f_r = blend(-sqrt_potential_expr(bg), sp.Integer(0), r0, r1)
    return _field(bg, "P", f_v, f_r, (bg.r_plus, math.inf), lower_open=not bg.extreme, r0=r0, r1=r1)


def _radial_multiplier(bg, name, f, modification_kind, beta=None, **params) -> MultiplierField:
    """``X = f ∂_{r*} = f ∂_v + f D ∂_r`` with an optional modification.

    First kind: ``J + 2G ψ∇ψ - ψ² ∇G`` with ``G = f'/4 + f D/(2r)`` (primes
    are ``r*`` derivatives), which removes the ``ψ∇ψ`` bulk term. Second
    kind adds ``Div((f'/D) β ψ² ∂_{r*})``.
    """
    D = metric_potential_expr(bg)
    f_prime = D * sp.diff(f, R)
    G = f_prime / 4 + f * D / (2 * R)
    if modification_kind == "none":
        mod = None
    elif modification_kind == "first_kind":
        mod = Modification("first_kind", g=2 * G, h=sp.Integer(1), dw=-sp.diff(G, R))
    elif modification_kind == "second_kind":
        if beta is None:
            raise ValueError(f"{name} has no second-kind profile β")
        mod = Modification("second_kind", g=2 * G, h=sp.Integer(1), dw=-sp.diff(G, R) + sp.diff(f, R) * beta)
    else:
        raise ValueError(f"{name} supports modifications none, first_kind, second_kind")
    return _field(bg, name, f, f * D, (bg.r_plus, math.inf), mod, lower_open=True, **params)


def morawetz_X_alpha(bg: BlackHoleBackground, alpha: float, modification: str = "second_kind") -> MultiplierField:
    """``X^α = f^α ∂_{r*}`` with ``(f^α)' = 1/(α² + x²)``, ``x = r* - α - √α``.

    ``f^α = (arctan(x/α) - arctan(x₀/α))/α`` with ``x₀ = -α - √α`` so that
    ``f^α`` vanishes at ``r* = 0``. The second-kind modification uses
    ``β = D/r - x/(α² + x²)``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a = sp.nsimplify(alpha)
    x = tortoise_expr(bg) - a - sp.sqrt(a)
    x0 = -a - sp.sqrt(a)
    f = (sp.atan(x / a) - sp.atan(x0 / a)) / a
    beta = metric_potential_expr(bg) / R - x / (a**2 + x**2)
    return _radial_multiplier(bg, "X_alpha", f, modification, beta=beta, alpha=alpha)


def morawetz_X_d(bg: BlackHoleBackground, modification: str = "first_kind") -> MultiplierField:
    """``X^d = f^d ∂_{r*}`` with ``(f^d)' = 1/(r*² + 1)``, ``f^d(0) = 0``: ``f^d = arctan r*``."""
    return _radial_multiplier(bg, "X_d", sp.atan(tortoise_expr(bg)), modification)


def morawetz_X_0(bg: BlackHoleBackground) -> MultiplierField:
    """``X⁰ = -r⁻³ ∂_{r*}`` for spherically symmetric waves."""
    return _radial_multiplier(bg, "X_0", -1 / R**3, "none")


def second_order_L(bg: BlackHoleBackground, k: int = 1, r0: float | None = None, r1: float | None = None) -> MultiplierField:
    """Compactly supported multiplier ``L`` applied to ``∂_r^k ψ``.

    On ``[M, r0]``: ``f_v = 2 + 16(r - M)/M`` and
    ``f_r = -2 - 100(r - M)/M``; both are switched off smoothly on
    ``[r0, r1]`` (defaults ``9M/8``, ``5M/4``) so that ``L = 0`` for
    ``r ≥ r1``.
    """
    M = bg.mass
    r0 = 9 * M / 8 if r0 is None else r0
    r1 = 5 * M / 4 if r1 is None else r1
    f_v = blend(2 + 16 * (R - M) / M, sp.Integer(0), r0, r1)
    f_r = blend(-2 - 100 * (R - M) / M, sp.Integer(0), r0, r1)
    return _field(bg, "L_k", f_v, f_r, (bg.r_plus, math.inf), k=k, r0=r0, r1=r1)


def lagrangian_current(bg: BlackHoleBackground, weight: str = "f") -> MultiplierField:
    """Lagrangian current ``w(r) ψ∇ψ`` (no vector-field part).

    ``weight="f"``: ``w = D^{3/2}/r³``. ``weight="h_d"``: ``w = h^d``, equal
    to ``-1/(r*² + 1)`` on ``[M, 9M/8]``, negative on ``(9M/8, 2M)`` and
    ``(2M, 3M]`` with a double zero at ``2M``, and ``-1/r²`` for ``r ≥ 3M``.
    """
    M = bg.mass
    if weight == "f":
        w = sqrt_potential_expr(bg) ** 3 / R**3
        lower_open = not bg.extreme
    elif weight == "h_d":
        q = photon_sphere(bg)
        near = -1 / (tortoise_expr(bg) ** 2 + 1)
        zero = -((R - q) / M) ** 2
        far = -1 / R**2
        r0, r1 = 9 * M / 8, q + M
        w = sp.Piecewise(
            (blend(near, zero, r0, q), R <= q),
            (blend(zero, far, q, r1), True),
        )
        lower_open = True
    else:
        raise ValueError("weight must be 'f' or 'h_d'")
    mod = Modification("lagrangian", g=w)
    return _field(bg, f"lagrangian_{weight}", 0, 0, (bg.r_plus, math.inf), mod, lower_open=lower_open, weight=weight)


def multiplier(bg: BlackHoleBackground, name: str, **options) -> MultiplierField:
    """Look up a multiplier by name (see :data:`MULTIPLIERS`)."""
    builders = {
        "T": killing_T,
        "N": redshift_N,
        "P": degenerate_P,
        "X_alpha": morawetz_X_alpha,
        "X_d": morawetz_X_d,
        "X_0": morawetz_X_0,
        "L_k": second_order_L,
    }
    if name not in builders:
        raise ValueError(f"unknown multiplier {name!r}; choose from {MULTIPLIERS}")
    return builders[name](bg, **options)


# ---------------------------------------------------------------------------
# Bulk terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticForm:
    """Bulk coefficients at radii ``r``.

    ``K = c_vv ψ_v² + c_vr ψ_v ψ_r + c_rr ψ_r² + c_ang |∇̸ψ|²
    + c_0v ψ ψ_v + c_0r ψ ψ_r + c_00 ψ²``.
    """

    r: np.ndarray
    c_vv: np.ndarray
    c_vr: np.ndarray
    c_rr: np.ndarray
    c_ang: np.ndarray
    c_00: np.ndarray
    c_0v: np.ndarray
    c_0r: np.ndarray

    def matrix(self) -> np.ndarray:
        """Symmetric 2×2 blocks in ``(ψ_v, ψ_r)``, shape ``(n, 2, 2)``."""
        m = np.empty(self.r.shape + (2, 2))
        m[..., 0, 0] = self.c_vv
        m[..., 0, 1] = m[..., 1, 0] = 0.5 * self.c_vr
        m[..., 1, 1] = self.c_rr
        return m

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues of the ``(ψ_v, ψ_r)`` block, shape ``(n, 2)``."""
        return np.linalg.eigvalsh(self.matrix())

    def is_zero(self) -> bool:
        return all(
            np.all(c == 0)
            for c in (self.c_vv, self.c_vr, self.c_rr, self.c_ang, self.c_00, self.c_0v, self.c_0r)
        )

    def contract(self, psi, psi_v, psi_r, l: int) -> np.ndarray:
        """Value of ``K`` on a mode ``l``: ``|∇̸ψ|² → l(l+1) ψ²/r²``."""
        ang = l * (l + 1) / self.r**2
        return (
            self.c_vv * psi_v**2
            + self.c_vr * psi_v * psi_r
            + self.c_rr * psi_r**2
            + (self.c_ang * ang + self.c_00) * psi**2
            + self.c_0v * psi * psi_v
            + self.c_0r * psi * psi_r
        )

    def in_static_chart(self, bg: BlackHoleBackground) -> dict:
        """Coefficients of ``ψ_t², ψ_t ψ_{r*}, ψ_{r*}²`` (``ψ_v = ψ_t``, ``ψ_r = (ψ_{r*} - ψ_t)/D``)."""
        D = metric_potential(bg, self.r, 0)
        return {
            "tt": self.c_vv - self.c_vr / D + self.c_rr / D**2,
            "t_rstar": self.c_vr / D - 2.0 * self.c_rr / D**2,
            "rstar_rstar": self.c_rr / D**2,
            "ang": self.c_ang,
        }


def bulk_form(bg: BlackHoleBackground, V: MultiplierField, r, l: int | None = None) -> QuadraticForm:
    """Coefficients of ``K^V`` (including any modification) at ``r``.

    ``l`` is accepted for symmetry with :meth:`QuadraticForm.contract`; the
    coefficients themselves do not depend on it.
    """
    rr = V.check_region(r)
    D = metric_potential(bg, rr, 0)
    dD = metric_potential(bg, rr, 1)
    df_v = V.evaluate("df_v", rr)
    f_r, df_r = V.evaluate("f_r", rr), V.evaluate("df_r", rr)
    c_vv = df_v
    c_vr = D * df_v - 2.0 * f_r / rr
    c_rr = D * (0.5 * df_r - f_r / rr) - 0.5 * f_r * dD
    c_ang = -0.5 * df_r
    zero = np.zeros_like(rr)
    c_00, c_0v, c_0r = zero, zero.copy(), zero.copy()
    if V.modification.kind != "none":
        g, dg = V.evaluate("g", rr), V.evaluate("dg", rr)
        h, dh = V.evaluate("h", rr), V.evaluate("dh", rr)
        dw, ddw = V.evaluate("dw", rr), V.evaluate("ddw", rr)
        # g ∇ψ·∇ψ
        c_vr = c_vr + 2.0 * g
        c_rr = c_rr + g * D
        c_ang = c_ang + g
        # (∇g + 2h∇w)·ψ∇ψ with ∇F·∇ψ = F'(ψ_v + D ψ_r)
        cross = dg + 2.0 * h * dw
        c_0v = cross
        c_0r = cross * D
        # (∇h·∇w + h □w) ψ²
        box_w = D * ddw + (dD + 2.0 * D / rr) * dw
        c_00 = D * dh * dw + h * box_w
    return QuadraticForm(rr, c_vv, c_vr, c_rr, c_ang, c_00, c_0v, c_0r)


def commuted_coefficients(bg: BlackHoleBackground, V: MultiplierField, r) -> dict[str, np.ndarray]:
    """Coefficients ``H₁…H₁₀`` of ``∇^μ J^V_μ(∂_rψ)`` for a solution ``ψ``.

    They multiply, in order, ``(∂_v∂_rψ)²``, ``(∂_r²ψ)²``, ``|∇̸∂_rψ|²``,
    ``∂_v∂_rψ ∂_vψ``, ``∂_v∂_rψ ∂_rψ``, ``∂_r²ψ ∂_vψ``, ``∂_v∂_rψ Δ̸ψ``,
    ``∂_r²ψ Δ̸ψ``, ``∂_v∂_rψ ∂_r²ψ`` and ``∂_r²ψ ∂_rψ``.
    """
    rr = V.check_region(r)
    D = metric_potential(bg, rr, 0)
    dD = metric_potential(bg, rr, 1)
    d2D = metric_potential(bg, rr, 2)
    dR = d2D + 2.0 * dD / rr - 2.0 * D / rr**2
    f_v, df_v = V.evaluate("f_v", rr), V.evaluate("df_v", rr)
    f_r, df_r = V.evaluate("f_r", rr), V.evaluate("df_r", rr)
    return {
        "H1": df_v,
        "H2": D * (0.5 * df_r - f_r / rr) - 1.5 * dD * f_r,
        "H3": -0.5 * df_r,
        "H4": 2.0 * f_v / rr**2,
        "H5": -f_v * dR,
        "H6": 2.0 * f_r / rr**2,
        "H7": 2.0 * f_v / rr,
        "H8": 2.0 * f_r / rr,
        "H9": D * df_v - dD * f_v - 2.0 * f_r / rr,
        "H10": -f_r * dR,
    }


def commuted_conditions(bg: BlackHoleBackground, V: MultiplierField, r) -> dict[str, np.ndarray]:
    """Pointwise truth of the inequalities that make ``L`` usable near H+."""
    rr = V.check_region(r)
    H = commuted_coefficients(bg, V, rr)
    f_v, df_v = V.evaluate("f_v", rr), V.evaluate("df_v", rr)
    f_r = V.evaluate("f_r", rr)
    D = metric_potential(bg, rr, 0)
    R_ = radial_drift(bg, rr)
    return {
        "f_v > 1": f_v > 1,
        "f_v' > 1": df_v > 1,
        "-f_r > 1": -f_r > 1,
        "H1 > 1": H["H1"] > 1,
        "H2 >= 0": H["H2"] >= 0,
        "H3 > 1": H["H3"] > 1,
        "H8 < H3/10": H["H8"] < H["H3"] / 10,
        "H9 D <= H2/10": H["H9"] * D <= H["H2"] / 10,
        "(H9 R)^2 <= H2/10": (H["H9"] * R_) ** 2 <= H["H2"] / 10,
        "H9 < H3/10": H["H9"] < H["H3"] / 10,
    }


@dataclass(frozen=True)
class PositivityReport:
    """Result of :func:`positivity_scan`."""

    multiplier: str
    r: np.ndarray
    eigenvalues: np.ndarray  # (n, 2), ascending
    c_ang: np.ndarray
    min_eigenvalue: float
    witness_r: float
    min_angular: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue >= -self.tolerance and self.min_angular >= -self.tolerance


def positivity_scan(
    bg: BlackHoleBackground,
    V: MultiplierField,
    r_interval: tuple[float, float],
    samples: int = 10_000,
    tolerance: float = 1e-12,
) -> PositivityReport:
    """Smallest eigenvalue of the ``(ψ_v, ψ_r)`` block of ``K^V`` over a sample grid."""
    lo, hi = r_interval
    if samples < 2 or not hi > lo:
        raise ValueError("need at least two samples on a non-empty interval")
    r = np.linspace(lo, hi, samples)
    if V.lower_open and r[0] <= V.region[0]:
        r[0] = np.nextafter(V.region[0], np.inf)
    form = bulk_form(bg, V, r)
    eig = form.eigenvalues()
    i = int(np.argmin(eig[:, 0]))
    return PositivityReport(
        multiplier=V.name,
        r=r,
        eigenvalues=eig,
        c_ang=form.c_ang,
        min_eigenvalue=float(eig[i, 0]),
        witness_r=float(r[i]),
        min_angular=float(np.min(form.c_ang)),
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# Fluxes
# ---------------------------------------------------------------------------


def energy_density(
    bg: BlackHoleBackground,
    V: MultiplierField,
    r,
    psi,
    psi_v,
    psi_r,
    l: int,
    form: str = "generalt",
) -> np.ndarray:
    """``J^V_μ n^μ`` on a ``t*`` slice, for a mode ``l``.

    ``form="direct"`` contracts ``T_μν V^ν n^μ`` directly;
    ``form="generalt"`` uses the decomposition in terms of
    ``ω_V = -g(V,V)/(2(V^v)²)`` and ``ω_n``, which exhibits the sign of
    every term for causal ``V``. Modification terms ``g ψ ∇ψ·n`` and
    ``h ψ² ∇w·n`` are added in both cases.
    """
    rr = V.check_region(r)
    psi, psi_v, psi_r = (np.asarray(a, dtype=float) for a in (psi, psi_v, psi_r))
    sl = SliceGeometry.at(bg, rr)
    n_v, n_r = sl.n_v, sl.n_r
    D = metric_potential(bg, rr, 0)
    f_v, f_r = V.components(rr)
    ang = l * (l + 1) / rr**2 * psi**2
    g_Vn = -D * f_v * n_v + f_v * n_r + f_r * n_v
    if form == "direct":
        grad2 = 2.0 * psi_v * psi_r + D * psi_r**2 + ang
        out = (f_v * psi_v + f_r * psi_r) * (n_v * psi_v + n_r * psi_r) - 0.5 * g_Vn * grad2
    elif form == "generalt":
        with np.errstate(divide="ignore", invalid="ignore"):
            w_V = np.where(f_v > 0, -(-D * f_v**2 + 2.0 * f_v * f_r) / (2.0 * f_v**2), 0.0)
        w_n = -(-D * n_v**2 + 2.0 * n_v * n_r) / (2.0 * n_v**2)
        ww = w_V * w_n
        denom = D**2 + 2.0 * ww
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(denom > 0, D**2 / denom, 0.0)
        pref = f_v * n_v
        square = np.sqrt(frac) * psi_v + np.sqrt(np.maximum(denom, 0.0) / 4.0) * psi_r
        out = pref * ((1.0 - frac) * psi_v**2 + 0.5 * ww * psi_r**2 + square**2) - 0.5 * g_Vn * ang
        # Where V^v = 0 the bracket is not defined; the direct form applies.
        vanishing = f_v <= 0
        if np.any(vanishing):
            direct = energy_density(bg, V, rr, psi, psi_v, psi_r, l, form="direct")
            out = np.where(vanishing, direct, out)
            return out
    else:
        raise ValueError("form must be 'generalt' or 'direct'")
    if V.modification.kind != "none":
        g, h, dw = V.evaluate("g", rr), V.evaluate("h", rr), V.evaluate("dw", rr)
        out = out + g * psi * (n_v * psi_v + n_r * psi_r) + h * psi**2 * n_r * dw
    return out


@dataclass(frozen=True)
class FluxReport:
    """A flux integral with its integrand samples."""

    multiplier: str
    region: dict
    value: float
    r: np.ndarray = field(repr=False, default=None)
    integrand: np.ndarray = field(repr=False, default=None)


def _vr_derivatives(field_: ModeField) -> tuple[np.ndarray, np.ndarray]:
    """``(ψ_v, ψ_r|_v)`` from the ``t*``-chart state."""
    return field_.pi, field_.phi_r - field_.pi


def _restrict(field_: ModeField, r_range) -> slice:
    r = field_.grid.r
    if r_range is None:
        return slice(0, len(r))
    lo, hi = r_range
    i0 = int(np.searchsorted(r, lo - 1e-12 * max(1.0, abs(lo))))
    i1 = int(np.searchsorted(r, hi + 1e-12 * max(1.0, abs(hi)), side="right"))
    if i1 - i0 < 2:
        raise ValueError("r_range contains fewer than two grid nodes")
    return slice(i0, i1)


def flux_through_slice(
    bg: BlackHoleBackground,
    V: MultiplierField,
    field_: ModeField,
    r_range: tuple[float, float] | None = None,
    form: str = "generalt",
) -> FluxReport:
    """``∫ J^V_μ n^μ √(2-D) r² dr`` over the part of the slice in ``r_range``.

    The angular integral is normalised to 1 per mode. Composite trapezoid
    rule on the grid nodes.
    """
    sl = _restrict(field_, r_range)
    r = field_.grid.r[sl]
    psi_v, psi_r = _vr_derivatives(field_)
    density = energy_density(bg, V, r, field_.psi[sl], psi_v[sl], psi_r[sl], field_.l, form)
    integrand = density * SliceGeometry.at(bg, r).volume * r**2
    value = float(np.trapezoid(integrand, r))
    region = {"tstar": field_.time, "r_min": float(r[0]), "r_max": float(r[-1])}
    return FluxReport(V.name, region, value, r, integrand)


def horizon_flux_T(bg: BlackHoleBackground, trace: HorizonTrace, interval: tuple[float, float] | None = None) -> float:
    """``∫ (∂_vψ)² r_+² dv`` along the horizon over ``interval`` of ``t*``.

    On ``r = r_+`` the advanced time is ``v = t* + r_+``, so ``dv = dt*``.
    """
    t = np.asarray(trace.times, dtype=float)
    dv = np.asarray(trace.dv, dtype=float)
    if interval is not None:
        keep = (t >= interval[0] - 1e-12) & (t <= interval[1] + 1e-12)
        t, dv = t[keep], dv[keep]
    if len(t) < 2:
        return 0.0
    order = np.argsort(t)
    return float(bg.r_plus**2 * np.trapezoid(dv[order] ** 2, t[order]))


def rweighted_energy(bg: BlackHoleBackground, field_: ModeField, p: float, r_range: tuple[float, float]) -> float:
    """``∫ r^{p-2} (∂_vφ)² dr`` with ``φ = rψ`` over a far-region segment.

    ``∂_v`` is the null derivative of the (u, v) chart,
    ``∂_v|_u = ½((2 - D) ∂_{t*} + D ∂_r|_{t*})``.
    """
    if p >= 3:
        raise DomainError("the r^p hierarchy needs p < 3")
    lo, _ = r_range
    if lo <= photon_sphere(bg):
        raise DomainError("r-weighted energies are defined in the far region r > photon sphere")
    sl = _restrict(field_, r_range)
    r = field_.grid.r[sl]
    D = metric_potential(bg, r, 0)
    phi_t = r * field_.pi[sl]
    phi_r = field_.psi[sl] + r * field_.phi_r[sl]
    dv_phi = 0.5 * ((2.0 - D) * phi_t + D * phi_r)
    return float(np.trapezoid(r ** (p - 2.0) * dv_phi**2, r))


def higher_order_energy(
    bg: BlackHoleBackground,
    field_: ModeField,
    r0: float,
    k: int,
) -> float:
    """``∫_{[r_+, r0]} (∂_v∂_r^kψ)² + (∂_r^{k+1}ψ)² + |∇̸∂_r^kψ|²`` on the slice.

    The (v, r)-chart derivatives at every node are reconstructed with the
    same transversal stencils used for the horizon trace. The measure is
    ``√(2-D) r² dr``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    grid = field_.grid
    sl = _restrict(field_, (grid.r_min, r0))
    nodes = sl.stop
    mats = transversal_matrices(bg, grid, field_.l, k + 1, nodes)
    radial = mats.radial(field_.psi, field_.pi)  # (nodes, k+2)
    mixed = mats.mixed(field_.psi, field_.pi)
    r = grid.r[:nodes]
    integrand = (
        mixed[:, k] ** 2
        + radial[:, k + 1] ** 2
        + field_.l * (field_.l + 1) / r**2 * radial[:, k] ** 2
    ) * SliceGeometry.at(bg, r).volume * r**2
    return float(np.trapezoid(integrand, r))


def commuted_energy(
    bg: BlackHoleBackground,
    V: MultiplierField,
    field_: ModeField,
    k: int,
    r_range: tuple[float, float],
) -> float:
    """Flux of ``V`` through the slice for the commuted field ``∂_r^k ψ``.

    ``∂_r^kψ`` (taken at fixed ``v``) is again a mode of the same ``l``;
    its ``v``- and ``r``-derivatives come from the transversal stencils.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    sl = _restrict(field_, r_range)
    if sl.start != 0:
        raise ValueError("commuted energies are evaluated on regions starting at the horizon")
    mats = transversal_matrices(bg, field_.grid, field_.l, k + 1, sl.stop)
    radial = mats.radial(field_.psi, field_.pi)
    mixed = mats.mixed(field_.psi, field_.pi)
    r = field_.grid.r[: sl.stop]
    density = energy_density(bg, V, r, radial[:, k], mixed[:, k], radial[:, k + 1], field_.l)
    return float(np.trapezoid(density * SliceGeometry.at(bg, r).volume * r**2, r))
