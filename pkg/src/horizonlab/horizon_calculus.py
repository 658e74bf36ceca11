"""Exact horizon identities for the extreme Reissner-Nordström background.

Differentiating the (v, r)-chart wave equation ``k`` times in ``r`` and
restricting to the horizon ``r = M`` gives a linear relation between the
transversal jets ``∂_r^j ψ`` and their ``∂_v`` derivatives. Because
``D(M) = D'(M) = 0`` the two highest transversal derivatives drop out, and for
a mode of angular frequency ``l`` the coefficient of ``∂_r^k ψ`` is
``(k(k+1) - l(l+1))/M^2``, which vanishes exactly when ``k = l``. Solving
the lower identities for ``∂_r^j ψ`` and substituting into the ``k = l`` one
yields a quantity ``H_l`` whose ``∂_v`` derivative vanishes on the horizon.

All arithmetic is exact. The mass is carried symbolically as an integer
power, so every coefficient is ``(p/q) · M^n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

SYMBOLS = ("D", "R", "2/r", "r^-2")
MAX_ORDER = 32


@dataclass(frozen=True)
class ExactCoefficient:
    """The exact number ``value · M^mass_power``.

    ``value`` is a :class:`fractions.Fraction` and therefore always in lowest
    terms with a positive denominator.
    """

    value: Fraction
    mass_power: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", Fraction(self.value))

    @property
    def numerator(self) -> int:
        return self.value.numerator

    @property
    def denominator(self) -> int:
        return self.value.denominator

    def is_zero(self) -> bool:
        return self.value == 0

    def __add__(self, other: "ExactCoefficient") -> "ExactCoefficient":
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        if self.mass_power != other.mass_power:
            raise ValueError("cannot add coefficients of different mass dimension")
        return ExactCoefficient(self.value + other.value, self.mass_power)

    def __neg__(self) -> "ExactCoefficient":
        return ExactCoefficient(-self.value, self.mass_power)

    def __sub__(self, other: "ExactCoefficient") -> "ExactCoefficient":
        return self + (-other)

    def __mul__(self, other) -> "ExactCoefficient":
        if isinstance(other, ExactCoefficient):
            return ExactCoefficient(self.value * other.value, self.mass_power + other.mass_power)
        return ExactCoefficient(self.value * Fraction(other), self.mass_power)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "ExactCoefficient":
        if isinstance(other, ExactCoefficient):
            return ExactCoefficient(self.value / other.value, self.mass_power - other.mass_power)
        return ExactCoefficient(self.value / Fraction(other), self.mass_power)

    def evaluate(self, mass: float = 1.0) -> float:
        return float(self.value) * mass**self.mass_power

    def __str__(self) -> str:
        if self.is_zero():
            return "0"
        text = str(self.value)
        if self.mass_power == 0:
            return text
        p = self.mass_power
        unit = "M" if abs(p) == 1 else f"M^{abs(p)}"
        if p > 0:
            return f"{text}·{unit}" if self.value != 1 else unit
        if self.denominator == 1:
            return f"{self.numerator}/{unit}"
        return f"({text})/{unit}"

    def to_json(self) -> dict:
        return {"numerator": self.numerator, "denominator": self.denominator, "mass_power": self.mass_power}


ZERO = ExactCoefficient(Fraction(0))


def _inverse_power_jet(n: int, i: int, scale: int = 1) -> ExactCoefficient:
    """Exact i-th derivative of ``scale · r^-n`` at ``r = M``."""
    value = Fraction((-1) ** i * scale)
    for j in range(i):
        value *= n + j
    return ExactCoefficient(value, -n - i)


@lru_cache(maxsize=None)
def background_horizon_jet(symbol: str, i: int) -> ExactCoefficient:
    """Exact ``i``-th r-derivative at ``r = M`` of a background function.

    ``symbol`` is one of ``"D"``, ``"R"``, ``"2/r"``, ``"r^-2"`` where
    ``D = (1 - M/r)^2`` and ``R = D' + 2D/r``.
    """
    if i < 0:
        raise ValueError("derivative order must be non-negative")
    if symbol == "D":
        # D = 1 - 2M r^-1 + M^2 r^-2  =>  D^(i)(M) = (-1)^i i! (i - 1) M^-i for i >= 1.
        if i == 0:
            return ExactCoefficient(Fraction(0), 0)
        return ExactCoefficient(Fraction((-1) ** i * factorial(i) * (i - 1)), -i)
    if symbol == "2/r":
        return _inverse_power_jet(1, i, scale=2)
    if symbol == "r^-2":
        return _inverse_power_jet(2, i)
    if symbol == "R":
        total = background_horizon_jet("D", i + 1)
        for j in range(i + 1):
            total = total + comb(i, j) * background_horizon_jet("D", j) * background_horizon_jet("2/r", i - j)
        if total.is_zero():
            return ExactCoefficient(Fraction(0), -1 - i)
        return total
    raise ValueError(f"unknown background symbol {symbol!r}; expected one of {SYMBOLS}")


# Jet symbols: ("r", j) stands for ∂_r^j ψ and ("vr", i) for ∂_v ∂_r^i ψ.
Jet = tuple[str, int]


def jet_name(jet: Jet) -> str:
    kind, order = jet
    radial = "" if order == 0 else ("∂_r" if order == 1 else f"∂_r^{order}")
    if kind == "r":
        return f"{radial}ψ"
    return f"∂_v{radial}ψ"


@dataclass(frozen=True)
class HorizonIdentity:
    """``0 = Σ coefficients[jet] · jet`` on the horizon for mode ``l``."""

    k: int
    l: int
    coefficients: dict = field(hash=False)

    def coefficient(self, jet: Jet) -> ExactCoefficient:
        return self.coefficients.get(jet, ZERO)

    def __str__(self) -> str:
        order = sorted(self.coefficients, key=lambda j: (j[0] != "vr", -j[1]))
        terms = [f"({self.coefficients[j]})·{jet_name(j)}" for j in order]
        return " + ".join(terms) + " = 0"


def _accumulate(coeffs: dict, jet: Jet, value: ExactCoefficient) -> None:
    if value.is_zero():
        return
    total = coeffs.get(jet, ZERO) + value
    if total.is_zero():
        coeffs.pop(jet, None)
    else:
        coeffs[jet] = total


@lru_cache(maxsize=None)
def restrict_commuted_wave(k: int, l: int) -> HorizonIdentity:
    """Apply ``∂_r^k`` to the mode-``l`` wave equation and restrict to ``r = M``.

    The (v, r)-chart equation is
    ``D ψ_rr + 2 ψ_vr + (2/r) ψ_v + R ψ_r - l(l+1) ψ / r^2 = 0``; Leibniz'
    rule distributes ``∂_r^k`` over each product and the background factors
    are replaced by their exact horizon jets.
    """
    if not (0 <= k <= MAX_ORDER and 0 <= l <= MAX_ORDER):
        raise ValueError(f"k and l must lie in [0, {MAX_ORDER}]")
    lam = l * (l + 1)
    coeffs: dict[Jet, ExactCoefficient] = {}
    _accumulate(coeffs, ("vr", k + 1), ExactCoefficient(Fraction(2), 0))
    for i in range(k + 1):
        b = comb(k, i)
        _accumulate(coeffs, ("r", k - i + 2), b * background_horizon_jet("D", i))
        _accumulate(coeffs, ("vr", k - i), b * background_horizon_jet("2/r", i))
        _accumulate(coeffs, ("r", k - i + 1), b * background_horizon_jet("R", i))
        _accumulate(coeffs, ("r", k - i), -lam * b * background_horizon_jet("r^-2", i))
    return HorizonIdentity(k=k, l=l, coefficients=coeffs)


@dataclass(frozen=True)
class ConservationLaw:
    """``H_l[ψ] = ∂_r^{l+1} ψ + Σ_i betas[i] ∂_r^i ψ`` is constant along H+.

    ``alphas[j]`` maps ``i`` to the coefficient expressing the horizon value
    of ``∂_r^j ψ`` (``j < l``) as ``Σ_i alphas[j][i] · ∂_v ∂_r^i ψ``.
    """

    l: int
    betas: tuple
    alphas: tuple = field(default=(), compare=False)

    def evaluate(self, derivatives, mass: float = 1.0):
        """Evaluate ``H_l`` from horizon jets ``derivatives[i] = ∂_r^i ψ``, ``i ≤ l+1``."""
        if len(derivatives) < self.l + 2:
            raise ValueError(f"H_{self.l} needs radial derivatives up to order {self.l + 1}")
        total = derivatives[self.l + 1]
        for i, beta in enumerate(self.betas):
            total = total + beta.evaluate(mass) * derivatives[i]
        return total

    def to_json(self) -> dict:
        return {
            "l": self.l,
            "betas": [dict(i=i, **b.to_json()) for i, b in enumerate(self.betas)],
            "alphas": [
                {"j": j, "terms": [dict(i=i, **c.to_json()) for i, c in sorted(row.items())]}
                for j, row in enumerate(self.alphas)
            ],
        }


def _eliminate_radial(identity: HorizonIdentity, alphas: list[dict]) -> dict[int, ExactCoefficient]:
    """Replace every ``∂_r^j ψ`` (j < len(alphas)) by its ∂_v expansion."""
    result: dict[int, ExactCoefficient] = {}
    for (kind, order), c in identity.coefficients.items():
        if kind == "vr":
            result[order] = result.get(order, ZERO) + c
        elif order < len(alphas):
            for i, a in alphas[order].items():
                result[i] = result.get(i, ZERO) + c * a
        else:
            raise ArithmeticError(f"radial jet of order {order} cannot be eliminated")
    return {i: c for i, c in result.items() if not c.is_zero()}


@lru_cache(maxsize=None)
def derive_conservation_law(l: int) -> ConservationLaw:
    """Derive the horizon conservation law of a mode with angular frequency ``l``."""
    if not 0 <= l <= MAX_ORDER:
        raise ValueError(f"l must lie in [0, {MAX_ORDER}]")
    alphas: list[dict[int, ExactCoefficient]] = []
    for j in range(l):
        identity = restrict_commuted_wave(j, l)
        pivot = identity.coefficient(("r", j))
        if pivot.is_zero():  # pragma: no cover - excluded by k(k+1) != l(l+1)
            raise ArithmeticError(f"vanishing pivot at k={j}, l={l}")
        reduced = HorizonIdentity(
            k=j, l=l, coefficients={jet: c for jet, c in identity.coefficients.items() if jet != ("r", j)}
        )
        rest = _eliminate_radial(reduced, alphas)
        alphas.append({i: -c / pivot for i, c in sorted(rest.items())})
    final = restrict_commuted_wave(l, l)
    if not final.coefficient(("r", l)).is_zero():  # pragma: no cover
        raise ArithmeticError("the k = l identity retained a ∂_r^l ψ term")
    combined = _eliminate_radial(final, alphas)
    leading = combined[l + 1]
    betas = tuple(
        combined.get(i, ExactCoefficient(Fraction(0), -(l + 1 - i))) / leading for i in range(l + 1)
    )
    betas = tuple(
        b if not b.is_zero() else ExactCoefficient(Fraction(0), -(l + 1 - i)) for i, b in enumerate(betas)
    )
    return ConservationLaw(l=l, betas=betas, alphas=tuple(alphas))


def law_table(law: ConservationLaw, mass: float = 1.0) -> str:
    """Human-readable table of ``i, β_i`` (exact) and ``β_i`` (decimal)."""
    lines = [f"H_{law.l}[psi] = d_r^{law.l + 1} psi + sum_i beta_i d_r^i psi", f"{'i':>3}  {'beta_i':>24}  {'decimal':>24}"]
    for i, b in enumerate(law.betas):
        lines.append(f"{i:>3}  {str(b):>24}  {b.evaluate(mass):>24.17g}")
    return "\n".join(lines)
