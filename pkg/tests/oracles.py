"""Independent symbolic references used by the tests.

These recompute quantities from first principles (covariant derivatives of
the full four-dimensional metric, exact Taylor elimination) with sympy, so
they share no code with the library's closed-form coefficients.
"""

from __future__ import annotations

from functools import lru_cache

import sympy as sp

v, r, th, ph = sp.symbols("v r theta phi", real=True)
M, e = sp.symbols("M e", positive=True)
COORDS = (v, r, th, ph)


def _metric():
    D = 1 - 2 * M / r + e**2 / r**2
    g = sp.Matrix([[-D, 1, 0, 0], [1, 0, 0, 0], [0, 0, r**2, 0], [0, 0, 0, r**2 * sp.sin(th) ** 2]])
    return D, g


@lru_cache(maxsize=None)
def modified_bulk_coefficients():
    """``∇^μ J_μ - □ψ (V·∇ψ + gψ)`` for ``J = T(V) + gψ∇ψ + hψ²∇w``.

    Returns ``(coefficients, symbols)``: a dict from monomial names to sympy
    expressions in ``r, M, e`` and the radial profile functions, and the
    profile functions ``(f_v, f_r, g, h, w)``.
    """
    D, g = _metric()
    gi = g.inv()
    sqrt_g = r**2 * sp.sin(th)
    f_v, f_r, gg, hh, ww = (sp.Function(n)(r) for n in ("f_v", "f_r", "g", "h", "w"))
    psi = sp.Function("psi")(v, r, th)
    d = [sp.diff(psi, x) for x in COORDS]
    grad2 = sum(gi[a, b] * d[a] * d[b] for a in range(4) for b in range(4))
    V = [f_v, f_r, 0, 0]
    V_low = [sum(g[a, b] * V[b] for b in range(4)) for a in range(4)]
    J = [
        d[a] * sum(V[b] * d[b] for b in range(4)) - V_low[a] * grad2 / 2 + gg * psi * d[a] + hh * psi**2 * sp.diff(ww, COORDS[a])
        for a in range(4)
    ]
    div = sum(sp.diff(sqrt_g * sum(gi[a, b] * J[b] for b in range(4)), COORDS[a]) for a in range(4)) / sqrt_g
    box = sum(sp.diff(sqrt_g * sum(gi[a, b] * d[b] for b in range(4)), COORDS[a]) for a in range(4)) / sqrt_g
    K = sp.expand(div - box * (sum(V[b] * d[b] for b in range(4)) + gg * psi))
    pv, pr, pt, p0 = sp.symbols("pv pr pt p0")
    K = K.subs({d[0]: pv, d[1]: pr, d[2]: pt}).subs(psi, p0)
    K = sp.expand(K)
    if K.has(sp.Derivative(psi, v, r)) or K.has(sp.Derivative(psi, (r, 2))):
        raise AssertionError("second derivatives did not cancel")
    poly = sp.Poly(K, pv, pr, pt, p0)
    names = {
        (2, 0, 0, 0): "c_vv",
        (1, 1, 0, 0): "c_vr",
        (0, 2, 0, 0): "c_rr",
        (0, 0, 2, 0): "c_ang",
        (0, 0, 0, 2): "c_00",
        (1, 0, 0, 1): "c_0v",
        (0, 1, 0, 1): "c_0r",
    }
    coeffs = {name: sp.Integer(0) for name in names.values()}
    for monom, c in zip(poly.monoms(), poly.coeffs()):
        if monom not in names:
            raise AssertionError(f"unexpected monomial {monom}")
        coeffs[names[monom]] = sp.simplify(c * (r**2 if monom == (0, 0, 2, 0) else 1))
    return coeffs, (f_v, f_r, gg, hh, ww)


def evaluate_bulk(mass: float, charge: float, radius: float, jets: dict) -> dict:
    """Numerical oracle coefficients; ``jets`` maps profile names to value lists ``[f, f', f'']``."""
    coeffs, funcs = modified_bulk_coefficients()
    subs = {}
    for fn in funcs:
        name = fn.func.__name__
        values = jets.get(name, [0.0, 0.0, 0.0])
        for order in (2, 1):
            subs[sp.diff(fn, r, order)] = values[order] if order < len(values) else 0.0
        subs[fn] = values[0]
    out = {}
    for key, expr in coeffs.items():
        value = expr.subs(subs).subs({M: mass, e: charge, r: radius})
        out[key] = float(sp.N(value))
    return out


def horizon_law_oracle(l: int):
    """``β_0 … β_l`` by direct symbolic differentiation of the wave equation.

    Works with ``M = 1``. Solves for multipliers ``λ_k`` such that
    ``∂_v(∂_r^{l+1}ψ + Σ β_i ∂_r^iψ) = Σ_k λ_k ∂_r^k(□ψ)|_{r=1}`` identically.
    """
    D = (1 - 1 / r) ** 2
    R = sp.diff(D, r) + 2 * D / r
    n = l + 4
    a = sp.symbols(f"a0:{n}")  # ∂_r^j ψ at r = 1
    b = sp.symbols(f"b0:{n}")  # ∂_v ∂_r^j ψ at r = 1
    c = [sp.Function(f"c{j}")(v) for j in range(n)]
    psi = sum(c[j] * (r - 1) ** j / sp.factorial(j) for j in range(n))
    eq = D * sp.diff(psi, r, 2) + 2 * sp.diff(psi, v, r) + 2 / r * sp.diff(psi, v) + R * sp.diff(psi, r) - l * (l + 1) * psi / r**2
    subs = {sp.diff(c[j], v): b[j] for j in range(n)}
    identities = []
    for k in range(l + 1):
        expr = sp.diff(eq, r, k).subs(r, 1).subs(subs).subs({c[j]: a[j] for j in range(n)})
        identities.append(sp.expand(expr))
    beta = sp.symbols(f"beta0:{l + 1}")
    lam = sp.symbols(f"lam0:{l + 1}")
    target = b[l + 1] + sum(beta[i] * b[i] for i in range(l + 1))
    residual = sp.expand(target - sum(lam[k] * identities[k] for k in range(l + 1)))
    unknowns = list(beta) + list(lam)
    equations = sp.Poly(residual, *a, *b).coeffs()
    sol = sp.solve(equations, unknowns, dict=True)
    if len(sol) != 1:
        raise AssertionError("the horizon law is not unique")
    return [sp.nsimplify(sol[0][beta[i]]) for i in range(l + 1)]
