"""Horizon-penetrating evolution of a single spherical-harmonic mode.

The mode ``ψ_l(t*, r)`` is evolved on ``r ∈ [r_+, r_max]`` in the chart
``(t*, r)`` with ``t* = v - r``. Writing ``Π = ∂_{t*} ψ`` and
``Φ = ∂_r ψ`` (at fixed ``t*``), the (v, r)-chart equation

    D ψ_rr + 2 ψ_vr + (2/r) ψ_v + R ψ_r - l(l+1) ψ / r^2 = 0,

with ``∂_v = ∂_{t*}`` and ``∂_r|_v = ∂_r|_{t*} - ∂_{t*}``, becomes

    ∂_{t*} ψ = Π
    ∂_{t*} Φ = ∂_r Π
    (2 - D) ∂_{t*} Π = (2 - 2D) ∂_r Π + D ∂_r Φ + (2/r - R) Π + R Φ - l(l+1) ψ / r^2.

The characteristic speeds ``dr/dt*`` are ``-1`` and ``D/(2 - D)``. At the
horizon they are ``{-1, 0}``, so ``r = r_+`` is an outflow boundary: it needs
no condition and only one-sided stencils are used there. At ``r_max`` the
incoming field obeys the outgoing radiation condition on ``φ = rψ``.

Discretisation
--------------
On an extreme horizon, transversal derivatives grow along H+ and the
solution develops a layer of width ``~M^2/v`` next to ``r = M``. The radial
grid is therefore uniform in a stretched coordinate ``ξ`` whose spacing
shrinks to ``ε·h`` at the horizon (``ε = 1`` gives a plain uniform grid).
The continuum system satisfies ``Φ = ∂_r ψ`` exactly, so ``Φ`` is not
evolved separately. Instead ``D ∂_r Φ`` and ``R Φ`` are discretised as
``D ∂_r^2 ψ`` and ``R ∂_r ψ`` with compact stencils, and ``Φ`` is reported
as the finite-difference derivative of ``ψ``. The resulting linear system

    ψ' = Π,      Π' = B ψ + C Π

can be integrated with either of two methods:

* the classical explicit Runge-Kutta method, whose step is limited by the
  smallest cell;
* an L-stable, stiffly accurate three-stage SDIRK method. Its stage matrix
  is factored once, so the step is set by the far-field spacing alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dgbtrf, dgbtrs

from .geometry import BlackHoleBackground, metric_potential, photon_sphere, radial_drift

INITIAL_KINDS = ("gaussian_bump", "constant", "custom")
OUTER_BOUNDARIES = ("causal_buffer", "sommerfeld")
INTEGRATORS = ("sdirk3", "rk4")


class StabilityError(RuntimeError):
    """The evolution produced non-finite values."""


# ---------------------------------------------------------------------------
# Finite-difference stencils on a uniform computational grid
# ---------------------------------------------------------------------------

SPATIAL_ORDERS = (2, 4, 6, 8)
# Wide one-sided closures next to the radiation condition at r_max are
# unstable; the outer end is closed at this order at most.
OUTER_CLOSURE_ORDER = 4


def fd_weights(offsets, derivative: int) -> np.ndarray:
    """Finite-difference weights for ``f^(derivative)(0)`` from samples at ``offsets``.

    The weights are exact for polynomials of degree ``len(offsets) - 1``.
    """
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[derivative] = factorial(derivative)
    return np.linalg.solve(vander, rhs)


def difference_matrix(n: int, h: float, derivative: int, order: int = 2, outer_order: int | None = None) -> sp.csr_matrix:
    """Sparse ``d^derivative/dx^derivative`` on ``n`` uniform nodes with spacing ``h``.

    Interior rows use the centered stencil of the given (even) order. The
    ``order/2`` rows at the left end use one-sided stencils of the same
    order: ``order + 1`` nodes for first and ``order + 2`` nodes for second
    derivatives. The right end is closed the same way with ``outer_order``
    (default ``order``); rows that the wide stencil cannot reach fall back to
    centered stencils of ``outer_order`` where those fit.
    """
    outer_order = order if outer_order is None else outer_order
    for p in (order, outer_order):
        if derivative not in (1, 2) or p not in SPATIAL_ORDERS:
            raise ValueError(f"derivative must be 1 or 2 and order one of {SPATIAL_ORDERS}")
    if outer_order > order:
        raise ValueError("outer_order cannot exceed order")
    half, outer_half = order // 2, outer_order // 2
    if n < order + derivative + 1 or n < 2 * half + 1:
        raise ValueError("too few nodes for the requested stencil")
    rows_, cols_, vals_ = [], [], []

    def put(row: int, offsets: np.ndarray, weights: np.ndarray) -> None:
        rows_.append(np.full(len(offsets), row))
        cols_.append(row + offsets)
        vals_.append(weights)

    interior = fd_weights(np.arange(-half, half + 1), derivative)
    rows = np.repeat(np.arange(half, n - half), 2 * half + 1)
    rows_.append(rows)
    cols_.append(rows + np.tile(np.arange(-half, half + 1), n - 2 * half))
    vals_.append(np.tile(interior, n - 2 * half))
    for i in range(half):
        offsets = np.arange(order + derivative) - i
        put(i, offsets, fd_weights(offsets, derivative))
    # Right end, mirrored: j is the distance from the last node.
    for j in range(half):
        if j >= outer_half:
            offsets = np.arange(-outer_half, outer_half + 1)
        else:
            offsets = j - np.arange(outer_order + derivative)[::-1]
        put(n - 1 - j, offsets, fd_weights(offsets, derivative))
    mat = sp.csr_matrix(
        (np.concatenate(vals_), (np.concatenate(rows_), np.concatenate(cols_))),
        shape=(n, n),
    )
    return (mat / h**derivative).tocsr()


def first_derivative(f: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """First derivative of uniformly sampled ``f`` (centered, one-sided at the ends)."""
    return difference_matrix(len(f), h, 1, order) @ f


def second_derivative(f: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """Second derivative of uniformly sampled ``f`` (centered, one-sided at the ends)."""
    return difference_matrix(len(f), h, 2, order) @ f


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    """Radial grid whose first node is exactly ``r_min`` (the outer horizon).

    Nodes are uniform with spacing ``h`` in the coordinate

        ξ(x) = x + (1 - ε) ℓ log(1 + x / (ε ℓ)),   x = r - r_min,

    with ``ε = horizon_spacing`` and ``ℓ = stretch_length``. The physical
    spacing is ``≈ ε h`` at the horizon, grows over the length ``ℓ`` and
    tends to ``h`` far away. ``ε = 1`` (the default) is the plain uniform
    grid.
    """

    r_min: float
    h: float
    n_points: int
    horizon_spacing: float = 1.0
    stretch_length: float = 1.0

    def __post_init__(self) -> None:
        if self.n_points < 16:
            raise ValueError("a radial grid needs at least 16 points")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if not 0 < self.horizon_spacing <= 1:
            raise ValueError("horizon_spacing must lie in (0, 1]")
        if not self.stretch_length > 0:
            raise ValueError("stretch_length must be positive")

    @classmethod
    def covering(
        cls,
        r_min: float,
        r_max: float,
        h: float,
        horizon_spacing: float = 1.0,
        stretch_length: float = 1.0,
    ) -> "RadialGrid":
        """Smallest grid with far-field spacing ``h`` whose last node reaches ``r_max``."""
        if not r_max > r_min:
            raise ValueError("r_max must exceed r_min")
        probe = cls(r_min, h, 16, horizon_spacing, stretch_length)
        xi_max = float(probe.xi_of_x(r_max - r_min))
        n = int(math.ceil(xi_max / h - 1e-9)) + 1
        return cls(r_min, h, max(n, 16), horizon_spacing, stretch_length)

    def refined(self, factor: int) -> "RadialGrid":
        """The grid with spacing ``h / factor`` over exactly the same interval."""
        if factor < 1:
            raise ValueError("refinement factor must be a positive integer")
        return RadialGrid(
            self.r_min, self.h / factor, (self.n_points - 1) * factor + 1, self.horizon_spacing, self.stretch_length
        )

    # -- coordinate map ------------------------------------------------------

    def xi_of_x(self, x):
        """Computational coordinate ``ξ`` at ``x = r - r_min``."""
        x = np.asarray(x, dtype=float)
        eps, ell = self.horizon_spacing, self.stretch_length
        if eps == 1.0:
            return x.copy()
        return x + (1.0 - eps) * ell * np.log1p(x / (eps * ell))

    def x_of_xi(self, xi) -> np.ndarray:
        """Inverse of :meth:`xi_of_x`."""
        xi = np.asarray(xi, dtype=float)
        eps, ell = self.horizon_spacing, self.stretch_length
        if eps == 1.0:
            return xi.copy()
        # ξ(x) is increasing and concave, so Newton's method started from a
        # lower bound converges monotonically from below.
        x = np.maximum(xi - (1.0 - eps) * ell * np.log1p(xi / (eps * ell)), 0.0)
        for _ in range(200):
            delta = (self.xi_of_x(x) - xi) * self.spacing_factor(x)
            x = x - delta
            if np.all(np.abs(delta) <= 4e-16 * np.maximum(1.0, x)):
                break
        return x

    def spacing_factor(self, x):
        """``dr/dξ`` at ``x = r - r_min``."""
        eps, ell = self.horizon_spacing, self.stretch_length
        return (eps * ell + x) / (ell + x)

    # -- nodes ---------------------------------------------------------------

    @property
    def uniform(self) -> bool:
        return self.horizon_spacing == 1.0

    @cached_property
    def r(self) -> np.ndarray:
        nodes = self.r_min + self.x_of_xi(self.h * np.arange(self.n_points))
        nodes[0] = self.r_min
        nodes.setflags(write=False)
        return nodes

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @cached_property
    def dr_dxi(self) -> np.ndarray:
        return self.spacing_factor(self.r - self.r_min)

    @cached_property
    def d2r_dxi2(self) -> np.ndarray:
        x = self.r - self.r_min
        eps, ell = self.horizon_spacing, self.stretch_length
        return self.dr_dxi * (1.0 - eps) * ell / (ell + x) ** 2

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.r)))

    def index_of(self, radius: float) -> int:
        """Index of the last node with ``r <= radius`` (clipped to the grid)."""
        i = int(np.searchsorted(self.r, radius * (1 + 1e-13), side="right")) - 1
        return min(max(i, 0), self.n_points - 1)

    # -- derivatives ---------------------------------------------------------

    @cached_property
    def _matrices(self) -> dict:
        return {}

    def derivative_matrices(self, order: int = 2) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse ``(∂_r, ∂_r^2)`` on the nodes, by the chain rule through ``ξ``."""
        if order not in self._matrices:
            outer = min(order, OUTER_CLOSURE_ORDER)
            d1 = difference_matrix(self.n_points, self.h, 1, order, outer)
            d2 = difference_matrix(self.n_points, self.h, 2, order, outer)
            inv = sp.diags(1.0 / self.dr_dxi)
            first = (inv @ d1).tocsr()
            second = (inv @ inv @ (d2 - sp.diags(self.d2r_dxi2) @ first)).tocsr()
            self._matrices[order] = (first, second)
        return self._matrices[order]

    def d_dr(self, f: np.ndarray, order: int = 2) -> np.ndarray:
        return self.derivative_matrices(order)[0] @ f

    def d2_dr2(self, f: np.ndarray, order: int = 2) -> np.ndarray:
        return self.derivative_matrices(order)[1] @ f


@dataclass
class ModeField:
    """State ``(ψ, Π, Φ)`` of mode ``l`` on ``grid`` at time ``t*``."""

    l: int
    psi: np.ndarray
    pi: np.ndarray
    phi_r: np.ndarray
    time: float
    grid: RadialGrid

    def copy(self) -> "ModeField":
        return ModeField(self.l, self.psi.copy(), self.pi.copy(), self.phi_r.copy(), self.time, self.grid)

    def combine(self, a: float, other: "ModeField", b: float) -> "ModeField":
        """The linear combination ``a·self + b·other`` (at ``self.time``)."""
        return ModeField(
            self.l,
            a * self.psi + b * other.psi,
            a * self.pi + b * other.pi,
            a * self.phi_r + b * other.phi_r,
            self.time,
            self.grid,
        )


@dataclass(frozen=True)
class InitialDataSpec:
    """Initial data on the slice ``t* = 0`` for one mode.

    * ``gaussian_bump``: ``ψ = A exp(-(r - r_c)^2 / (2σ^2))``.
    * ``constant``: ``ψ = A``.
    * ``custom``: ``ψ`` sampled on the grid (``psi_samples``).

    The momentum ``Π`` can be ``"zero"``, ``"ingoing"`` (``Π = Φ``, i.e.
    ``∂_r|_v ψ = 0``) or ``"custom"`` (sampled in ``pi_samples``).
    """

    l: int = 0
    kind: str = "gaussian_bump"
    center: float = 2.0
    width: float = 0.5
    amplitude: float = 1.0
    momentum: str = "zero"
    psi_samples: tuple | None = None
    pi_samples: tuple | None = None

    def __post_init__(self) -> None:
        if self.kind not in INITIAL_KINDS:
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.momentum not in ("zero", "ingoing", "custom"):
            raise ValueError(f"unknown momentum profile {self.momentum!r}")
        if self.l < 0:
            raise ValueError("l must be non-negative")
        if self.kind == "gaussian_bump" and not self.width > 0:
            raise ValueError("width must be positive")


@dataclass(frozen=True)
class EvolutionConfig:
    """Numerical parameters of an evolution.

    ``output_every`` is the snapshot cadence in units of ``M``.
    ``trace_order`` is the highest transversal derivative recorded on the
    horizon; it defaults to ``l + 2``.
    """

    t_final: float = 100.0
    cfl: float = 0.5
    output_every: float = 5.0
    order: int = 2
    outer_boundary: str = "causal_buffer"
    integrator: str = "sdirk3"
    dissipation: float = 0.0
    trace_order: int | None = None
    trace_fit_width: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.order not in SPATIAL_ORDERS:
            raise ValueError(f"order must be one of {SPATIAL_ORDERS}")
        if self.outer_boundary not in OUTER_BOUNDARIES:
            raise ValueError(f"outer_boundary must be one of {OUTER_BOUNDARIES}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.output_every <= 0:
            raise ValueError("output_every must be positive")
        if self.dissipation < 0:
            raise ValueError("dissipation must be non-negative")
        if self.trace_fit_width < 0:
            raise ValueError("trace_fit_width must be non-negative")

    def time_step(self, grid: RadialGrid) -> float:
        """Largest admissible step. The largest characteristic speed is exactly 1.

        The explicit integrator is limited by the smallest cell. The implicit
        one is limited by the far-field spacing ``h``, for accuracy rather
        than stability.
        """
        spacing = grid.min_spacing if self.integrator == "rk4" else grid.h
        return self.cfl * spacing

    def steps(self, grid: RadialGrid, t_final: float | None = None) -> tuple[int, float]:
        """Number of steps, and the uniform step that ends exactly at ``t_final``."""
        t_end = self.t_final if t_final is None else t_final
        if t_end == 0:
            return 0, self.time_step(grid)
        n = max(1, int(math.ceil(t_end / self.time_step(grid) - 1e-9)))
        return n, t_end / n


# ---------------------------------------------------------------------------
# Semi-discrete operator
# ---------------------------------------------------------------------------


def _dissipation_matrix(grid: RadialGrid, order: int) -> sp.csr_matrix:
    """Kreiss-Oliger dissipation ``(-1)^q δ^{2q} / (4^q h)`` in ``ξ`` with ``q = order/2 + 1``.

    ``δ`` is the undivided centered difference, so the operator damps the
    grid-scale (sawtooth) mode at rate ``1/h`` while perturbing smooth data
    only at ``O(h^{2q-1})``, one order beyond the spatial stencils. It is
    applied at the nodes where the full stencil fits.
    """
    q = order // 2 + 1
    weights = np.array([(-1) ** (q + j) * comb(2 * q, j) for j in range(2 * q + 1)], dtype=float)
    weights *= (-1) ** q / (4**q * grid.h)
    n = grid.n_points
    rows = np.repeat(np.arange(q, n - q), 2 * q + 1)
    cols = rows + np.tile(np.arange(-q, q + 1), n - 2 * q)
    vals = np.tile(weights, n - 2 * q)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class ModeOperator:
    """The linear operator ``(ψ, Π) ↦ (Π, Bψ + CΠ)`` on a fixed grid."""

    def __init__(self, bg: BlackHoleBackground, grid: RadialGrid, l: int, config: EvolutionConfig):
        self.bg, self.grid, self.l, self.config = bg, grid, l, config
        r = grid.r
        D = metric_potential(bg, r, 0)
        R = radial_drift(bg, r)
        inv = 1.0 / (2.0 - D)
        d1, d2 = grid.derivative_matrices(config.order)
        diag = sp.diags
        C = diag((2.0 - 2.0 * D) * inv) @ d1 + diag((2.0 / r - R) * inv)
        B = diag(D * inv) @ d2 + diag(R * inv) @ d1 + diag(-l * (l + 1) / r**2 * inv)
        if config.dissipation > 0:
            C = C + config.dissipation * _dissipation_matrix(grid, config.order)
        # Outgoing radiation condition at r_max, in differentiated form so that
        # constants are preserved: (2 - D) r Π_t + D (Π + r Π_r) = 0. Both
        # outer-boundary modes close the grid this way; with the causal
        # buffer, evolve() additionally makes r_max large enough that the
        # boundary cannot influence the near region before t_final.
        n = grid.n_points - 1
        outer = np.zeros(grid.n_points)
        outer[:] = -(D[n] * inv[n]) * d1[n, :].toarray().ravel()
        outer[n] -= D[n] * inv[n] / r[n]
        C = C.tolil()
        B = B.tolil()
        C[n, :] = outer
        B[n, :] = 0.0
        self.B = B.tocsr()
        self.C = C.tocsr()
        self.B.eliminate_zeros()
        self.C.eliminate_zeros()

    def rhs(self, psi: np.ndarray, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return pi, self.B @ psi + self.C @ pi

    def time_derivative_of_pi(self, field: "ModeField") -> np.ndarray:
        return self.B @ field.psi + self.C @ field.pi


def characteristic_speeds(bg: BlackHoleBackground, r) -> tuple:
    """Characteristic speeds ``dr/dt*`` of the first-order system at radius ``r``."""
    D = float(metric_potential(bg, r, 0))
    # (Π, Φ)_t = A (Π, Φ)_r + ..., so the speeds dr/dt* are the negated eigenvalues of A.
    A = np.array([[(2.0 - 2.0 * D) / (2.0 - D), D / (2.0 - D)], [1.0, 0.0]])
    return tuple(sorted(float(-ev) for ev in np.linalg.eigvals(A).real))


# ---------------------------------------------------------------------------
# Time integrators
# ---------------------------------------------------------------------------


class RK4Integrator:
    """Classical explicit fourth-order Runge-Kutta method."""

    def __init__(self, op: ModeOperator, dt: float):
        self.op, self.dt = op, dt

    def advance(self, psi: np.ndarray, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f, dt = self.op.rhs, self.dt
        a1, b1 = f(psi, pi)
        a2, b2 = f(psi + 0.5 * dt * a1, pi + 0.5 * dt * b1)
        a3, b3 = f(psi + 0.5 * dt * a2, pi + 0.5 * dt * b2)
        a4, b4 = f(psi + dt * a3, pi + dt * b3)
        return (
            psi + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            pi + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
        )


# Alexander's three-stage, third-order, L-stable and stiffly accurate SDIRK.
_GAMMA = 0.43586652150845899941601945
_SDIRK_A = (
    (_GAMMA,),
    (0.5 * (1.0 - _GAMMA), _GAMMA),
    (-1.5 * _GAMMA**2 + 4.0 * _GAMMA - 0.25, 1.5 * _GAMMA**2 - 5.0 * _GAMMA + 1.25, _GAMMA),
)


class SDIRK3Integrator:
    """Implicit integrator for ``ψ' = Π, Π' = Bψ + CΠ``.

    Each stage solves ``(I - γΔt C - γ²Δt² B) k_Π = B Y_ψ + (γΔt B + C) Y_Π``
    for the Π-slope and then sets ``k_ψ = Y_Π + γΔt k_Π``. The banded stage
    matrix is LU-factored once per run.
    """

    def __init__(self, op: ModeOperator, dt: float):
        self.op, self.dt = op, dt
        g = _GAMMA * dt
        n = op.grid.n_points
        K = (sp.identity(n, format="csr") - g * op.C - g * g * op.B).tocoo()
        self.kl = self.ku = int(np.max(np.abs(K.row - K.col)))
        ab = np.zeros((2 * self.kl + self.ku + 1, n))
        ab[self.kl + self.ku + K.row - K.col, K.col] = K.data
        self.lu, self.piv, info = dgbtrf(ab, self.kl, self.ku)
        if info != 0:  # pragma: no cover - the matrix is a small perturbation of I
            raise StabilityError(f"singular stage matrix (LAPACK info {info})")
        self.rhs_psi = op.B
        self.rhs_pi = (g * op.B + op.C).tocsr()

    def advance(self, psi: np.ndarray, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dt, g = self.dt, _GAMMA * self.dt
        k_psi: list[np.ndarray] = []
        k_pi: list[np.ndarray] = []
        for row in _SDIRK_A:
            y_psi, y_pi = psi.copy(), pi.copy()
            for a, kp, kq in zip(row[:-1], k_psi, k_pi):
                y_psi += (dt * a) * kp
                y_pi += (dt * a) * kq
            kq, _ = dgbtrs(self.lu, self.kl, self.ku, self.rhs_psi @ y_psi + self.rhs_pi @ y_pi, self.piv)
            k_pi.append(kq)
            k_psi.append(y_pi + g * kq)
        new_psi, new_pi = psi.copy(), pi.copy()
        for a, kp, kq in zip(_SDIRK_A[-1], k_psi, k_pi):
            new_psi += (dt * a) * kp
            new_pi += (dt * a) * kq
        return new_psi, new_pi


def make_integrator(op: ModeOperator, dt: float):
    """The integrator selected by ``op.config.integrator`` with step ``dt``."""
    if op.config.integrator == "rk4":
        return RK4Integrator(op, dt)
    return SDIRK3Integrator(op, dt)


def step(bg: BlackHoleBackground, field: ModeField, config: EvolutionConfig, integrator=None) -> ModeField:
    """Advance ``field`` by one step (of length ``config.time_step`` unless an integrator is given)."""
    if integrator is None:
        op = ModeOperator(bg, field.grid, field.l, config)
        integrator = make_integrator(op, config.time_step(field.grid))
    psi, pi = integrator.advance(field.psi, field.pi)
    phi = field.grid.d_dr(psi, config.order)
    return ModeField(field.l, psi, pi, phi, field.time + integrator.dt, field.grid)


# ---------------------------------------------------------------------------
# Transversal derivatives ∂_r^k|_v ψ from a single slice
# ---------------------------------------------------------------------------


def _inverse_power_series(r0: float, n: int, degree: int) -> np.ndarray:
    """Taylor coefficients of ``r^-n`` about ``r0``."""
    m = np.arange(degree + 1)
    return np.array([(-1) ** k * comb(n + k - 1, k) for k in m], dtype=float) * r0 ** (-(n + m))


def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def _deriv(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:-1] = a[1:] * np.arange(1, len(a))
    return out


def _reciprocal(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[0] = 1.0 / a[0]
    for m in range(1, len(a)):
        out[m] = -np.dot(a[1 : m + 1], out[m - 1 :: -1][:m]) / a[0]
    return out


class _BackgroundSeries:
    """Taylor coefficients of the evolution-equation coefficients about ``r0``."""

    def __init__(self, bg: BlackHoleBackground, r0: float, degree: int, l: int):
        M, e2 = bg.mass, bg.charge**2
        s1 = _inverse_power_series(r0, 1, degree)
        s2 = _inverse_power_series(r0, 2, degree)
        s3 = _inverse_power_series(r0, 3, degree)
        one = np.zeros(degree + 1)
        one[0] = 1.0
        D = one - 2.0 * M * s1 + e2 * s2
        if bg.extreme:
            D[0] = metric_potential(bg, r0, 0)
        dD = 2.0 * M * s2 - 2.0 * e2 * s3
        R = dD + 2.0 * _mul(D, s1)
        self.inv = _reciprocal(2.0 * one - D)
        self.c_pi_r = 2.0 * one - 2.0 * D
        self.c_psi_rr = D
        self.c_pi = 2.0 * s1 - R
        self.c_psi_r = R
        self.c_psi = -l * (l + 1) * s2

    def time_derivative(self, psi: np.ndarray, pi: np.ndarray) -> np.ndarray:
        """Series of ``∂_{t*} Π`` given the series of ``ψ`` and ``Π``."""
        psi_r = _deriv(psi)
        total = (
            _mul(self.c_pi_r, _deriv(pi))
            + _mul(self.c_psi_rr, _deriv(psi_r))
            + _mul(self.c_pi, pi)
            + _mul(self.c_psi_r, psi_r)
            + _mul(self.c_psi, psi)
        )
        return _mul(self.inv, total)


def _stencil_indices(n_points: int, node: int, width: int) -> np.ndarray:
    start = min(max(node - width // 2, 0), n_points - width)
    return np.arange(start, start + width)


@dataclass(frozen=True)
class TransversalStencil:
    """Linear weights giving ``∂_r^k|_v ψ`` and ``∂_v ∂_r^k|_v ψ`` at one node.

    The local state is fitted by polynomials of degree ``k + 3`` in ``r``.
    The fit interpolates ``k + 4`` neighbouring nodes, or is a least-squares
    fit to every node within ``fit_width`` of the node when that window holds
    more of them. The wider window keeps round-off from being amplified by
    very fine cells. Every ``∂_{t*}`` produced by expanding
    ``(∂_r|_{t*} - ∂_{t*})^k`` is replaced using the evolution equations,
    which act on truncated Taylor series about the node. The resulting map
    from ``(ψ, Π)`` samples to the jet is linear and is tabulated once.
    """

    node: int
    indices: tuple
    w_psi: np.ndarray  # shape (2, kmax + 1, width): [radial, v-radial]
    w_pi: np.ndarray

    @classmethod
    def build(
        cls,
        bg: BlackHoleBackground,
        grid: RadialGrid,
        l: int,
        node: int,
        kmax: int,
        fit_width: float = 0.0,
    ) -> "TransversalStencil":
        r = grid.r
        r0 = r[node]
        in_window = int(np.count_nonzero(np.abs(r - r0) <= fit_width * (1 + 1e-12)))
        subs = []
        for k in range(kmax + 1):
            count = max(k + 4, in_window)
            if count > grid.n_points:
                raise ValueError("grid too small for the requested transversal derivative order")
            subs.append(_stencil_indices(grid.n_points, node, count))
        start = min(int(sub[0]) for sub in subs)
        stop = max(int(sub[-1]) for sub in subs) + 1
        idx = np.arange(start, stop)
        w_psi = np.zeros((2, kmax + 1, len(idx)))
        w_pi = np.zeros((2, kmax + 1, len(idx)))
        for k, sub in enumerate(subs):
            # Degree k + 3: the mixed jet needs Taylor data one order higher.
            p = k + 3
            pos = sub - start
            # Offsets are scaled by the mean spacing for conditioning.
            scale = (r[sub[-1]] - r[sub[0]]) / (len(sub) - 1)
            vander = np.vander((r[sub] - r0) / scale, p + 1, increasing=True)
            to_taylor = np.linalg.pinv(vander) / scale ** np.arange(p + 1)[:, None]
            series = _BackgroundSeries(bg, r0, p, l)
            for col in range(len(sub)):
                for target, weights in ((0, w_psi), (1, w_pi)):
                    psi_s = to_taylor[:, col].copy() if target == 0 else np.zeros(p + 1)
                    pi_s = to_taylor[:, col].copy() if target == 1 else np.zeros(p + 1)
                    u = [psi_s, pi_s]
                    for _ in range(k + 1):
                        u.append(series.time_derivative(u[-2], u[-1]))
                    radial = sum(comb(k, j) * (-1) ** j * factorial(k - j) * u[j][k - j] for j in range(k + 1))
                    mixed = sum(comb(k, j) * (-1) ** j * factorial(k - j) * u[j + 1][k - j] for j in range(k + 1))
                    weights[0, k, pos[col]] = radial
                    weights[1, k, pos[col]] = mixed
        return cls(node=node, indices=tuple(int(i) for i in idx), w_psi=w_psi, w_pi=w_pi)

    def radial(self, psi: np.ndarray, pi: np.ndarray) -> np.ndarray:
        """``[∂_r^k|_v ψ for k = 0..kmax]`` at the node."""
        sl = slice(self.indices[0], self.indices[-1] + 1)
        return self.w_psi[0] @ psi[sl] + self.w_pi[0] @ pi[sl]

    def mixed(self, psi: np.ndarray, pi: np.ndarray) -> np.ndarray:
        """``[∂_v ∂_r^k|_v ψ for k = 0..kmax]`` at the node."""
        sl = slice(self.indices[0], self.indices[-1] + 1)
        return self.w_psi[1] @ psi[sl] + self.w_pi[1] @ pi[sl]


def transversal_derivatives(bg: BlackHoleBackground, field: ModeField, kmax: int, node: int = 0):
    """``(∂_r^k|_v ψ, ∂_v∂_r^k|_v ψ)`` for ``k ≤ kmax`` at grid node ``node``."""
    st = TransversalStencil.build(bg, field.grid, field.l, node, kmax)
    return st.radial(field.psi, field.pi), st.mixed(field.psi, field.pi)


@dataclass(frozen=True)
class TransversalMatrices:
    """Stacked :class:`TransversalStencil` weights for the first ``nodes`` grid nodes.

    ``radial_psi[k] @ ψ + radial_pi[k] @ Π`` is ``∂_r^k|_v ψ`` at every node,
    and likewise ``mixed_*`` for ``∂_v ∂_r^k|_v ψ``.
    """

    radial_psi: tuple
    radial_pi: tuple
    mixed_psi: tuple
    mixed_pi: tuple

    def radial(self, psi: np.ndarray, pi: np.ndarray) -> np.ndarray:
        """Array of shape ``(nodes, kmax + 1)``."""
        return np.stack([a @ psi + b @ pi for a, b in zip(self.radial_psi, self.radial_pi)], axis=1)

    def mixed(self, psi: np.ndarray, pi: np.ndarray) -> np.ndarray:
        return np.stack([a @ psi + b @ pi for a, b in zip(self.mixed_psi, self.mixed_pi)], axis=1)


_TRANSVERSAL_CACHE: dict = {}


def transversal_matrices(bg: BlackHoleBackground, grid: RadialGrid, l: int, kmax: int, nodes: int) -> TransversalMatrices:
    """Transversal-derivative weights at nodes ``0 … nodes-1`` (cached per grid)."""
    key = (bg, grid, l, kmax, nodes)
    if key not in _TRANSVERSAL_CACHE:
        rows, cols = [], []
        vals = {name: [[] for _ in range(kmax + 1)] for name in ("rp", "rq", "mp", "mq")}
        for node in range(nodes):
            st = TransversalStencil.build(bg, grid, l, node, kmax)
            idx = np.asarray(st.indices)
            rows.append(np.full(len(idx), node))
            cols.append(idx)
            for k in range(kmax + 1):
                vals["rp"][k].append(st.w_psi[0, k])
                vals["rq"][k].append(st.w_pi[0, k])
                vals["mp"][k].append(st.w_psi[1, k])
                vals["mq"][k].append(st.w_pi[1, k])
        rows, cols = np.concatenate(rows), np.concatenate(cols)

        def stack(name: str) -> tuple:
            shape = (nodes, grid.n_points)
            return tuple(sp.csr_matrix((np.concatenate(v), (rows, cols)), shape=shape) for v in vals[name])

        if len(_TRANSVERSAL_CACHE) > 32:
            _TRANSVERSAL_CACHE.clear()
        _TRANSVERSAL_CACHE[key] = TransversalMatrices(stack("rp"), stack("rq"), stack("mp"), stack("mq"))
    return _TRANSVERSAL_CACHE[key]


# ---------------------------------------------------------------------------
# Residual of the (v, r)-chart equation
# ---------------------------------------------------------------------------


def reduced_equation_residual(
    bg: BlackHoleBackground, field: ModeField, pi_dot: np.ndarray | None = None
) -> np.ndarray:
    """Pointwise residual of the (v, r)-chart mode equation on a slice.

    The (v, r) derivatives are rebuilt from the slice state through
    ``∂_v = ∂_{t*}`` and ``∂_r|_v = ∂_r|_{t*} - ∂_{t*}``:

        ψ_v = Π,  ψ_r = ψ' - Π,  ψ_vr = Π' - Π_t,  ψ_rr = ψ'' - 2Π' + Π_t,

    where primes are r-derivatives along the slice. ``Π_t`` is taken from
    ``pi_dot`` when given, for instance a centered time difference of evolved
    slices, which makes the residual an independent check. Otherwise it comes
    from the semi-discrete evolution equations.
    """
    grid = field.grid
    r = grid.r
    d1, d2 = grid.derivative_matrices(2)
    psi_r = d1 @ field.psi
    psi_rr = d2 @ field.psi
    pi_r = d1 @ field.pi
    if pi_dot is None:
        pi_dot = ModeOperator(bg, grid, field.l, EvolutionConfig()).time_derivative_of_pi(field)
    D = metric_potential(bg, r, 0)
    R = radial_drift(bg, r)
    lam = field.l * (field.l + 1)
    return (
        D * (psi_rr - 2.0 * pi_r + pi_dot)
        + 2.0 * (pi_r - pi_dot)
        + (2.0 / r) * field.pi
        + R * (psi_r - field.pi)
        - lam * field.psi / r**2
    )


# ---------------------------------------------------------------------------
# Initial data and the evolution driver
# ---------------------------------------------------------------------------


def initial_field(bg: BlackHoleBackground, grid: RadialGrid, spec: InitialDataSpec) -> ModeField:
    """Sample the initial data of ``spec`` on ``grid`` at ``t* = 0``."""
    r = grid.r
    if spec.kind == "gaussian_bump":
        if spec.width <= 0:
            raise ValueError("width must be positive")
        z = (r - spec.center) / spec.width
        psi = spec.amplitude * np.exp(-0.5 * z**2)
        phi = -z / spec.width * psi
        tail = r >= grid.r_min + 0.9 * (grid.r_max - grid.r_min)
        if np.any(np.abs(psi[tail]) > 1e-12 * abs(spec.amplitude)):
            raise ValueError("the bump does not decay in the outer tenth of the grid")
    elif spec.kind == "constant":
        psi = np.full_like(r, spec.amplitude)
        phi = np.zeros_like(r)
    else:
        if spec.psi_samples is None or len(spec.psi_samples) != grid.n_points:
            raise ValueError("custom data need psi_samples matching the grid")
        psi = np.asarray(spec.psi_samples, dtype=float).copy()
        phi = grid.d_dr(psi)
    if spec.momentum == "zero":
        pi = np.zeros_like(r)
    elif spec.momentum == "ingoing":
        pi = phi.copy()
    else:
        if spec.pi_samples is None or len(spec.pi_samples) != grid.n_points:
            raise ValueError("custom momentum needs pi_samples matching the grid")
        pi = np.asarray(spec.pi_samples, dtype=float).copy()
    return ModeField(spec.l, psi, pi, phi, 0.0, grid)


@dataclass
class HorizonTrace:
    """Per-step horizon values: ``radial[:, k] = ∂_r^k|_v ψ(t*, r_+)``, ``dv = ∂_v ψ``."""

    times: np.ndarray
    radial: np.ndarray
    dv: np.ndarray

    @property
    def order(self) -> int:
        return self.radial.shape[1] - 1

    def derivative(self, k: int) -> np.ndarray:
        if k > self.order:
            raise ValueError(f"trace holds derivatives up to order {self.order}, not {k}")
        return self.radial[:, k]


@dataclass
class EvolutionResult:
    """Snapshots at the output cadence, horizon trace and outer-boundary flux."""

    background: BlackHoleBackground
    initial: InitialDataSpec
    config: EvolutionConfig
    grid: RadialGrid
    snapshots: list = field(default_factory=list)
    trace: HorizonTrace | None = None
    outer_flux: np.ndarray | None = None  # energy leaving through r_max per unit t*

    @property
    def l(self) -> int:
        return self.initial.l


def outer_energy_flux(bg: BlackHoleBackground, field: ModeField) -> float:
    """Rate at which T-energy leaves through ``r_max``: ``-r^2 (ψ_v^2 + D ψ_v ψ_r)``."""
    r = field.grid.r_max
    D = metric_potential(bg, r, 0)
    psi_v = field.pi[-1]
    psi_r = field.phi_r[-1] - field.pi[-1]
    return float(-(r**2) * (psi_v**2 + D * psi_v * psi_r))


def evolve(
    bg: BlackHoleBackground,
    grid: RadialGrid,
    initial: InitialDataSpec,
    config: EvolutionConfig,
    *,
    progress=None,
) -> EvolutionResult:
    """Evolve ``initial`` to ``config.t_final`` recording snapshots and the horizon trace."""
    if grid.r_min != bg.r_plus:
        raise ValueError("the grid must start at the outer horizon")
    if grid.r_max <= photon_sphere(bg):
        raise ValueError("r_max must lie outside the photon sphere")
    if config.outer_boundary == "causal_buffer" and grid.r_max < photon_sphere(bg) + config.t_final:
        raise ValueError(
            "the causal buffer needs r_max >= photon sphere + t_final; "
            "enlarge the grid or use the sommerfeld outer boundary"
        )
    l = initial.l
    kmax = config.trace_order if config.trace_order is not None else l + 2
    op = ModeOperator(bg, grid, l, config)
    stencil = TransversalStencil.build(bg, grid, l, 0, kmax, config.trace_fit_width)
    n_steps, dt = config.steps(grid)
    integrator = make_integrator(op, dt)
    every = max(1, int(round(config.output_every / dt)))

    field = initial_field(bg, grid, initial)
    result = EvolutionResult(bg, initial, config, grid)
    times = np.empty(n_steps + 1)
    radial = np.empty((n_steps + 1, kmax + 1))
    dv = np.empty(n_steps + 1)
    outer = np.empty(n_steps + 1)

    def record(i: int, f: ModeField) -> None:
        times[i] = f.time
        radial[i] = stencil.radial(f.psi, f.pi)
        dv[i] = f.pi[0]
        outer[i] = outer_energy_flux(bg, f)

    record(0, field)
    result.snapshots.append(field.copy())
    for n in range(1, n_steps + 1):
        field = step(bg, field, config, integrator)
        field.time = n * dt
        if not (np.isfinite(field.psi[0]) and np.isfinite(field.psi[-1]) and np.isfinite(field.pi).all()):
            raise StabilityError(f"non-finite values at step {n} (t* = {field.time:.6g})")
        record(n, field)
        if n % every == 0 or n == n_steps:
            result.snapshots.append(field.copy())
        if progress is not None:
            progress(n, n_steps)
    result.trace = HorizonTrace(times=times, radial=radial, dv=dv)
    result.outer_flux = outer
    return result
