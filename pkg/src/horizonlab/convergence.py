"""Refinement studies: observed convergence orders of horizon diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .currents import flux_through_slice, horizon_flux_T, killing_T
from .diagnostics import aretakis_series, observed_order
from .evolution import EvolutionConfig, EvolutionResult, InitialDataSpec, RadialGrid, evolve
from .geometry import BlackHoleBackground
from .horizon_calculus import derive_conservation_law


@dataclass(frozen=True)
class DiagnosticConvergence:
    """Errors of one diagnostic on successive grids and the orders they imply.

    For ``self-convergence`` diagnostics the errors are differences between
    successive grids, so there is one fewer error than grid.
    """

    name: str
    spacings: tuple
    errors: tuple
    order: float | None
    pairwise: tuple
    monotone: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "spacings": list(self.spacings),
            "errors": list(self.errors),
            "order": self.order,
            "pairwise_orders": list(self.pairwise),
            "monotone": self.monotone,
        }


@dataclass
class ConvergenceReport:
    spacings: tuple
    diagnostics: dict = field(default_factory=dict)
    results: list = field(default_factory=list, repr=False)

    def order(self, name: str) -> float | None:
        return self.diagnostics[name].order

    def to_json(self) -> dict:
        return {"spacings": list(self.spacings), "diagnostics": {k: v.to_json() for k, v in self.diagnostics.items()}}


def _summarize(name: str, spacings, errors) -> DiagnosticConvergence:
    errors = np.abs(np.asarray(errors, dtype=float))
    monotone = bool(np.all(np.diff(errors) < 0))
    if not monotone:
        warnings.warn(f"{name}: errors do not decrease monotonically under refinement", stacklevel=3)
    if len(errors) >= 2 and np.all(errors > 0):
        slope, pairwise = observed_order(spacings, errors)
        order, pairwise = float(slope), tuple(float(p) for p in pairwise)
    else:
        order, pairwise = None, ()
    return DiagnosticConvergence(name, tuple(float(h) for h in spacings), tuple(float(e) for e in errors), order, pairwise, monotone)


def energy_balance_residual(bg: BlackHoleBackground, result: EvolutionResult) -> float:
    """``|E(0) - E(T) - F_H - F_out| / E(0)`` for the T-energy of a run."""
    T = killing_T(bg)
    first, last = result.snapshots[0], result.snapshots[-1]
    e0 = flux_through_slice(bg, T, first).value
    e1 = flux_through_slice(bg, T, last).value
    trace = result.trace
    horizon = horizon_flux_T(bg, trace)
    outer = float(np.trapezoid(result.outer_flux, trace.times))
    return abs(e0 - e1 - horizon - outer) / abs(e0)


def convergence_study(
    bg: BlackHoleBackground,
    initial: InitialDataSpec,
    config: EvolutionConfig,
    grid: RadialGrid,
    refinements: int = 3,
    factor: int = 2,
    *,
    keep_results: bool = False,
    progress=None,
) -> ConvergenceReport:
    """Evolve on ``grid`` and ``refinements - 1`` successively refined copies.

    Diagnostics:

    * ``psi_horizon``: self-convergence of ``ψ(t*, r_+)`` at the output
      times (max over times of successive differences).
    * ``H_drift`` (extreme backgrounds): maximal relative drift of ``H_l``,
      whose exact value is 0.
    * ``energy_balance``: T-energy balance residual, exact value 0.

    Non-monotone errors are flagged (``monotone=False`` and a warning).
    """
    if refinements < 2:
        raise ValueError("a convergence study needs at least two grids")
    grids = [grid.refined(factor**i) for i in range(refinements)]
    spacings = [g.h for g in grids]
    results = []
    for i, g in enumerate(grids):
        results.append(evolve(bg, g, initial, config))
        if progress is not None:
            progress(i + 1, refinements)

    report = ConvergenceReport(tuple(spacings))
    times = np.array([s.time for s in results[0].snapshots])
    horizon = [np.interp(times, [s.time for s in r.snapshots], [s.psi[0] for s in r.snapshots]) for r in results]
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(horizon[:-1], horizon[1:])]
    report.diagnostics["psi_horizon"] = _summarize("psi_horizon", spacings[:-1], diffs)
    if bg.extreme:
        law = derive_conservation_law(initial.l)
        drifts = [aretakis_series(r.trace, law, bg.mass, initial.amplitude).max_drift for r in results]
        report.diagnostics["H_drift"] = _summarize("H_drift", spacings, drifts)
    residuals = [energy_balance_residual(bg, r) for r in results]
    report.diagnostics["energy_balance"] = _summarize("energy_balance", spacings, residuals)
    if keep_results:
        report.results = results
    return report
