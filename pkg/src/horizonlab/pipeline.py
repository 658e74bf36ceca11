"""Run orchestration: derive → evolve → analyze, with on-disk outputs.

Layout of a run directory::

    config.json              canonical configuration
    laws.json                H_l coefficients (extreme backgrounds only)
    trace.csv                tstar, psi, dr1..drK, [H_l], dv, outer_flux
    snapshots/snap_NNNN.csv  "# t*=<time>" then r, psi, pi, phi_r
    checks/<label>.json      verdict {check, pass, measured, expected, tolerance, details}
    checks/<label>.csv       the series the verdict was computed from
    checks/<label>.plt       gnuplot script for that series
    manifest.json            config echo, version, timestamps, verdicts, file inventory

Every data file is a deterministic function of the configuration; only
``manifest.json`` carries timestamps.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import CheckSpec, RunConfig, load_config, serialize
from .convergence import energy_balance_residual
from .currents import commuted_energy, flux_through_slice, higher_order_energy, killing_T, multiplier, redshift_N
from .diagnostics import (
    HorizonSeries,
    aretakis_series,
    blowup_slope,
    energy_timeseries,
    expected_blowup_exponent,
    fit_power_law,
    hardy_check,
    is_generic,
    late_window,
    poincare_check,
    pseudo_aretakis_series,
)
from .evolution import EvolutionResult, HorizonTrace, ModeField, RadialGrid, evolve
from .geometry import BlackHoleBackground
from .horizon_calculus import derive_conservation_law

THREADS_ENV = "HORIZONLAB_THREADS"
FLOAT_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Run data
# ---------------------------------------------------------------------------


@dataclass
class RunData:
    """What the checks need from a run, whether fresh or loaded from disk."""

    config: RunConfig
    background: BlackHoleBackground
    grid: RadialGrid
    trace: HorizonTrace
    outer_flux: np.ndarray
    snapshots: list

    @property
    def l(self) -> int:
        return self.config.l

    @property
    def t_final(self) -> float:
        return float(self.trace.times[-1])

    @classmethod
    def from_result(cls, config: RunConfig, result: EvolutionResult) -> "RunData":
        return cls(config, result.background, result.grid, result.trace, result.outer_flux, result.snapshots)

    @classmethod
    def load(cls, directory) -> "RunData":
        directory = Path(directory)
        config = load_config(directory / "config.json")
        bg = config.build_background()
        grid = config.build_grid()
        trace, outer = read_trace(directory / "trace.csv", config)
        snapshots = [read_snapshot(p, grid, config.l) for p in sorted((directory / "snapshots").glob("snap_*.csv"))]
        return cls(config, bg, grid, trace, outer, snapshots)


def trace_columns(config: RunConfig, kmax: int) -> list[str]:
    cols = ["tstar", "psi"] + [f"dr{k}" for k in range(1, kmax + 1)]
    if config.build_background().extreme and kmax >= config.l + 1:
        cols.append(f"H_{config.l}")
    return cols + ["dv", "outer_flux"]


def write_trace(path: Path, config: RunConfig, bg: BlackHoleBackground, trace: HorizonTrace, outer: np.ndarray) -> None:
    cols = trace_columns(config, trace.order)
    data = [trace.times, *trace.radial.T]
    if f"H_{config.l}" in cols:
        law = derive_conservation_law(config.l)
        data.append(aretakis_series(trace, law, bg.mass).values)
    data += [trace.dv, outer]
    np.savetxt(path, np.column_stack(data), fmt=FLOAT_FORMAT, delimiter=",", header=",".join(cols), comments="")


def read_trace(path: Path, config: RunConfig) -> tuple[HorizonTrace, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        cols = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    radial_cols = [i for i, c in enumerate(cols) if c == "psi" or (c.startswith("dr") and c[2:].isdigit())]
    trace = HorizonTrace(
        times=data[:, cols.index("tstar")],
        radial=data[:, radial_cols],
        dv=data[:, cols.index("dv")],
    )
    return trace, data[:, cols.index("outer_flux")]


def write_snapshot(path: Path, snap: ModeField) -> None:
    header = f"# t*={snap.time!r}\nr,psi,pi,phi_r"
    data = np.column_stack([snap.grid.r, snap.psi, snap.pi, snap.phi_r])
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=",", header=header, comments="")


def read_snapshot(path: Path, grid: RadialGrid, l: int) -> ModeField:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith("# t*="):
        raise ValueError(f"{path}: missing '# t*=' header")
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    if data.shape[0] != grid.n_points or not np.allclose(data[:, 0], grid.r, rtol=1e-13, atol=0):
        raise ValueError(f"{path}: radii do not match the configured grid")
    return ModeField(l=l, psi=data[:, 1].copy(), pi=data[:, 2].copy(), phi_r=data[:, 3].copy(), time=float(first[5:]), grid=grid)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    """A verdict plus the two-column series it was computed from."""

    check: str
    passed: bool
    measured: object
    expected: object
    tolerance: object
    details: dict = field(default_factory=dict)
    series: tuple | None = None  # (x_label, y_label, x, y)

    def verdict(self) -> dict:
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "measured": self.measured,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "details": self.details,
        }


def _require_extreme(run: RunData, name: str) -> None:
    if not run.background.extreme:
        raise ValueError(f"{name} needs an extreme background (charge_ratio = 1)")


def _window(run: RunData, window) -> tuple[float, float]:
    return tuple(window) if window is not None else late_window(run.t_final)


def check_aretakis_drift(run: RunData, tolerance: float = 0.01) -> CheckResult:
    """Relative drift of ``H_l`` along the horizon."""
    _require_extreme(run, "aretakis_drift")
    amplitude = run.config.initial_data.amplitude
    law = derive_conservation_law(run.l)
    series = aretakis_series(run.trace, law, run.background.mass, amplitude)
    generic = is_generic(law, run.trace, amplitude, run.background.mass)
    drift = series.max_drift
    return CheckResult(
        "aretakis_drift",
        generic and drift <= tolerance,
        drift,
        0.0,
        tolerance,
        {"H_initial": series.initial, "H_final": float(series.values[-1]), "generic": generic},
        ("tstar", f"H_{run.l}", series.times, series.values),
    )


def check_blowup_slope(run: RunData, k: int | None = None, tolerance: float = 0.15, window=None) -> CheckResult:
    """Late-window log-log slope of ``|∂_r^k ψ(t*, r_+)|`` against ``k - l - 1``."""
    k = run.l + 2 if k is None else int(k)
    fit = blowup_slope(run.trace, run.l, k, _window(run, window))
    expected = expected_blowup_exponent(run.l, k)
    series = HorizonSeries.from_trace(run.trace, k)
    return CheckResult(
        "blowup_slope",
        abs(fit.exponent - expected) <= tolerance,
        fit.exponent,
        expected,
        tolerance,
        {"k": k, "window": list(fit.window), "sign_changes": fit.sign_changes, "residual": fit.residual},
        ("tstar", f"dr{k}", series.times, series.values),
    )


def check_nondecay(run: RunData, tolerance: float = 0.02, window=None) -> CheckResult:
    """``∂_r^{l+1}ψ → H_l`` on the horizon while ``ψ, …, ∂_r^lψ`` decay."""
    _require_extreme(run, "nondecay")
    l = run.l
    law = derive_conservation_law(l)
    H = aretakis_series(run.trace, law, run.background.mass)
    win = _window(run, window)
    keep = (H.times >= win[0]) & (H.times <= win[1])
    top = run.trace.derivative(l + 1)
    gap = float(np.max(np.abs(top[keep] - H.values[keep]) / np.abs(H.values[keep])))
    exponents = {f"dr{j}": fit_power_law(HorizonSeries.from_trace(run.trace, j), win).exponent for j in range(l + 1)}
    decaying = all(p < 0 for p in exponents.values())
    return CheckResult(
        "nondecay",
        gap <= tolerance and decaying,
        gap,
        0.0,
        tolerance,
        {"lower_derivative_exponents": exponents, "lower_derivatives_decay": decaying, "window": list(win)},
        ("tstar", f"dr{l + 1}", run.trace.times, top),
    )


POINTWISE_RATES = {0: 0.6, 1: 0.75}


def check_pointwise_decay(run: RunData, rate: float | None = None, tolerance: float = 0.05, window=None) -> CheckResult:
    """``|ψ(t*, r_+)| · t*^rate`` is non-increasing over the late window."""
    rate = POINTWISE_RATES.get(run.l, 1.0) if rate is None else float(rate)
    t = run.trace.times
    keep = t > 0
    product = HorizonSeries(t[keep], np.abs(run.trace.derivative(0)[keep]) * t[keep] ** rate, "psi_weighted")
    fit = fit_power_law(product, _window(run, window))
    return CheckResult(
        "pointwise_decay",
        fit.exponent <= tolerance,
        fit.exponent,
        0.0,
        tolerance,
        {"rate": rate, "window": list(fit.window), "sense": "measured <= tolerance"},
        ("tstar", "abs_psi_times_t_rate", product.times, product.values),
    )


def _multiplier(run: RunData, name: str):
    if name == "N_mod":
        return redshift_N(run.background, modified=True)
    return multiplier(run.background, name)


def check_energy_decay(
    run: RunData,
    multiplier: str = "T",
    r_min: float | None = None,
    r_max: float | None = None,
    max_exponent: float | None = None,
    min_exponent: float | None = None,
    window=None,
) -> CheckResult:
    """Late-window decay exponent of a flux through ``Σ_{t*} ∩ [r_min, r_max]``.

    Pass when the exponent is ``≤ max_exponent`` (default ``-1.5``) or, if
    ``min_exponent`` is given instead, ``≥ min_exponent``.
    """
    bg = run.background
    region = (bg.r_plus if r_min is None else r_min, 2 * bg.mass if r_max is None else r_max)
    if max_exponent is None and min_exponent is None:
        max_exponent = -1.5
    V = _multiplier(run, multiplier)
    series, fit = energy_timeseries(bg, run, V, region, _window(run, window))
    exponent = fit.exponent if fit is not None else float("-inf")
    passed = (max_exponent is None or exponent <= max_exponent) and (min_exponent is None or exponent >= min_exponent)
    return CheckResult(
        "energy_decay",
        passed,
        exponent,
        {"max_exponent": max_exponent, "min_exponent": min_exponent},
        None,
        {"multiplier": V.name, "region": list(region)},
        ("tstar", f"{V.name}_energy", series.times, series.values),
    )


def check_energy_balance(run: RunData, tolerance: float = 0.005) -> CheckResult:
    """T-energy balance ``E(0) = E(T) + horizon flux + outer flux``."""
    residual = energy_balance_residual(run.background, run)
    T = killing_T(run.background)
    times = np.array([s.time for s in run.snapshots])
    energies = np.array([flux_through_slice(run.background, T, s).value for s in run.snapshots])
    return CheckResult(
        "energy_balance",
        residual <= tolerance,
        residual,
        0.0,
        tolerance,
        {"E_initial": float(energies[0]), "E_final": float(energies[-1])},
        ("tstar", "T_energy", times, energies),
    )


def _region_end(run: RunData, r0) -> float:
    return run.background.r_plus + run.background.mass / 8 if r0 is None else float(r0)


def _higher_order_series(run: RunData, k: int, r0: float) -> HorizonSeries:
    times = np.array([s.time for s in run.snapshots])
    values = np.array([higher_order_energy(run.background, s, r0, k) for s in run.snapshots])
    return HorizonSeries(times, values, f"higher_order_k{k}")


def check_higher_order_bounded(
    run: RunData, k: int = 1, r0: float | None = None, factor: float = 2.0, reference_time: float = 10.0, window=None
) -> CheckResult:
    """``sup`` over the late window of the higher-order energy on ``[r_+, r0]`` ≤ ``factor`` × its early value."""
    r0 = _region_end(run, r0)
    series = _higher_order_series(run, int(k), r0)
    win = _window(run, window)
    ref = series.values[int(np.argmin(np.abs(series.times - reference_time)))]
    late = series.window(*win).values
    ratio = float(np.max(late) / ref)
    return CheckResult(
        "higher_order_bounded",
        ratio <= factor,
        ratio,
        {"max_ratio": factor},
        None,
        {"k": int(k), "r0": r0, "reference_time": reference_time, "reference_value": float(ref), "window": list(win)},
        ("tstar", series.label, series.times, series.values),
    )


def check_higher_order_nondecay(
    run: RunData, k: int = 1, r0: float | None = None, min_exponent: float = -0.1, window=None
) -> CheckResult:
    """The higher-order energy on ``[r_+, r0]`` does not trend to zero."""
    r0 = _region_end(run, r0)
    series = _higher_order_series(run, int(k), r0)
    fit = fit_power_law(series, _window(run, window))
    return CheckResult(
        "higher_order_nondecay",
        fit.exponent >= min_exponent,
        fit.exponent,
        {"min_exponent": min_exponent},
        None,
        {"k": int(k), "r0": r0, "window": list(fit.window)},
        ("tstar", series.label, series.times, series.values),
    )


def check_commuted_energy_nondecay(
    run: RunData, k: int = 1, multiplier: str = "N", r0: float | None = None, min_exponent: float = -0.1, window=None
) -> CheckResult:
    """The flux of ``V`` for ``∂_r^kψ`` through ``[r_+, r0]`` grows or saturates."""
    r0 = _region_end(run, r0)
    V = _multiplier(run, multiplier)
    times = np.array([s.time for s in run.snapshots])
    values = np.array([commuted_energy(run.background, V, s, int(k), (run.background.r_plus, r0)) for s in run.snapshots])
    series = HorizonSeries(times, values, f"{V.name}_energy_dr{k}")
    fit = fit_power_law(series, _window(run, window))
    return CheckResult(
        "commuted_energy_nondecay",
        fit.exponent >= min_exponent,
        fit.exponent,
        {"min_exponent": min_exponent},
        None,
        {"k": int(k), "multiplier": V.name, "r0": r0, "window": list(fit.window)},
        ("tstar", series.label, times, values),
    )


def check_pseudo_aretakis_decay(run: RunData, window=None) -> CheckResult:
    """``∂_rψ + ψ/M`` on ``r = r_+`` fits a negative exponent."""
    series = pseudo_aretakis_series(run.background, run.trace)
    fit = fit_power_law(series, _window(run, window))
    return CheckResult(
        "pseudo_aretakis_decay",
        fit.exponent < 0,
        fit.exponent,
        {"max_exponent": 0.0},
        None,
        {"window": list(fit.window), "sign_changes": fit.sign_changes, "extreme": run.background.extreme},
        ("tstar", series.label, series.times, series.values),
    )


def check_hardy(run: RunData, which: str = "first", r0: float | None = None, r1: float | None = None, epsilon: float = 1.0) -> CheckResult:
    """Hardy inequality ratio ``lhs/rhs ≤ 1`` on every stored slice."""
    times, ratios, notes = [], [], set()
    for snap in run.snapshots:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = hardy_check(run.background, snap, which, r0=r0, r1=r1, epsilon=epsilon)
        notes.update(str(w.message) for w in caught)
        times.append(snap.time)
        ratios.append(res.ratio)
    worst = float(np.max(ratios))
    return CheckResult(
        "hardy",
        worst <= 1.0,
        worst,
        {"max_ratio": 1.0},
        None,
        {"which": which, "slices": len(ratios), "warnings": sorted(notes)},
        ("tstar", "hardy_ratio", np.array(times), np.array(ratios)),
    )


def check_poincare(run: RunData, tolerance: float = 1e-12) -> CheckResult:
    """Pointwise Poincaré equality for the evolved mode on every slice."""
    times, gaps = [], []
    for snap in run.snapshots:
        times.append(snap.time)
        gaps.append(poincare_check(snap, run.l).max_relative_gap)
    worst = float(np.max(gaps))
    return CheckResult(
        "poincare", worst <= tolerance, worst, 0.0, tolerance, {"slices": len(gaps)}, ("tstar", "max_relative_gap", np.array(times), np.array(gaps))
    )


CHECKS = {
    "aretakis_drift": check_aretakis_drift,
    "blowup_slope": check_blowup_slope,
    "nondecay": check_nondecay,
    "pointwise_decay": check_pointwise_decay,
    "energy_decay": check_energy_decay,
    "energy_balance": check_energy_balance,
    "higher_order_bounded": check_higher_order_bounded,
    "higher_order_nondecay": check_higher_order_nondecay,
    "commuted_energy_nondecay": check_commuted_energy_nondecay,
    "pseudo_aretakis_decay": check_pseudo_aretakis_decay,
    "hardy": check_hardy,
    "poincare": check_poincare,
}


def run_check(run: RunData, spec: CheckSpec) -> CheckResult:
    if spec.name not in CHECKS:
        raise ValueError(f"unknown check {spec.name!r}; choose from {sorted(CHECKS)}")
    return CHECKS[spec.name](run, **spec.params)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


PLOT_TEMPLATE = """set datafile separator ','
set key autotitle columnhead
set xlabel '{x}'
set ylabel '{y}'
set logscale xy
set title '{title}'
plot '{data}' using 1:(abs($2)) with lines
"""


def write_check(directory: Path, spec: CheckSpec, result: CheckResult) -> list[Path]:
    """Write the verdict JSON and, when present, its series CSV and gnuplot script."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{spec.label}.json"]
    paths[0].write_text(json.dumps(result.verdict(), indent=2, default=_jsonable) + "\n", encoding="utf-8")
    if result.series is not None:
        x_label, y_label, x, y = result.series
        csv = directory / f"{spec.label}.csv"
        np.savetxt(csv, np.column_stack([x, y]), fmt=FLOAT_FORMAT, delimiter=",", header=f"{x_label},{y_label}", comments="")
        plt = directory / f"{spec.label}.plt"
        plt.write_text(PLOT_TEMPLATE.format(x=x_label, y=y_label, title=spec.label, data=csv.name), encoding="utf-8")
        paths += [csv, plt]
    return paths


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def thread_count() -> int:
    """Worker threads for independent checks, capped by ``HORIZONLAB_THREADS``."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def write_run(directory: Path, config: RunConfig, result: EvolutionResult) -> list[Path]:
    """Write config, laws (extreme only), trace and snapshots."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "config.json"]
    paths[0].write_text(serialize(config), encoding="utf-8")
    bg = result.background
    if bg.extreme:
        laws = directory / "laws.json"
        laws.write_text(json.dumps(derive_conservation_law(config.l).to_json(), indent=2) + "\n", encoding="utf-8")
        paths.append(laws)
    trace = directory / "trace.csv"
    write_trace(trace, config, bg, result.trace, result.outer_flux)
    paths.append(trace)
    snaps = directory / "snapshots"
    snaps.mkdir(exist_ok=True)
    for i, snap in enumerate(result.snapshots):
        p = snaps / f"snap_{i:04d}.csv"
        write_snapshot(p, snap)
        paths.append(p)
    return paths


@dataclass
class RunManifest:
    config: dict
    version: str
    started: str
    finished: str = ""
    stages: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    files: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(v["pass"] for v in self.verdicts)

    def to_json(self) -> dict:
        return {
            "tool": "horizonlab",
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "config": self.config,
            "stages": self.stages,
            "verdicts": self.verdicts,
            "errors": self.errors,
            "files": self.files,
        }


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run_pipeline(config: RunConfig, output_dir=None, *, keep: dict | None = None) -> RunManifest:
    """Derive (extreme only), evolve, then run the configured checks.

    Stage failures are recorded in ``manifest.errors`` with the stage name
    instead of propagating. ``keep``, if given, receives the
    :class:`RunData` under key ``"run"`` for in-process reuse.
    """
    directory = Path(config.output_dir if output_dir is None else output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=config.to_dict(), version=__version__, started=_now())
    paths: list[Path] = []
    bg = config.build_background()

    def stage(name: str, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:  # recorded, not raised: the manifest is the report
            manifest.errors.append({"stage": name, "error": f"{type(exc).__name__}: {exc}"})
            manifest.stages.append({"stage": name, "seconds": time.perf_counter() - t0, "ok": False})
            return None
        manifest.stages.append({"stage": name, "seconds": time.perf_counter() - t0, "ok": True})
        return out

    if bg.extreme:
        stage("derive", lambda: derive_conservation_law(config.l))
    result = stage("evolve", lambda: evolve(bg, config.build_grid(), config.initial_data, config.evolution))
    if result is not None:
        written = stage("write", lambda: write_run(directory, config, result))
        paths += written or []
        run = RunData.from_result(config, result)
        if keep is not None:
            keep["run"] = run
        specs = list(config.diagnostics)
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            futures = [pool.submit(stage, f"analyze:{s.label}", lambda s=s: run_check(run, s)) for s in specs]
            outcomes = [f.result() for f in futures]
        for spec, outcome in zip(specs, outcomes):
            if outcome is not None:
                manifest.verdicts.append(json.loads(json.dumps(outcome.verdict(), default=_jsonable)))
                paths += write_check(directory / "checks", spec, outcome)

    manifest.files = [{"path": p.relative_to(directory).as_posix(), "bytes": p.stat().st_size} for p in paths]
    manifest.finished = _now()
    (directory / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")
    return manifest
