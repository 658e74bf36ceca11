"""Run configuration: parsing, validation and canonical serialization.

A run is described by a JSON document::

    {
      "background":   {"mass": 1.0, "charge_ratio": 1.0},
      "l": 0,
      "grid":         {"r_max": 212.0, "h": 0.02, "horizon_spacing": 0.02, "stretch_length": 1.0},
      "initial_data": {"kind": "gaussian_bump", "center": 2.0, "width": 0.5, "amplitude": 1.0, "momentum": "zero"},
      "evolution":    {"t_final": 200.0, "cfl": 0.5, "output_every": 5.0, "order": 8, ...},
      "diagnostics":  ["aretakis_drift", {"check": "blowup_slope", "k": 2}],
      "output_dir":   "runs/l0"
    }

Every section and field is optional; missing values take the documented
defaults. ``grid`` accepts either ``h`` (far-field spacing) or
``n_points``; without either, ``h = 0.1``. Without ``r_max`` the grid
reaches ``photon sphere + t_final + 10 M`` so that the outer boundary
stays causally disconnected from the region of interest.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .evolution import EvolutionConfig, InitialDataSpec, RadialGrid
from .geometry import BlackHoleBackground, photon_sphere

DEFAULT_H = 0.1
DEFAULT_BUFFER = 10.0


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class BackgroundSpec:
    mass: float = 1.0
    charge_ratio: float = 1.0

    def build(self) -> BlackHoleBackground:
        return BlackHoleBackground.from_ratio(self.mass, self.charge_ratio)


@dataclass(frozen=True)
class GridSpec:
    """Radial grid request; see :class:`horizonlab.evolution.RadialGrid`."""

    r_max: float | None = None
    h: float | None = None
    n_points: int | None = None
    horizon_spacing: float = 1.0
    stretch_length: float = 1.0

    def resolved_r_max(self, bg: BlackHoleBackground, t_final: float) -> float:
        if self.r_max is not None:
            return self.r_max
        return photon_sphere(bg) + t_final + DEFAULT_BUFFER * bg.mass

    def build(self, bg: BlackHoleBackground, t_final: float) -> RadialGrid:
        r_max = self.resolved_r_max(bg, t_final)
        if self.n_points is not None:
            probe = RadialGrid(bg.r_plus, 1.0, 16, self.horizon_spacing, self.stretch_length)
            xi_max = float(probe.xi_of_x(r_max - bg.r_plus))
            h = xi_max / (self.n_points - 1)
            return RadialGrid(bg.r_plus, h, self.n_points, self.horizon_spacing, self.stretch_length)
        h = DEFAULT_H if self.h is None else self.h
        return RadialGrid.covering(bg.r_plus, r_max, h, self.horizon_spacing, self.stretch_length)

    def refined(self, factor: int) -> "GridSpec":
        """The same grid with the spacing divided by ``factor``."""
        if self.n_points is not None:
            return dataclasses.replace(self, n_points=(self.n_points - 1) * factor + 1)
        h = DEFAULT_H if self.h is None else self.h
        return dataclasses.replace(self, h=h / factor)


@dataclass(frozen=True)
class CheckSpec:
    """A named diagnostic with its parameters (see :mod:`horizonlab.pipeline`)."""

    name: str
    params: dict = field(default_factory=dict)

    def to_json(self):
        if not self.params:
            return self.name
        return {"check": self.name, **self.params}

    @property
    def label(self) -> str:
        """File-system friendly identifier, unique per name and parameters."""
        if not self.params:
            return self.name
        parts = [f"{k}={self.params[k]}" for k in sorted(self.params)]
        text = "_".join([self.name, *parts])
        return "".join(c if c.isalnum() or c in "=._-" else "-" for c in text)


@dataclass(frozen=True)
class RunConfig:
    background: BackgroundSpec = BackgroundSpec()
    l: int = 0
    grid: GridSpec = GridSpec()
    initial_data: InitialDataSpec = InitialDataSpec()
    evolution: EvolutionConfig = EvolutionConfig()
    diagnostics: tuple = ()
    output_dir: str = "horizonlab_run"

    def build_background(self) -> BlackHoleBackground:
        return self.background.build()

    def build_grid(self) -> RadialGrid:
        return self.grid.build(self.build_background(), self.evolution.t_final)

    def to_dict(self) -> dict:
        initial = dataclasses.asdict(self.initial_data)
        initial.pop("l")
        for key in ("psi_samples", "pi_samples"):
            if initial[key] is not None:
                initial[key] = list(initial[key])
        return {
            "background": dataclasses.asdict(self.background),
            "l": self.l,
            "grid": dataclasses.asdict(self.grid),
            "initial_data": initial,
            "evolution": dataclasses.asdict(self.evolution),
            "diagnostics": [c.to_json() for c in self.diagnostics],
            "output_dir": self.output_dir,
        }


def serialize(config: RunConfig) -> str:
    """Canonical JSON text: every field present, fixed key order, trailing newline."""
    return json.dumps(config.to_dict(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_integer(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _section(doc: dict, name: str, errors: list) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        errors.append(f"{name} must be an object")
        return {}
    return value


def _typed_fields(section: dict, prefix: str, errors: list, specs: dict) -> dict:
    """Check keys and types of ``section`` against ``specs = {key: (kind, nullable)}``."""
    out = {}
    for key, value in section.items():
        if key not in specs:
            errors.append(f"{prefix}.{key}: unknown field")
            continue
        kind, nullable = specs[key]
        if value is None and nullable:
            out[key] = None
        elif kind == "number" and _is_number(value):
            out[key] = float(value)
        elif kind == "integer" and _is_integer(value):
            out[key] = value
        elif kind == "string" and isinstance(value, str):
            out[key] = value
        elif kind == "samples" and isinstance(value, list) and all(_is_number(v) for v in value):
            out[key] = tuple(float(v) for v in value)
        else:
            errors.append(f"{prefix}.{key} must be a {kind}")
    return out


def _validated(cls, values: dict, prefix: str, errors: list):
    """Build ``cls(**values)``; field constraints are checked one at a time so all are reported."""
    bad = False
    for key, value in values.items():
        try:
            cls(**{key: value})
        except (TypeError, ValueError) as exc:
            errors.append(f"{prefix}.{key}: {exc}")
            bad = True
    if bad:
        return None
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        errors.append(f"{prefix}: {exc}")
        return None


_EVOLUTION_FIELDS = {
    "t_final": ("number", False),
    "cfl": ("number", False),
    "output_every": ("number", False),
    "order": ("integer", False),
    "outer_boundary": ("string", False),
    "integrator": ("string", False),
    "dissipation": ("number", False),
    "trace_order": ("integer", True),
    "trace_fit_width": ("number", False),
}
_INITIAL_FIELDS = {
    "kind": ("string", False),
    "center": ("number", False),
    "width": ("number", False),
    "amplitude": ("number", False),
    "momentum": ("string", False),
    "psi_samples": ("samples", True),
    "pi_samples": ("samples", True),
}
_GRID_FIELDS = {
    "r_max": ("number", True),
    "h": ("number", True),
    "n_points": ("integer", True),
    "horizon_spacing": ("number", False),
    "stretch_length": ("number", False),
}
_BACKGROUND_FIELDS = {"mass": ("number", False), "charge_ratio": ("number", False)}
_TOP_LEVEL = ("background", "l", "grid", "initial_data", "evolution", "diagnostics", "output_dir")


def _parse_diagnostics(value, errors: list) -> tuple:
    from .pipeline import CHECKS  # the registry lives with the check implementations

    if not isinstance(value, list):
        errors.append("diagnostics must be a list")
        return ()
    checks = []
    for i, item in enumerate(value):
        if isinstance(item, str):
            name, params = item, {}
        elif isinstance(item, dict) and isinstance(item.get("check"), str):
            params = {k: v for k, v in item.items() if k != "check"}
            name = item["check"]
        else:
            errors.append(f"diagnostics[{i}] must be a check name or an object with a 'check' field")
            continue
        if name not in CHECKS:
            errors.append(f"diagnostics[{i}]: unknown check {name!r}; choose from {sorted(CHECKS)}")
            continue
        checks.append(CheckSpec(name, params))
    return tuple(checks)


def config_from_dict(doc) -> RunConfig:
    """Validate a decoded JSON document; raises :class:`ConfigError` listing all problems."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["the configuration must be a JSON object"])
    for key in doc:
        if key not in _TOP_LEVEL:
            errors.append(f"{key}: unknown field")

    bg_values = _typed_fields(_section(doc, "background", errors), "background", errors, _BACKGROUND_FIELDS)
    background = BackgroundSpec(**bg_values)
    if not background.mass > 0:
        errors.append("background.mass must be positive")
    if not 0 <= background.charge_ratio <= 1:
        errors.append("charge_ratio must lie in [0,1]")

    l = doc.get("l", 0)
    if not _is_integer(l) or l < 0:
        errors.append("l must be a non-negative integer")
        l = 0

    ev_values = _typed_fields(_section(doc, "evolution", errors), "evolution", errors, _EVOLUTION_FIELDS)
    evolution = _validated(EvolutionConfig, ev_values, "evolution", errors)

    init_values = _typed_fields(_section(doc, "initial_data", errors), "initial_data", errors, _INITIAL_FIELDS)
    initial = _validated(InitialDataSpec, {**init_values, "l": l}, "initial_data", errors)

    grid_values = _typed_fields(_section(doc, "grid", errors), "grid", errors, _GRID_FIELDS)
    grid = GridSpec(**grid_values)
    if grid.h is not None and grid.n_points is not None:
        errors.append("grid: give either h or n_points, not both")
    if grid.h is not None and not grid.h > 0:
        errors.append("grid.h must be positive")
    if grid.n_points is not None and grid.n_points < 16:
        errors.append("grid.n_points must be at least 16")
    if not 0 < grid.horizon_spacing <= 1:
        errors.append("grid.horizon_spacing must lie in (0, 1]")
    if not grid.stretch_length > 0:
        errors.append("grid.stretch_length must be positive")

    diagnostics = _parse_diagnostics(doc.get("diagnostics", []), errors)
    output_dir = doc.get("output_dir", RunConfig.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir must be a non-empty string")

    # Cross-field consistency, only meaningful once the parts are valid.
    if not errors and evolution is not None and initial is not None:
        bg = background.build()
        q = photon_sphere(bg)
        r_max = grid.resolved_r_max(bg, evolution.t_final)
        if r_max <= q:
            errors.append(f"grid.r_max must exceed the photon sphere r = {q:g}")
        elif evolution.outer_boundary == "causal_buffer" and r_max < q + evolution.t_final:
            errors.append(
                f"grid.r_max must be at least photon sphere + t_final = {q + evolution.t_final:g} "
                "for the causal_buffer outer boundary"
            )
        if initial.kind == "gaussian_bump" and not bg.r_plus < initial.center < r_max:
            errors.append("initial_data.center must lie inside the grid")
        if initial.kind == "custom" or initial.momentum == "custom":
            try:
                n = grid.build(bg, evolution.t_final).n_points
            except ValueError as exc:
                errors.append(f"grid: {exc}")
            else:
                for key in ("psi_samples", "pi_samples"):
                    samples = getattr(initial, key)
                    if samples is not None and len(samples) != n:
                        errors.append(f"initial_data.{key} must hold {n} values (one per grid node)")

    if errors:
        raise ConfigError(errors)
    return RunConfig(background, l, grid, initial, evolution, diagnostics, output_dir)


def parse_config(text: str) -> RunConfig:
    """Parse and validate JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    return config_from_dict(doc)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
