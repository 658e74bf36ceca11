"""Linear waves on Reissner–Nordström exteriors up to and including the event horizon.

Modules:

* :mod:`~horizonlab.geometry` – backgrounds, slices, tortoise coordinate.
* :mod:`~horizonlab.horizon_calculus` – exact horizon conservation laws ``H_l``.
* :mod:`~horizonlab.evolution` – mode evolution in ingoing coordinates.
* :mod:`~horizonlab.currents` – multipliers, bulk terms and fluxes.
* :mod:`~horizonlab.diagnostics` – rates, charges and functional inequalities.
* :mod:`~horizonlab.config`, :mod:`~horizonlab.pipeline`, :mod:`~horizonlab.cli` – runs and the command line.
"""

__version__ = "0.1.0"

from .geometry import BlackHoleBackground, DomainError, photon_sphere, surface_gravity, tortoise  # noqa: E402
from .horizon_calculus import ConservationLaw, derive_conservation_law  # noqa: E402
from .evolution import EvolutionConfig, InitialDataSpec, ModeField, RadialGrid, evolve  # noqa: E402

__all__ = [
    "BlackHoleBackground",
    "ConservationLaw",
    "DomainError",
    "EvolutionConfig",
    "InitialDataSpec",
    "ModeField",
    "RadialGrid",
    "derive_conservation_law",
    "evolve",
    "photon_sphere",
    "surface_gravity",
    "tortoise",
    "__version__",
]
