"""Evolve an l = 0 bump on the extreme background and watch the horizon.

The charge H_0 = ∂_rψ + ψ/M stays fixed along the horizon while ψ decays
and ∂_r²ψ grows linearly. Takes about ten seconds on one core.
"""

import numpy as np

from horizonlab import BlackHoleBackground, EvolutionConfig, InitialDataSpec, RadialGrid, derive_conservation_law, evolve
from horizonlab.diagnostics import aretakis_series, blowup_slope


def main() -> None:
    bg = BlackHoleBackground.extreme_rn(1.0)
    t_final = 200.0
    grid = RadialGrid.covering(bg.r_plus, 12.0 + t_final, 0.04, 0.02)
    config = EvolutionConfig(t_final=t_final, order=8, output_every=20.0)
    result = evolve(bg, grid, InitialDataSpec(l=0, center=2.0, width=0.5), config)

    law = derive_conservation_law(0)
    charge = aretakis_series(result.trace, law)
    print(f"H_0 = {charge.initial:.8f}, max relative drift {charge.max_drift:.2e}")
    print(f"{'t*':>6} {'psi':>12} {'d_r psi':>12} {'d_r^2 psi':>12}")
    for t in np.linspace(0.0, t_final, 11):
        i = int(np.argmin(np.abs(result.trace.times - t)))
        row = result.trace.radial[i]
        print(f"{result.trace.times[i]:6.1f} {row[0]:12.4e} {row[1]:12.4e} {row[2]:12.4e}")
    print(f"late-time slope of |d_r^2 psi|: {blowup_slope(result.trace, 0, 2).exponent:.3f} (expected 1)")


if __name__ == "__main__":
    main()
