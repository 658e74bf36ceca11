"""Bulk-term signs of the named multiplier fields near an extreme horizon."""

import numpy as np

from horizonlab import BlackHoleBackground
from horizonlab.currents import bulk_form, killing_T, morawetz_X_0, positivity_scan, redshift_N


def main() -> None:
    bg = BlackHoleBackground.extreme_rn(1.0)
    for V in (redshift_N(bg), redshift_N(bg, modified=True)):
        report = positivity_scan(bg, V, (bg.r_plus, 9 / 8))
        print(f"{V.name:>10}: min eigenvalue {report.min_eigenvalue:+.3e} at r = {report.witness_r:.6f}, "
              f"min angular {report.min_angular:+.3e} -> {'PASS' if report.passed else 'FAIL'}")
    r = np.linspace(bg.r_plus, 20.0, 2000)
    print(f"K^T identically zero: {bulk_form(bg, killing_T(bg), r).is_zero()}")
    chart = bulk_form(bg, morawetz_X_0(bg), r[1:]).in_static_chart(bg)
    print(f"X_0 static-chart ratio tt : r*r* = 1 : {np.mean(chart['rstar_rstar'] / chart['tt']):.12g}")


if __name__ == "__main__":
    main()
