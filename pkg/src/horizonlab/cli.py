"""Command line interface.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import CheckSpec, ConfigError, load_config, serialize
from .currents import MULTIPLIERS, bulk_form, multiplier, positivity_scan, redshift_N
from .geometry import BlackHoleBackground, DomainError
from .horizon_calculus import derive_conservation_law, restrict_commuted_wave

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input detected after argument parsing; reported with exit code 2."""


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def _load(path: str):
    if not Path(path).is_file():
        raise UsageError(f"no such configuration file: {path}")
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError("invalid configuration:\n  " + "\n  ".join(exc.errors)) from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_derive_laws(args) -> int:
    if args.l < 0:
        raise UsageError("--l must be non-negative")
    law = derive_conservation_law(args.l)
    if args.json:
        doc = law.to_json()
        if args.table is not None:
            identity = restrict_commuted_wave(args.table, args.l)
            doc["identity_k"] = args.table
            doc["identity"] = str(identity)
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    print(f"H_{law.l} = ∂_r^{law.l + 1}ψ + Σ β_i ∂_r^iψ on r = M")
    print(f"{'i':>3}  {'beta_i':>16}  {'decimal (M = ' + format(args.mass, 'g') + ')':>22}")
    for i, beta in enumerate(law.betas):
        print(f"{i:>3}  {str(beta):>16}  {beta.evaluate(args.mass):>22.15g}")
    if args.table is not None:
        print()
        print(f"restricted identity for k = {args.table}:")
        print(f"  {restrict_commuted_wave(args.table, args.l)}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    from .evolution import evolve
    from .pipeline import write_run

    config = _load(args.config)
    out = Path(args.output or config.output_dir)
    bg = config.build_background()
    result = evolve(bg, config.build_grid(), config.initial_data, config.evolution)
    paths = write_run(out, config, result)
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .pipeline import CHECKS, RunData, run_check, write_check

    if args.check not in CHECKS:
        raise UsageError(f"unknown check {args.check!r}; choose from {', '.join(sorted(CHECKS))}")
    run_dir = Path(args.run)
    if not (run_dir / "config.json").is_file():
        raise UsageError(f"{run_dir} is not a run directory (config.json missing)")
    run = RunData.load(run_dir)
    spec = CheckSpec(args.check, _params(args.param))
    try:
        result = run_check(run, spec)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    write_check(Path(args.output) if args.output else run_dir / "checks", spec, result)
    print(json.dumps(result.verdict(), default=lambda v: v.item() if hasattr(v, "item") else str(v)))
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_verify_positivity(args) -> int:
    bg = BlackHoleBackground.from_ratio(args.mass, args.charge_ratio)
    options = _params(args.param)
    if args.multiplier == "N_mod":
        V = redshift_N(bg, modified=True, **options)
    elif args.multiplier in MULTIPLIERS:
        V = multiplier(bg, args.multiplier, **options)
    else:
        raise UsageError(f"unknown multiplier {args.multiplier!r}; choose from N_mod, {', '.join(MULTIPLIERS)}")
    rmin = bg.r_plus if args.rmin is None else args.rmin
    rmax = 9 * bg.mass / 8 if args.rmax is None else args.rmax
    report = positivity_scan(bg, V, (rmin, rmax), args.samples, args.tolerance)
    form = bulk_form(bg, V, report.r)
    zero = form.is_zero()
    verdict = "PASS" if report.passed else "FAIL"
    print(
        f"{verdict} multiplier={V.name} r=[{rmin:.15g}, {rmax:.15g}] samples={args.samples} "
        f"min_eigenvalue={report.min_eigenvalue:.6e} at r={report.witness_r:.15g} "
        f"min_angular={report.min_angular:.6e} identically_zero={zero}"
    )
    if args.static_chart:
        chart = form.in_static_chart(bg)
        ratio = np.divide(chart["tt"], chart["rstar_rstar"], out=np.full_like(chart["tt"], np.nan), where=chart["rstar_rstar"] != 0)
        print(f"static chart: tt/r*r* in [{np.nanmin(ratio):.12g}, {np.nanmax(ratio):.12g}], max|t r*| = {np.max(np.abs(chart['t_rstar'])):.3e}")
    csv = Path(args.csv) if args.csv else Path(f"positivity_{args.multiplier}.csv")
    np.savetxt(
        csv,
        np.column_stack([report.r, report.eigenvalues, report.c_ang]),
        fmt="%.17g",
        delimiter=",",
        header="r,eig_min,eig_max,c_ang",
        comments="",
    )
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_convergence(args) -> int:
    from .convergence import convergence_study

    config = _load(args.config)
    bg = config.build_background()
    report = convergence_study(
        bg, config.initial_data, config.evolution, config.build_grid(), args.refinements, args.factor
    )
    doc = report.to_json()
    failed = []
    for name, diag in report.diagnostics.items():
        if name in args.require and (diag.order is None or diag.order < args.min_order):
            failed.append(name)
    if "H_drift" in report.diagnostics:
        base_drift = report.diagnostics["H_drift"].errors[min(1, len(report.spacings) - 1)]
        doc["H_drift_at_second_grid"] = base_drift
        if args.max_drift is not None and base_drift > args.max_drift:
            failed.append("H_drift_tolerance")
    doc["failed"] = failed
    text = json.dumps(doc, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    config = _load(args.config)
    manifest = run_pipeline(config, args.output)
    for v in manifest.verdicts:
        print(f"{'PASS' if v['pass'] else 'FAIL'} {v['check']}: measured={v['measured']} expected={v['expected']}")
    for e in manifest.errors:
        print(f"ERROR in stage {e['stage']}: {e['error']}", file=sys.stderr)
    return EXIT_OK if manifest.passed else EXIT_FAIL


def cmd_show_config(args) -> int:
    sys.stdout.write(serialize(_load(args.config)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="horizonlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"horizonlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("derive-laws", help="exact horizon conservation law H_l")
    p.add_argument("--l", type=int, required=True, help="angular mode number")
    p.add_argument("--mass", type=float, default=1.0, help="M used for the decimal column")
    p.add_argument("--table", type=int, metavar="K", help="also print the restricted identity for ∂_r^K")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_derive_laws)

    p = sub.add_parser("evolve", help="evolve a configuration and write trace and snapshots")
    p.add_argument("config")
    p.add_argument("--output", help="output directory (default: the config's output_dir)")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("analyze", help="run one check on a stored run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--check", required=True, help="check name")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="check parameter (repeatable)")
    p.add_argument("--output", help="directory for the verdict (default: <run>/checks)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify-positivity", help="eigenvalue scan of a multiplier's bulk term")
    p.add_argument("--multiplier", required=True, help=f"N_mod or one of {', '.join(MULTIPLIERS)}")
    p.add_argument("--rmin", type=float)
    p.add_argument("--rmax", type=float)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--charge-ratio", type=float, default=1.0)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="multiplier option (repeatable)")
    p.add_argument("--static-chart", action="store_true", help="also report the (t, r*) coefficient ratio")
    p.add_argument("--csv", help="eigenvalue CSV path (default: positivity_<name>.csv)")
    p.set_defaults(func=cmd_verify_positivity)

    p = sub.add_parser("convergence", help="refinement study of a configuration")
    p.add_argument("config")
    p.add_argument("--refinements", type=int, default=3)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--min-order", type=float, default=1.8)
    p.add_argument("--max-drift", type=float, help="fail if the H_l drift on the second grid exceeds this")
    p.add_argument(
        "--require", nargs="*", default=["H_drift"], help="diagnostics whose order must reach --min-order"
    )
    p.add_argument("--output", help="write the JSON report here")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("run", help="full pipeline: derive, evolve, analyze")
    p.add_argument("config")
    p.add_argument("--output", help="output directory (default: the config's output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("show-config", help="print the canonical form of a configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help (0) or usage error (2)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"horizonlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError) as exc:
        print(f"horizonlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
