"""Command-line interface: ``dnflow <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 solver
failure, 4 corrupt trajectory file, 5 inadmissible geometry.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, ContractError, GeometryError, NumericError,
                     ParameterWindowError, TrajectoryFormatError)
from .io import initial_datum, load_config, read_trajectory, write_step_reports, write_trajectory

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_CORRUPT, EXIT_GEOMETRY = 0, 1, 2, 3, 4, 5


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def csv_text(rows, header) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def emit(text: str, out=None) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def write_csv(rows, header, out=None) -> str:
    text = csv_text(rows, header)
    emit(text, out)
    return text


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    from .stepper import run_scheme

    cfg = load_config(args.config)
    outdir = cfg.resolve_output_dir(args.output_dir)
    psi, F = cfg.build_potentials()
    g = initial_datum(cfg)
    traj = run_scheme(g, psi, F, cfg.time.N, cfg.time.T, cfg.solver, cfg.build_domain())
    outdir.mkdir(parents=True, exist_ok=True)
    digest = write_trajectory(outdir / "trajectory.dnf", traj)
    write_step_reports(outdir / "steps.jsonl", traj.reports)
    print(f"wrote {outdir / 'trajectory.dnf'} sha256={digest}")
    return EXIT_OK


def cmd_energy_report(args) -> int:
    from .energy import LEDGER_COLUMNS, compute_ledger

    traj = read_trajectory(args.trajectory)
    ledger = compute_ledger(traj)
    write_csv(ledger.rows(), LEDGER_COLUMNS, args.out)
    return EXIT_OK if bool(np.all(ledger.d_pass) and np.all(ledger.e_pass)) else EXIT_FAIL


def _default_centers(traj, r, count):
    dom = traj.domain
    axes = [np.linspace(dom.lo[d] + r, dom.hi[d] - r, count) for d in range(dom.n)]
    ts = np.linspace(r * r / 2 + traj.tau, traj.T - r * r / 2, count)
    grid = np.meshgrid(ts, *axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def cmd_regularity_map(args) -> int:
    from .grid import ParabolicCylinder
    from .regularity import decay_classification, local_energy, thresholds

    traj = read_trajectory(args.trajectory)
    alpha = float(traj.F_meta.get("bounds", {}).get("alpha", 1.0))
    params = thresholds(args.epsilon, args.rho, args.vartheta, args.L, args.gamma, traj.domain.n, alpha)
    centers = _default_centers(traj, args.radius, args.count)
    rows = []
    for c in centers:
        t, x = c[0], tuple(c[1:])
        s = local_energy(traj, ParabolicCylinder(x, t, args.radius))
        ev = decay_classification(traj, x, t, args.radius, params, args.scales,
                                  enforce_rho1=not args.ignore_rho1)
        rows.append(list(x) + [t, args.radius, s.T1, s.T2, s.T3, s.E, ev.flag])
    header = [f"x{d}" for d in range(traj.domain.n)] + ["t", "r", "T1", "T2", "T3", "E", "flag"]
    write_csv(rows, header, args.out)
    return EXIT_OK


def cmd_dimension(args) -> int:
    from .regularity import dyadic_radii, fixture_points, parabolic_dimension, singular_candidates

    radii = np.asarray(args.radii, dtype=float) if args.radii else dyadic_radii()
    if args.fixture:
        pts = fixture_points(args.fixture, n=args.n)
        label = args.fixture
    else:
        if not args.trajectory:
            raise ConfigError("give a trajectory or --fixture", "dimension")
        traj = read_trajectory(args.trajectory)
        centers = _default_centers(traj, args.radius, args.count)
        pts = singular_candidates(traj, centers, args.radius, args.threshold)
        label = "singular candidates"
    est = parabolic_dimension(pts, radii, descriptor=label)
    text = csv_text(zip(est.radii, est.counts), ["r", "N"])
    text += f"s,{fmt(est.dimension)}\nresidual,{fmt(est.residual)}\nempty,{int(est.empty)}\n"
    emit(text, args.out)
    return EXIT_OK


def cmd_frac_exponent(args) -> int:
    from .regularity import Region, fractional_quotient_exponent

    traj = read_trajectory(args.trajectory)
    n = traj.domain.n
    span = [traj.domain.hi[d] - traj.domain.lo[d] for d in range(n)]
    lo = args.lo or [traj.domain.lo[d] + 0.2 * span[d] for d in range(n)]
    hi = args.hi or [traj.domain.lo[d] + 0.8 * span[d] for d in range(n)]
    t0 = args.t0 if args.t0 is not None else 0.3 * traj.T
    t1 = args.t1 if args.t1 is not None else 0.7 * traj.T
    hs = args.h or [traj.tau * 2 ** j for j in range(4)]
    fit = fractional_quotient_exponent(traj, args.field, Region(lo, hi, t0, t1), hs)
    text = csv_text(zip(fit.h, fit.values), ["h", "D_h"])
    text += f"slope,{fmt(fit.slope)}\nfloor,{fmt(fit.floor)}\npass,{int(fit.passed)}\n"
    emit(text, args.out)
    return EXIT_OK if fit.passed else EXIT_FAIL


def cmd_validate(args) -> int:
    from .acceptance import run_suite
    from .io import OUTPUT_ENV

    outdir = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "validate_out")
    results = run_suite(outdir, determinism=not args.skip_determinism)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the implicit scheme from a TOML config")
    s.add_argument("config", help="path to the run configuration (TOML)")
    s.add_argument("--output-dir", help="overrides the config and the DNFLOW_OUTPUT_DIR variable")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("energy-report", help="energy ledger of a trajectory as CSV")
    s.add_argument("trajectory")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_energy_report)

    def decay_flags(sp):
        sp.add_argument("--radius", type=float, default=0.1, help="cylinder radius r")
        sp.add_argument("--count", type=int, default=5, help="sample centers per axis")
        sp.add_argument("--L", type=float, default=10.0)
        sp.add_argument("--vartheta", type=float, default=0.25)
        sp.add_argument("--epsilon", type=float, default=0.1)
        sp.add_argument("--rho", type=float, default=0.5)
        sp.add_argument("--gamma", type=float, default=0.75)
        sp.add_argument("--scales", type=int, default=3, help="number of vartheta-scales K")

    s = sub.add_parser("regularity-map", help="local energies and decay flags on a grid of centers")
    s.add_argument("trajectory")
    decay_flags(s)
    s.add_argument("--ignore-rho1", action="store_true",
                   help="diagnostic: start the decay test at --radius even if it exceeds rho1")
    s.add_argument("--out")
    s.set_defaults(func=cmd_regularity_map)

    s = sub.add_parser("dimension", help="parabolic dimension of a point set")
    s.add_argument("trajectory", nargs="?")
    s.add_argument("--fixture", choices=("point", "slice", "box"))
    s.add_argument("--n", type=int, default=1, help="spatial dimension of the fixture")
    s.add_argument("--threshold", type=float, default=1e-3)
    s.add_argument("--radius", type=float, default=0.1, help="r_min for candidate detection")
    s.add_argument("--count", type=int, default=5)
    s.add_argument("--radii", type=float, nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_dimension)

    s = sub.add_parser("frac-exponent", help="fractional time-difference quotients and their slope")
    s.add_argument("trajectory")
    s.add_argument("--field", choices=("vt", "D2v"), default="vt")
    s.add_argument("--lo", type=float, nargs="+")
    s.add_argument("--hi", type=float, nargs="+")
    s.add_argument("--t0", type=float)
    s.add_argument("--t1", type=float)
    s.add_argument("--h", type=float, nargs="+", help="time shifts (multiples of tau)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_frac_exponent)

    s = sub.add_parser("validate", help="run the acceptance suite and print pass/fail per criterion")
    s.add_argument("--output-dir")
    s.add_argument("--skip-determinism", action="store_true", help="run the suite once only")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterWindowError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ContractError) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"solver failure{where}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TrajectoryFormatError as exc:
        print(f"corrupt trajectory: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except GeometryError as exc:
        print(f"inadmissible geometry: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
