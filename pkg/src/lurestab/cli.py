"""Command-line front end.

Exit codes: 0 success/feasible, 1 infeasible or acceptance deviation,
2 usage error, 3 numerical indeterminacy.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import criteria, sdp, sim
from .nonlin import KINDS, make_test_nonlinearity
from .system import EXAMPLE_IDS, example, load_plant

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_INDETERMINATE = 0, 1, 2, 3
TABLE_TOLERANCE = 0.02


def _fmt(x) -> str:
    return f"{float(x):.10g}"


class UsageError(Exception):
    pass


def _plant_source(args):
    if (args.example is None) == (args.plant is None):
        raise UsageError("give exactly one of --example or --plant")
    if args.example is not None:
        if args.example not in EXAMPLE_IDS:
            raise UsageError(f"--example must be one of {list(EXAMPLE_IDS)}")
        plant, c = example(args.example)
    else:
        plant, c = load_plant(args.plant)
    if getattr(args, "scale", None) is not None:
        c = args.scale
    if c is None:
        raise UsageError("plant file has no slope_scale; pass --scale")
    return plant, c


def _add_plant_args(p, scale=True):
    p.add_argument("--example", type=int, help="bundled example id (1-6)")
    p.add_argument("--plant", type=Path, help="plant JSON file")
    if scale:
        p.add_argument("--scale", type=float, help="slope scale c, mu = c * xi")


def _add_solver_args(p):
    p.add_argument("--multipliers", choices=sdp.STRUCTURES, default="scalar",
                   help="multiplier structure (default: scalar)")
    p.add_argument("--eps-pd", type=float, default=sdp.EPS_PD, help="relative P11 floor")


def _tolerances(args) -> sdp.Tolerances:
    return sdp.Tolerances(eps_pd=args.eps_pd)


def _write_cert(cert, path):
    if path is not None:
        cert.to_json(path)
        print(f"certificate written to {path}")


def cmd_analyze(args) -> int:
    plant, c = _plant_source(args)
    if not args.xi > 0:
        raise UsageError("--xi must be positive")
    res = criteria.analyze(plant, args.xi, args.criterion, c, args.multipliers, _tolerances(args))
    cert = res.certificate
    print(f"criterion {args.criterion}  xi {_fmt(res.xi)}  mu {_fmt(res.mu)}")
    print(f"status {cert.status}  margin {_fmt(cert.margin)}  verified {cert.verified}")
    if args.criterion == "thm2":
        print(f"note: {criteria.ODD_LABEL}")
    if res.feasible:
        _write_cert(cert, args.cert_out)
        return EXIT_OK
    return EXIT_INDETERMINATE if cert.status == sdp.INDETERMINATE else EXIT_INFEASIBLE


def cmd_bisect(args) -> int:
    plant, c = _plant_source(args)
    try:
        res = criteria.max_sector_bisect(plant, args.criterion, c, args.tol, args.multipliers,
                                         _tolerances(args))
    except criteria.BisectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"criterion {args.criterion}  c {_fmt(c)}  tol {_fmt(args.tol)}")
    print(f"xi* {_fmt(res.xi_star)}  (first rejected {_fmt(res.xi_hi)}, {res.upper_status})")
    print(f"margin {_fmt(res.certificate.margin)}  evaluations {res.evaluations}")
    if args.criterion == "thm2":
        print(f"note: {criteria.ODD_LABEL}")
    if res.flagged:
        print("warning: indeterminate solves were treated as infeasible", file=sys.stderr)
    _write_cert(res.certificate, args.cert_out)
    return EXIT_OK


def cmd_table(args) -> int:
    examples = tuple(args.examples) if args.examples else EXAMPLE_IDS
    rep = criteria.table1(args.tol, args.multipliers, criteria=tuple(args.criteria),
                          examples=examples, workers=args.workers)
    text = rep.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".json").write_text(rep.to_json() + "\n")
        print(f"table written to {args.out}")
    print(text, end="")
    failed = [(c, e, err) for c, row in rep.errors.items() for e, err in row.items() if err]
    for c, e, err in failed:
        print(f"error in {c}/ex{e}: {err}", file=sys.stderr)
    if failed:
        return EXIT_INFEASIBLE
    worst = rep.max_deviation()
    print(f"max relative deviation {_fmt(worst)}")
    return EXIT_OK if worst <= TABLE_TOLERANCE else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    plant, c = _plant_source(args)
    res = criteria.analyze(plant, args.xi, args.criterion, c, args.multipliers, _tolerances(args))
    if not res.feasible:
        print(f"error: no certificate at xi {_fmt(args.xi)} ({res.status})", file=sys.stderr)
        return EXIT_INDETERMINATE if res.status == sdp.INDETERMINATE else EXIT_INFEASIBLE
    mu = c * args.xi
    phi = make_test_nonlinearity(args.xi, mu, args.phi, plant.n_q)
    spec = res.certificate.spec
    x0s = sim.random_unit_vectors(plant.n, args.runs, args.seed)
    worst_norm, worst_dV, falsified = 0.0, -np.inf, 0
    for r, x0 in enumerate(x0s):
        traj = sim.simulate(plant, phi, x0, args.steps)
        try:
            rep = sim.check_decrease(plant, traj, res.certificate.multipliers, phi, spec,
                                     args.criterion)
        except sim.CertificateFalsified as exc:
            falsified += 1
            print(f"run {r}: {exc}", file=sys.stderr)
            rep = sim.check_decrease(plant, traj, res.certificate.multipliers, phi, spec,
                                     args.criterion, verified=False)
        worst_norm = max(worst_norm, traj.final_norm())
        worst_dV = max(worst_dV, rep.max_dV)
        if args.csv and r == 0:
            traj.to_csv(args.csv, rep.V, rep.dV)
    decayed = worst_norm < args.threshold
    print(f"runs {args.runs}  steps {args.steps}  seed {args.seed}  phi {args.phi}")
    print(f"max |x_K| {_fmt(worst_norm)}  max dV {_fmt(worst_dV)}  falsified {falsified}")
    return EXIT_OK if decayed and falsified == 0 else EXIT_INFEASIBLE


def cmd_verify(args) -> int:
    cert = sdp.Certificate.from_json(args.certificate)
    plant = cert.plant
    if args.example is not None or args.plant is not None:
        plant, _ = _plant_source(args)
    if plant is None:
        raise UsageError("certificate has no plant; pass --example or --plant")
    checked = sdp.verify_certificate(plant, cert, cert.spec, cert.criterion)
    print(f"criterion {checked.criterion}  xi {_fmt(checked.xi[0]) if checked.xi.size else '-'}")
    print(f"stored margin {_fmt(cert.margin)}  recomputed margin {_fmt(checked.margin)}")
    for k, v in checked.residuals.items():
        print(f"{k} {_fmt(v)}")
    print(f"verified {checked.verified}")
    return EXIT_OK if checked.verified else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lurestab", description="Absolute stability analysis of discrete-time Lur'e systems")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="feasibility at one sector bound")
    _add_plant_args(p)
    p.add_argument("--criterion", choices=criteria.CRITERIA, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--cert-out", type=Path)
    _add_solver_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bisect", help="maximal certified sector bound")
    _add_plant_args(p)
    p.add_argument("--criterion", choices=criteria.CRITERIA, required=True)
    p.add_argument("--tol", type=float, default=criteria.DEFAULT_TOL)
    p.add_argument("--cert-out", type=Path)
    _add_solver_args(p)
    p.set_defaults(func=cmd_bisect)

    p = sub.add_parser("table", help="reproduce the comparison table")
    p.add_argument("--tol", type=float, default=criteria.DEFAULT_TOL)
    p.add_argument("--out", type=Path, help="CSV path; a JSON sidecar is written next to it")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--criteria", nargs="+", choices=criteria.CRITERIA, default=list(criteria.CRITERIA))
    p.add_argument("--examples", nargs="+", type=int, choices=EXAMPLE_IDS)
    _add_solver_args(p)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("simulate", help="roll out trajectories against a certificate")
    _add_plant_args(p)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--phi", choices=KINDS, required=True)
    p.add_argument("--criterion", choices=criteria.CRITERIA, default="thm1")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=sim.DECAY_THRESHOLD)
    p.add_argument("--csv", type=Path, help="trajectory CSV of the first run")
    _add_solver_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="re-validate a certificate JSON")
    p.add_argument("--certificate", type=Path, required=True)
    _add_plant_args(p, scale=False)
    p.set_defaults(func=cmd_verify)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
