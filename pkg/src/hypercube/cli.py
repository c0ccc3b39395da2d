"""Command-line entry point: ``hypercube <subcommand> ...``.

Exit codes: 0 success, 1 domain failure (for example no converged run under
``--strict``), 2 usage, input or configuration error. Diagnostics go to
stderr as ``level=...`` lines; data goes to stdout or to ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .algebra import AlgebraError, CayleyTable, assoc_report, canonical_hash, cayley_tensor, group_table, read_table, write_tables
from .config import ConfigError, load_config, opt_config, setting
from .diagnostics import DEFAULT_C, structure_report
from .enumeration import EnumConfig, EnumerationError, loops_for
from .model import ModelError, NotAGroup, base_term_B, contract, kappa_values, misalignment_R, objective_H, regular_rep_factors
from .optimizer import minimize
from .sweep import InsufficientData, SweepError, fit_scaling, read_fit, read_records, run_sweep, write_fit
from .svg import emit_scatter_svg

log = logging.getLogger("hypercube")


class UsageError(Exception):
    """Bad input or configuration (exit 2)."""


class DomainFailure(Exception):
    """The computation ran but did not reach the requested outcome (exit 1)."""


def _emit_json(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    if out and out != "-":
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _load_table(args) -> CayleyTable:
    if args.group is not None:
        return group_table(args.group)
    return read_table(args.table)


# --- subcommands ---------------------------------------------------------------


def cmd_enumerate(args, conf) -> int:
    seed = setting("seed", args.seed, conf, 0)
    dedup = {"none": "none", "iso": "isomorphism"}[args.dedup]
    if args.sample is not None:
        ecfg = EnumConfig(args.order, mode="sample", sample_count=args.sample, seed=seed, dedup=dedup)
    else:
        ecfg = EnumConfig(args.order, mode="exhaustive", seed=seed, dedup=dedup)
    tables = loops_for(ecfg)
    log.info("enumerated %d tables of order %d", len(tables), args.order)
    if args.json:
        rows = [
            {
                "label": t.label,
                "canonical_hash": f"{canonical_hash(t):016x}",
                "n_v_norm": assoc_report(t).n_v_norm,
                "cells": t.tolist(),
            }
            for t in tables
        ]
        _emit_json({"order": args.order, "count": len(rows), "tables": rows}, args.json)
    elif args.out:
        write_tables(tables, args.out)
    else:
        write_tables(tables, sys.stdout)
    return 0


def cmd_certify(args, conf) -> int:
    t = _load_table(args)
    try:
        theta = regular_rep_factors(t)
    except NotAGroup as exc:
        raise DomainFailure(str(exc)) from None
    B, _ = base_term_B(theta, t)
    R, _ = misalignment_R(theta, t)
    kap = kappa_values(theta, t)
    _emit_json(
        {
            "n": t.n,
            "H": objective_H(theta),
            "B": B,
            "R": R,
            "max_abs_T_minus_delta": float(np.abs(contract(theta) - cayley_tensor(t)).max()),
            "kappa_min": float(kap.min()),
            "kappa_max": float(kap.max()),
        },
        args.out,
    )
    return 0


def cmd_optimize(args, conf) -> int:
    t = _load_table(args)
    cfg = opt_config(conf, {"restarts": args.restarts, "seed": args.seed, "tied": args.tied or None})
    best, runs = minimize(t, cfg)
    c = setting("c", args.c, conf, DEFAULT_C)
    sync_tol = setting("sync_tol", None, conf, 1e-3)
    report = structure_report(best.theta, t, c=c, sync_tol=sync_tol)
    n2 = t.n**2
    result = {
        "best": best.to_json(include_theta=args.theta),
        "runs": [r.to_json(include_theta=False) for r in runs],
        "structure": report.to_json(),
        "config_fingerprint": cfg.fingerprint(),
    }
    if args.json:
        _emit_json(result, args.json)
    if args.json != "-":
        print(
            f"n={t.n} H/n^2={best.H / n2:.6f} B/n^2={best.B / n2:.6f} R/n^2={best.R / n2:.6f} "
            f"feas={best.feas_residual:.2e} converged={str(best.converged).lower()} "
            f"({sum(r.converged for r in runs)}/{len(runs)} restarts)"
        )
    if args.strict and not best.converged:
        raise DomainFailure("no restart converged")
    return 0


def cmd_sweep(args, conf) -> int:
    try:
        orders = [int(x) for x in args.orders.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--orders expects comma-separated integers, got {args.orders!r}") from None
    cfg = opt_config(conf, {"restarts": args.restarts, "seed": args.seed})
    sample = setting("sample", args.sample, conf, 100)
    workers = setting("workers", args.workers, conf, 1)
    enum_cfgs = {o: EnumConfig.default_for(o, seed=cfg.seed, sample_count=sample) for o in orders if 2 <= o <= 12}
    records = run_sweep(orders, cfg, enum_cfgs, path=args.out, workers=workers)
    summary = {
        "records": len(records),
        "converged": sum(r.converged for r in records),
        "orders": orders,
        "out": args.out,
        "config_fingerprint": cfg.fingerprint(),
    }
    if args.json:
        _emit_json(summary, args.json)
    else:
        log.info("sweep wrote %d records to %s", len(records), args.out)
    return 0


def cmd_fit(args, conf) -> int:
    records = read_records(args.input)
    try:
        fit = fit_scaling(records, fixed_intercepts=args.fixed_intercepts)
    except InsufficientData as exc:
        raise DomainFailure(str(exc)) from None
    if args.out:
        write_fit(fit, args.out)
    if args.json or not args.out:
        _emit_json(fit.to_json(), args.json)
    return 0


def cmd_plot(args, conf) -> int:
    records = read_records(args.input)
    if not records:
        raise DomainFailure(f"{args.input} holds no records")
    fit = read_fit(args.fit) if args.fit else None
    emit_scatter_svg(records, fit, args.out)
    if args.json:
        _emit_json({"out": args.out, "points": len(records), "fit": bool(fit)}, args.json)
    return 0


# --- parser ---------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed (default from config, else 0)")
    p.add_argument(
        "--json", nargs="?", const="-", default=None, metavar="PATH",
        help="write machine-readable JSON to PATH (stdout if omitted or '-')",
    )


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--group", help="named group, e.g. Zn:5, Z2xZ4, S3, D4, Q8")
    src.add_argument("--table", help="text file holding one Cayley table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypercube", description="Operator factorizations of Cayley tables.")
    parser.add_argument("--version", action="store_true", help="print version and config fingerprint")
    parser.add_argument("--config", help="config file (default $HYPERCUBE_CONF or ./hypercube.conf)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("enumerate", help="list reduced Latin squares or loop classes")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--dedup", choices=("none", "iso"), default="iso")
    p.add_argument("--sample", type=int, default=None, help="draw this many at random instead")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("certify", help="evaluate the regular-representation certificate")
    _add_source(p)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("optimize", help="minimize the objective subject to reproducing a table")
    _add_source(p)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--tied", action="store_true", help="search with A = B = rho, C = rho^dag")
    p.add_argument("--strict", action="store_true", help="exit 1 unless a restart converged")
    p.add_argument("--c", type=float, default=None, help="dominance constant for the report")
    p.add_argument("--theta", action="store_true", help="include the best factors in the JSON")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="optimize every loop class of the given orders")
    p.add_argument("--orders", required=True, help="comma-separated, e.g. 5,6")
    p.add_argument("--sample", type=int, default=None, help="loops per sampled order (orders >= 7)")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="records CSV (resumed if present)")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit scaling slopes to sweep records")
    p.add_argument("--in", dest="input", required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--fixed-intercepts", dest="fixed_intercepts", action="store_true", default=True)
    mode.add_argument("--free-intercepts", dest="fixed_intercepts", action="store_false")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot", help="three-panel SVG of sweep records")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fit")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_plot)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = [logging.WARNING, logging.INFO, logging.DEBUG, logging.DEBUG][min(verbosity, 3)]
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        conf = load_config(args.config)
        if args.version:
            print(f"hypercube {__version__} config {opt_config(conf).fingerprint()}")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        return args.func(args, conf)
    except DomainFailure as exc:
        log.error("%s", exc)
        return 1
    except (UsageError, ConfigError, AlgebraError, EnumerationError, ModelError, SweepError, OSError) as exc:
        log.error("%s", exc)
        return 2


def main() -> None:
    sys.exit(dispatch())
