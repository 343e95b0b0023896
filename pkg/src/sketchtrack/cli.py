"""Command-line front end.

    sketchtrack solve        tracked sketched solve of one weighted LS problem
    sketchtrack consistency  estimator relative errors over generators x methods
    sketchtrack coverage     two-phase credible-interval coverage experiment
    sketchtrack stopping     late/early stopping-error frequencies
    sketchtrack assimilate   streaming 4D-Var inner loop on shallow water
    sketchtrack calibrate    Monte Carlo fit of the sketch constants (C, omega)

Every flag can also be set from a ``--config`` file: keys are flag names
(dashes or underscores), read from ``[DEFAULT]`` and then from the section
named after the subcommand; flags on the command line win. Outputs go to
``--output`` or, by default, to ``$SKETCHTRACK_OUTPUT_DIR/<command>.csv``.
CSV files are written atomically, so a failed run never leaves a partial
file behind.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import experiments as ex
from . import problems_io as pio
from .errors import ConfigError, IOFailure, NumericalError
from .fourdvar import assimilate, make_problem, default_tracker_config
from .linalg_core import WlsProblem
from .sketch import METHODS, SketchSpec, calibrate_constants
from .solver import TRACE_FIELDS, solve
from .tracker import TrackerConfig

log = logging.getLogger("sketchtrack")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

OUTPUT_DIR_ENV = "SKETCHTRACK_OUTPUT_DIR"
CLAMP_FLOOR = 1e-16


# ----------------------------------------------------------------- output

def output_path(args, suffix: str = "") -> Path:
    if args.output:
        p = Path(args.output)
        return p.with_name(p.stem + suffix + p.suffix) if suffix else p
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / f"{args.command}{suffix}.csv"


def write_csv(path: Path, rows: Iterable[Mapping], fields: Sequence[str]) -> Path:
    """Write through a temporary file and rename, so failures leave nothing behind."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    try:
        pio.store_csv(rows, tmp, fields)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    log.info("wrote %s", path)
    return path


def clamp_lower(rows: list[dict], floor: float = CLAMP_FLOOR) -> list[dict]:
    """Raise non-positive interval lower bounds to ``floor`` for log-scale plots."""
    for r in rows:
        if "ci_low" in r and r["ci_low"] < floor:
            r["ci_low"] = floor
    return rows


# ----------------------------------------------------------------- parser

def _add_sketch(p, method="gaussian", dim=20):
    g = p.add_argument_group("sketch")
    g.add_argument("--method", choices=METHODS, default=method)
    g.add_argument("--p", type=int, default=dim, help="embedding dimension")
    g.add_argument("--C", type=float, default=None, help="concentration constant (method default if unset)")
    g.add_argument("--omega", type=float, default=None)
    g.add_argument("--eta", type=float, default=1.0, help="tightening factor, >= 1")
    g.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                   help="refuse p below the embedding-dimension bound (default: on)")


def _add_tracker(p, upsilon=1e-8, xi=0.01, lambda2=100):
    g = p.add_argument_group("tracker")
    g.add_argument("--lambda1", type=int, default=1)
    g.add_argument("--lambda2", type=int, default=lambda2)
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--upsilon", type=float, default=upsilon)
    g.add_argument("--deltaI", type=float, default=0.9)
    g.add_argument("--deltaII", type=float, default=1.1)
    g.add_argument("--xiI", type=float, default=xi)
    g.add_argument("--xiII", type=float, default=xi)


def _add_grid(p):
    p.add_argument("--generators", nargs="+", choices=pio.GENERATORS, default=list(pio.GENERATORS))
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--p", type=int, default=20)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--cond", type=float, default=None, help="condition target for rand_illcond")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--oracle-fed", action="store_true", help="test mode: feed the exact gradient to the tracker")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchtrack", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="key = value config file with per-command sections")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="output CSV path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="process-pool size for independent cells")

    p = sub.add_parser("solve", parents=[common], help="tracked sketched solve of one problem")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--matrix", help="MatrixMarket coefficient matrix")
    src.add_argument("--generator", choices=pio.GENERATORS, help="built-in test matrix (default rand_dense)")
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--cond", type=float, default=None)
    p.add_argument("--rhs", help="MatrixMarket right-hand side (default: seeded N(0, 1))")
    p.add_argument("--weights", help="MatrixMarket weight vector or SPD matrix")
    p.add_argument("--max-iterations", type=int, default=10000)
    p.add_argument("--oracle", action="store_true", help="add exact rho, iota and M columns")
    p.add_argument("--solution", help="write the final iterate as a MatrixMarket array")
    p.add_argument("--clamp-lower", action="store_true", help=f"floor interval lower bounds at {CLAMP_FLOOR}")
    _add_sketch(p)
    _add_tracker(p)

    p = sub.add_parser("consistency", parents=[common], help="estimator relative errors")
    _add_grid(p)
    p.add_argument("--lambda1", type=int, default=1)
    p.add_argument("--lambda2", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("coverage", parents=[common], help="credible-interval coverage")
    p.add_argument("--generator", choices=pio.GENERATORS, default="golub")
    p.add_argument("--m", type=int, default=512)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--method", choices=METHODS, default="gaussian")
    p.add_argument("--p", type=int, default=25)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--phase1-iterations", type=int, default=500)
    p.add_argument("--checkpoints", type=int, default=50)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--oracle-fed", action="store_true")
    p.add_argument("--replay-first", action="store_true", help="replicate 0 reuses the phase 1 sketches")

    p = sub.add_parser("stopping", parents=[common], help="stopping-error frequencies")
    _add_grid(p)
    _add_tracker(p, upsilon=100.0)

    p = sub.add_parser("assimilate", parents=[common], help="streaming 4D-Var inner loop")
    p.add_argument("--nc", type=int, default=40, help="spatial coordinates")
    p.add_argument("--nt", type=int, default=20, help="observation times")
    p.add_argument("--dx", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=1e-11)
    p.add_argument("--boundary", choices=("periodic", "clamped"), default="periodic")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--max-iterations", type=int, default=10000)
    p.add_argument("--oracle", action="store_true", help="exact columns from the dense system (small sizes)")
    p.add_argument("--clamp-lower", action="store_true", help=f"floor interval lower bounds at {CLAMP_FLOOR}")
    _add_sketch(p, method="achlioptas")
    _add_tracker(p, upsilon=None, xi=0.95)

    p = sub.add_parser("calibrate", parents=[common], help="fit (C, omega) by Monte Carlo")
    p.add_argument("--method", choices=METHODS, default="gaussian")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--p", type=int, default=20)
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--epsilons", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    p.add_argument("--omega", type=float, default=1.0)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def apply_config(sub: argparse.ArgumentParser, path: str, command: str) -> None:
    """Install config-file values as defaults of the subcommand parser."""
    # no implicit default section, so [DEFAULT] and the command section stay separable
    cp = configparser.ConfigParser(default_section="\0")
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError as exc:
        raise IOFailure(f"{path}: config file not found") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for section, strict in (("DEFAULT", False), (command, True)):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section, raw=True):
            dest = key.replace("-", "_")
            if dest in actions:
                defaults[dest] = _convert(actions[dest], raw, path, key)
            elif strict:
                raise ConfigError(f"{path}: unknown key {key!r} for {command}")
            # unknown DEFAULT keys may belong to other commands
    sub.set_defaults(**defaults)


def _convert(a: argparse.Action, raw: str, path: str, key: str):
    try:
        if a.nargs == 0 or isinstance(a, argparse.BooleanOptionalAction):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if a.nargs in ("+", "*"):
            val = [a.type(v) if a.type else v for v in raw.replace(",", " ").split()]
        else:
            val = a.type(raw) if a.type else raw
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad value {raw!r} for {key}") from exc
    if a.choices is not None:
        vals = val if isinstance(val, list) else [val]
        if any(v not in a.choices for v in vals):
            raise ConfigError(f"{path}: {key} must be one of {list(a.choices)}")
    return val


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config(_subparser(parser, args.command), args.config, args.command)
        args = parser.parse_args(argv)
    return args


# ----------------------------------------------------------------- commands

def _tracker_cfg(args, **over) -> TrackerConfig:
    kw = dict(lambda1=args.lambda1, lambda2=args.lambda2, alpha=args.alpha, upsilon=args.upsilon,
              deltaI=args.deltaI, deltaII=args.deltaII, xiI=args.xiI, xiII=args.xiII, eta=args.eta)
    kw.update(over)
    return TrackerConfig(**kw)


def _spec(args) -> SketchSpec:
    return SketchSpec.for_method(args.method, args.p, seed=args.seed, eta=args.eta, C=args.C, omega=args.omega)


def _trace_rows(trace, clamp: bool) -> list[dict]:
    rows = [r.as_dict() for r in trace]
    return clamp_lower(rows) if clamp else rows


def load_problem(args) -> WlsProblem:
    if args.matrix:
        A = pio.load_matrix_market(args.matrix)
        if A.ndim != 2:
            raise ConfigError(f"{args.matrix}: coefficient matrix must be two-dimensional")
    else:
        A = pio.suite_matrix(args.generator or "rand_dense", args.m, args.n, seed=args.seed, cond=args.cond)
    if args.rhs:
        b = pio.load_matrix_market(args.rhs)
    else:
        b = np.random.default_rng(args.seed + 7).standard_normal(A.shape[0])
    w = pio.load_matrix_market(args.weights) if args.weights else None
    return WlsProblem(A, b, w)


def cmd_solve(args) -> int:
    problem = load_problem(args)  # every input is read before anything is written
    rep = solve(problem, _spec(args), _tracker_cfg(args), args.max_iterations, oracle=args.oracle,
                strict=args.strict)
    write_csv(output_path(args), _trace_rows(rep.trace, args.clamp_lower), TRACE_FIELDS)
    if args.solution:
        pio.store_matrix_market(args.solution, rep.x_final)
    last = rep.trace[-1]
    print(f"{rep.stop_reason} after {rep.iterations} iterations; rho_tilde={last.rho_tilde:.6g} "
          f"interval=[{last.ci_low:.6g}, {last.ci_high:.6g}]")
    return EXIT_OK


def _grid_results(args, cfg: TrackerConfig):
    cells = ex.trace_cells(args.generators, args.methods, m=args.m, n=args.n, p=args.p,
                           iterations=args.iterations, cfg=cfg, seed=args.seed,
                           oracle_fed=args.oracle_fed, cond=args.cond)
    return ex.run_pool(ex.run_trace_cell, cells, args.workers)


def cmd_consistency(args) -> int:
    cfg = TrackerConfig(lambda1=args.lambda1, lambda2=args.lambda2, alpha=args.alpha, eta=args.eta)
    results = _grid_results(args, cfg)
    summary = ex.consistency_summary(results)
    write_csv(output_path(args), ex.consistency_rows(results), ex.CONSISTENCY_FIELDS)
    write_csv(output_path(args, "_summary"), summary, ex.SUMMARY_FIELDS)
    for name in ("rho", "iota"):
        t = ex.trend_check([s[f"{name}_p50"] for s in summary])
        print(f"{name}: median rel. error first half {t.first_half_median:.4g}, "
              f"last half {t.last_half_median:.4g} ({'no upward trend' if t.ok else 'UPWARD TREND'})")
    return EXIT_OK


def cmd_coverage(args) -> int:
    setup = ex.CoverageSetup(args.generator, args.m, args.n, args.method, args.p, args.window, args.alpha,
                             args.eta, args.phase1_iterations, args.checkpoints, args.replicates, args.seed,
                             args.oracle_fed, args.replay_first)
    rows, rate = ex.coverage_experiment(setup, args.workers)
    write_csv(output_path(args), rows, ex.COVERAGE_FIELDS)
    print(f"overall coverage failure rate {rate:.4g} over {len(rows)} checkpoints x {args.replicates} re-runs")
    return EXIT_OK


def cmd_stopping(args) -> int:
    results = _grid_results(args, _tracker_cfg(args))
    summary = ex.stopping_summary(results)
    write_csv(output_path(args), summary, ex.STOPPING_FIELDS)
    late, early, n = ex.pooled_error_rates(summary)
    empty = sum(r["empty"] for r in summary)
    print(f"late-error frequency {late:.4g}, early-error frequency {early:.4g} over {n} iterations"
          + (f"; {empty} cell(s) never met the iota condition" if empty else ""))
    return EXIT_OK


def cmd_assimilate(args) -> int:
    problem = make_problem(args.nc, args.nt, dx=args.dx, dt=args.dt, noise_seed=args.seed,
                           noise_scale=args.noise_scale, boundary=args.boundary)
    base = default_tracker_config(args.nc, args.nt, eta=args.eta)
    cfg = _tracker_cfg(args, upsilon=base.upsilon if args.upsilon is None else args.upsilon)
    rep = assimilate(problem, _spec(args), cfg, args.max_iterations, oracle=args.oracle, strict=args.strict)
    write_csv(output_path(args), _trace_rows(rep.trace, args.clamp_lower), TRACE_FIELDS)
    first, last = rep.trace[0], rep.trace[-1]
    print(f"{rep.stop_reason} after {rep.iterations} iterations; rho_tilde {first.rho_tilde:.6g} -> "
          f"{last.rho_tilde:.6g} (upsilon={cfg.upsilon:.6g})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    C, omega = calibrate_constants(args.method, args.n, args.p, args.trials, args.epsilons,
                                   seed=args.seed, omega=args.omega)
    text = (f"# Monte Carlo fit: n={args.n} p={args.p} trials={args.trials} seed={args.seed}\n"
            f"[DEFAULT]\nmethod = {args.method}\nC = {C:.17g}\nomega = {omega:.17g}\n")
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "consistency": cmd_consistency,
    "coverage": cmd_coverage,
    "stopping": cmd_stopping,
    "assimilate": cmd_assimilate,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:  # IOFailure and raw OS errors alike
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
