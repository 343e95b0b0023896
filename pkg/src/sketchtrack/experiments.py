"""Desk-scale statistical experiments: consistency, coverage and stopping errors.

Every experiment is a grid of independent cells (matrix x method, or
checkpoint). Each cell derives its own seed from the experiment seed and its
cell index, so results do not depend on the number of workers and are merged
in cell order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import linalg_core as lc
from .errors import ConfigError
from .problems_io import GENERATORS, suite_matrix
from .sketch import METHODS, SketchSpec, draw_sketch
from .solver import TraceRecord, iterate, solve
from .tracker import TrackerConfig

log = logging.getLogger(__name__)

CELL_SEED_STRIDE = 1_000_003


def run_pool(fn: Callable, jobs: Sequence, workers: int = 1) -> list:
    """Map ``fn`` over ``jobs`` in order, on a process pool when workers > 1."""
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def suite_problem(kind: str, m: int, n: int, seed: int, cond: Optional[float] = None) -> lc.WlsProblem:
    """Generator matrix rectangularized to m x n with a seeded N(0, 1) right-hand side."""
    A = suite_matrix(kind, m, n, seed=seed, cond=cond)
    b = np.random.default_rng(seed + 7).standard_normal(m)
    return lc.WlsProblem(A, b)


# ----------------------------------------------------------------- trace cells

@dataclass(frozen=True)
class TraceCell:
    index: int
    generator: str
    method: str
    m: int
    n: int
    p: int
    iterations: int
    cfg: TrackerConfig
    seed: int
    oracle_fed: bool = False
    cond: Optional[float] = None


@dataclass
class CellResult:
    cell: TraceCell
    trace: list[TraceRecord] = field(repr=False)


def run_trace_cell(cell: TraceCell) -> CellResult:
    problem = suite_problem(cell.generator, cell.m, cell.n, cell.seed, cell.cond)
    spec = SketchSpec.for_method(cell.method, cell.p, seed=cell.seed, eta=cell.cfg.eta)
    rep = solve(problem, spec, cell.cfg, cell.iterations, oracle=True, halt=False,
                strict=False, oracle_fed=cell.oracle_fed)
    log.info("cell %d %s/%s: %d iterations", cell.index, cell.generator, cell.method, rep.iterations)
    return CellResult(cell, rep.trace)


def trace_cells(generators: Sequence[str], methods: Sequence[str], *, m: int, n: int, p: int, iterations: int,
                cfg: TrackerConfig, seed: int = 0, oracle_fed: bool = False,
                cond: Optional[float] = None) -> list[TraceCell]:
    for g in generators:
        if g not in GENERATORS:
            raise ConfigError(f"unknown generator {g!r}")
    for meth in methods:
        if meth not in METHODS:
            raise ConfigError(f"unknown sketch method {meth!r}")
    if m < n:
        raise ConfigError(f"need m >= n, got {m} x {n}")
    cells = []
    for gi, g in enumerate(generators):
        for meth in methods:
            idx = len(cells)
            # the matrix seed depends only on the generator so all methods see the same system
            cells.append(TraceCell(idx, g, meth, m, n, p, iterations, cfg,
                                   seed + gi * CELL_SEED_STRIDE, oracle_fed, cond))
    return cells


def relative_errors(rec: TraceRecord) -> tuple[float, float]:
    def rel(est, true):
        return abs(est - true) / true if true > 0 else math.nan
    return rel(rec.rho_tilde, rec.rho), rel(rec.iota_tilde, rec.iota)


CONSISTENCY_FIELDS = ("generator", "method", "k", "rho_tilde", "rho", "iota_tilde", "iota",
                      "rel_err_rho", "rel_err_iota")
SUMMARY_FIELDS = ("k", "runs", "rho_p5", "rho_p50", "rho_p95", "iota_p5", "iota_p50", "iota_p95")


def consistency_rows(results: Sequence[CellResult]):
    for res in results:
        for rec in res.trace:
            er, ei = relative_errors(rec)
            yield dict(generator=res.cell.generator, method=res.cell.method, k=rec.k,
                       rho_tilde=rec.rho_tilde, rho=rec.rho, iota_tilde=rec.iota_tilde, iota=rec.iota,
                       rel_err_rho=er, rel_err_iota=ei)


def consistency_summary(results: Sequence[CellResult]) -> list[dict]:
    """5th/50th/95th percentiles of the relative errors at each iteration, across runs."""
    if not results:
        return []
    K = max(len(r.trace) for r in results)
    er = np.full((len(results), K), math.nan)
    ei = np.full((len(results), K), math.nan)
    for i, res in enumerate(results):
        for rec in res.trace:
            er[i, rec.k], ei[i, rec.k] = relative_errors(rec)
    out = []
    for k in range(K):
        row = dict(k=k, runs=int(np.sum(np.isfinite(er[:, k]))))
        for name, arr in (("rho", er[:, k]), ("iota", ei[:, k])):
            vals = arr[np.isfinite(arr)]
            pct = np.percentile(vals, [5, 50, 95]) if vals.size else [math.nan] * 3
            row.update({f"{name}_p5": pct[0], f"{name}_p50": pct[1], f"{name}_p95": pct[2]})
        out.append(row)
    return out


@dataclass(frozen=True)
class TrendVerdict:
    first_half_median: float
    last_half_median: float
    ratio: float
    ok: bool


def trend_check(series: Sequence[float], factor: float = 1.5) -> TrendVerdict:
    """No upward trend: median of the last half <= factor * median of the first half."""
    s = np.asarray(series, dtype=float)
    h = s.size // 2
    if h == 0:
        raise ConfigError("need at least two points for a trend check")
    first, last = float(np.nanmedian(s[:h])), float(np.nanmedian(s[h:]))
    ratio = last / first if first > 0 else (0.0 if last == 0 else math.inf)
    return TrendVerdict(first, last, ratio, bool(last <= factor * first))


# -------------------------------------------------------------- stopping errors

STOPPING_FIELDS = ("generator", "method", "iterations", "condition_count", "late_errors", "early_errors",
                   "late_freq", "early_freq", "empty")


def classify(rec: TraceRecord, cfg: TrackerConfig) -> Optional[str]:
    """'late', 'early' or 'correct' when the iota condition holds, else None."""
    if not rec.iota_ok:
        return None
    if rec.rho_tilde > cfg.upsilon and rec.rho <= cfg.deltaI * cfg.upsilon:
        return "late"
    if rec.rho_tilde <= cfg.upsilon and rec.rho > cfg.deltaII * cfg.upsilon:
        return "early"
    return "correct"


def stopping_summary(results: Sequence[CellResult]) -> list[dict]:
    out = []
    for res in results:
        labels = [classify(r, res.cell.cfg) for r in res.trace]
        held = [lab for lab in labels if lab is not None]
        n = len(held)
        late, early = held.count("late"), held.count("early")
        out.append(dict(generator=res.cell.generator, method=res.cell.method, iterations=len(res.trace),
                        condition_count=n, late_errors=late, early_errors=early,
                        late_freq=late / n if n else 0.0, early_freq=early / n if n else 0.0,
                        empty=n == 0))
    return out


def pooled_error_rates(summary: Sequence[dict]) -> tuple[float, float, int]:
    """Late and early error frequencies over all condition-holding iterations."""
    n = sum(r["condition_count"] for r in summary)
    if n == 0:
        return 0.0, 0.0, 0
    return (sum(r["late_errors"] for r in summary) / n, sum(r["early_errors"] for r in summary) / n, n)


def default_stopping_config(**overrides) -> TrackerConfig:
    base = dict(lambda1=1, lambda2=100, upsilon=100.0, deltaI=0.9, deltaII=1.1, xiI=0.01, xiII=0.01)
    base.update(overrides)
    return TrackerConfig(**base)


# --------------------------------------------------------------------- coverage

@dataclass(frozen=True)
class CoverageSetup:
    generator: str = "golub"
    m: int = 512
    n: int = 256
    method: str = "gaussian"
    p: int = 25
    window: int = 15
    alpha: float = 0.05
    eta: float = 1.0
    phase1_iterations: int = 500
    checkpoints: int = 50
    replicates: int = 200
    seed: int = 0
    oracle_fed: bool = False
    replay_first: bool = False

    def __post_init__(self):
        if self.window < 1 or self.checkpoints < 1 or self.replicates < 1:
            raise ConfigError("window, checkpoints and replicates must be positive")
        if self.phase1_iterations < self.window:
            raise ConfigError("phase 1 must run at least one full window")

    @property
    def cfg(self) -> TrackerConfig:
        # constant window; the stopping threshold is irrelevant here
        return TrackerConfig(lambda1=self.window, lambda2=self.window, alpha=self.alpha, eta=self.eta)

    def spec(self, seed: int) -> SketchSpec:
        return SketchSpec.for_method(self.method, self.p, seed=seed, eta=self.eta)


@dataclass(frozen=True)
class Checkpoint:
    index: int
    k: int
    start: np.ndarray = field(repr=False)  # x_{k - window + 1}
    rho_tilde: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 0.0


def checkpoint_iterations(setup: CoverageSetup) -> list[int]:
    first, last = setup.window - 1, setup.phase1_iterations - 1
    ks = np.unique(np.linspace(first, last, setup.checkpoints).round().astype(int))
    return [int(k) for k in ks]


def coverage_phase1(setup: CoverageSetup) -> tuple[lc.WlsProblem, list[Checkpoint]]:
    problem = suite_problem(setup.generator, setup.m, setup.n, setup.seed)
    wanted = set(checkpoint_iterations(setup))
    iterates = [np.zeros(setup.n)]
    points = []
    for rec, x, _, _ in iterate(problem, setup.spec(setup.seed), setup.cfg, setup.phase1_iterations,
                                strict=False, oracle_fed=setup.oracle_fed):
        iterates.append(x)
        if rec.k in wanted:
            points.append(Checkpoint(len(points), rec.k, iterates[rec.k - setup.window + 1],
                                     rec.rho_tilde, rec.ci_low, rec.ci_high))
    return problem, points


def rerun_rho(problem: lc.WlsProblem, spec: SketchSpec, start: np.ndarray, window: int,
              first_index: int) -> float:
    """Exact rho over ``window`` fresh iterations started at ``start``."""
    x = start.copy()
    total = 0.0
    for j in range(window):
        g = lc.gradient(problem, x)
        total += float(g @ g)
        x = lc.block_update(problem, x, draw_sketch(spec, problem.shape[1], first_index + j))
    return total / window


@dataclass(frozen=True)
class _CoverageJob:
    setup: CoverageSetup
    problem: lc.WlsProblem
    point: Checkpoint


def _coverage_job(job: _CoverageJob) -> dict:
    s, pt = job.setup, job.point
    first = pt.k - s.window + 1
    fails = 0
    rhos = np.empty(s.replicates)
    for r in range(s.replicates):
        if s.replay_first and r == 0:
            seed = s.seed  # reproduces the phase 1 path exactly
        else:
            seed = s.seed + (r + 1) * CELL_SEED_STRIDE + pt.index
        rhos[r] = rerun_rho(job.problem, s.spec(seed), pt.start, s.window, first)
        fails += not (pt.ci_low <= rhos[r] <= pt.ci_high)
    return dict(checkpoint=pt.index, k=pt.k, rho_tilde=pt.rho_tilde, ci_low=pt.ci_low, ci_high=pt.ci_high,
                replicates=s.replicates, failures=fails, failure_rate=fails / s.replicates,
                rho_min=float(rhos.min()), rho_median=float(np.median(rhos)), rho_max=float(rhos.max()))


COVERAGE_FIELDS = ("checkpoint", "k", "rho_tilde", "ci_low", "ci_high", "replicates", "failures",
                   "failure_rate", "rho_min", "rho_median", "rho_max")


def coverage_experiment(setup: CoverageSetup, workers: int = 1) -> tuple[list[dict], float]:
    """Per-checkpoint rows and the overall coverage failure rate."""
    problem, points = coverage_phase1(setup)
    rows = run_pool(_coverage_job, [_CoverageJob(setup, problem, pt) for pt in points], workers)
    total = sum(r["replicates"] for r in rows)
    return rows, sum(r["failures"] for r in rows) / total
