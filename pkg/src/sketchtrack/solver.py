"""Sketched least-squares iteration with tracking and statistical stopping.

Each iteration k draws S_k, forms g~_k = S_k^T g_k, feeds ||g~_k||^2 to
the tracker, applies the block update, builds the credible interval,
adapts the window and finally evaluates the stopping rule. Iteration 0
never stops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from . import linalg_core as lc
from .errors import ConfigError, NumericalError
from .sketch import SketchSpec, draw_sketch
from .tracker import (
    CredibleInterval,
    StoppingVerdict,
    TrackerConfig,
    TrackerState,
    adapt_window,
    credible_interval,
    push_and_estimate,
    stopping_check,
)

log = logging.getLogger(__name__)

TRACE_FIELDS = (
    "k", "lam", "rho_tilde", "iota_tilde", "ci_low", "ci_high",
    "stop", "rho_below", "iota_ok", "threshold",
    "rho", "iota", "proj_res", "m", "m_start",
)


@dataclass
class TraceRecord:
    k: int
    lam: int
    rho_tilde: float
    iota_tilde: float
    ci_low: float
    ci_high: float
    stop: bool
    rho_below: bool
    iota_ok: bool
    threshold: float
    rho: float = math.nan
    iota: float = math.nan
    proj_res: float = math.nan
    m: float = math.nan
    m_start: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    x_final: np.ndarray
    iterations: int
    trace: list[TraceRecord]
    stop_reason: str
    interval: Optional[CredibleInterval] = None
    state: Optional[lc.SolveState] = field(default=None, repr=False)


class _Bookkeeper:
    """Tracker plumbing shared by the dense solver and the 4D-Var solver."""

    def __init__(self, spec: SketchSpec, cfg: TrackerConfig, oracle: bool):
        self.spec, self.cfg, self.oracle = spec, cfg, oracle
        self.tracker = TrackerState.from_config(cfg)
        # exact ||g||^2 and M history, aligned with the tracker ring
        self.exact = TrackerState.from_config(cfg) if oracle else None
        self.m_ring = np.full(cfg.lambda2, math.nan) if oracle else None

    def record(self, k: int, sq: float, exact_sq: float = math.nan, proj_res: float = math.nan,
               m: float = math.nan) -> tuple[TraceRecord, CredibleInterval, StoppingVerdict]:
        if not math.isfinite(sq):
            raise NumericalError(f"non-finite sketched gradient norm at iteration {k}")
        rho_t, iota_t = push_and_estimate(self.tracker, sq)
        lam = self.tracker.last_lambda
        ci = credible_interval(rho_t, iota_t, lam, self.spec, self.cfg.alpha, eta=self.cfg.eta)
        verdict = stopping_check(rho_t, iota_t, lam, self.spec, self.cfg, k=k)
        rec = TraceRecord(k, lam, rho_t, iota_t, ci.low, ci.high, verdict.stop,
                          verdict.rho_below, verdict.iota_ok, verdict.threshold)
        if self.oracle:
            self.exact.push(exact_sq)
            rec.rho, rec.iota = self.exact.estimate(lam)
            self.m_ring[k % self.cfg.lambda2] = m
            rec.proj_res, rec.m = proj_res, m
            rec.m_start = float(self.m_ring[(k - lam + 1) % self.cfg.lambda2])
        adapt_window(self.tracker, ci, sq)
        return rec, ci, verdict


def check_dimension(spec: SketchSpec, strict: bool) -> None:
    if spec.satisfies_dimension_bound():
        return
    msg = (f"p={spec.p} does not exceed the embedding-dimension bound for {spec.method} "
           f"(need p >= {spec.min_p} with C={spec.C:.4g}, omega={spec.omega:.4g})")
    if strict:
        raise ConfigError(msg)
    log.warning(msg)


def iterate(problem: lc.WlsProblem, spec: SketchSpec, cfg: TrackerConfig, max_iterations: int, *,
            oracle: bool = False, x0: Optional[np.ndarray] = None,
            strict: bool = True, oracle_fed: bool = False,
            ) -> Iterator[tuple[TraceRecord, np.ndarray, StoppingVerdict, CredibleInterval]]:
    """Yield (record, x_{k+1}, verdict, interval) for k = 0, 1, ... without stopping.

    ``oracle_fed=True`` feeds the tracker the exact gradient instead of its
    sketch (a test mode in which every estimator equals its target).
    """
    if int(max_iterations) != max_iterations or max_iterations < 1:
        raise ConfigError(f"max_iterations must be a positive integer, got {max_iterations}")
    check_dimension(spec, strict)
    m, n = problem.shape
    x = np.zeros(n) if x0 is None else problem._check_x(x0).copy()
    book = _Bookkeeper(spec, cfg, oracle)
    for k in range(max_iterations):
        S = draw_sketch(spec, n, k).matrix
        g = lc.gradient(problem, x)
        g_tilde = g if oracle_fed else S.T @ g
        sq = float(g_tilde @ g_tilde)
        extra = {}
        if oracle:
            pr = lc.projected_residual_norm(problem, x)
            extra = dict(exact_sq=float(g @ g), proj_res=pr, m=problem.spectral_norm * pr)
        rec, ci, verdict = book.record(k, sq, **extra)
        x = lc.block_update(problem, x, S)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite iterate after iteration {k}")
        yield rec, x, verdict, ci


def solve(problem: lc.WlsProblem, spec: SketchSpec, cfg: TrackerConfig, max_iterations: int, *,
          oracle: bool = False, x0: Optional[np.ndarray] = None, halt: bool = True,
          on_record: Optional[Callable[[TraceRecord], None]] = None, keep_trace: bool = True,
          strict: bool = True, oracle_fed: bool = False) -> SolveReport:
    """Run the tracked sketched iteration until the stopping rule fires.

    ``halt=False`` ignores the stopping rule and runs ``max_iterations``
    (used by the experiments). ``on_record`` receives each trace record as
    soon as it is produced.
    """
    trace: list[TraceRecord] = []
    x = None if x0 is None else np.asarray(x0, dtype=float)
    reason, ci, its = "max_iterations", None, 0
    for rec, x, verdict, ci in iterate(problem, spec, cfg, max_iterations, oracle=oracle, x0=x0, strict=strict,
                                           oracle_fed=oracle_fed):
        its += 1
        if keep_trace:
            trace.append(rec)
        if on_record is not None:
            on_record(rec)
        if halt and verdict.stop:
            reason = "stopped"
            break
    state = lc.SolveState(x, its)
    return SolveReport(x, its, trace, reason, ci, state)
