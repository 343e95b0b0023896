"""Reduced-memory inner loop of incremental 4D-Var on the shallow-water model.

For an outer estimate ``z_prev`` the increment ``u`` minimizes

    0.5 * ( ||u - (z_b - z_prev)||_V^2
            + sum_{i=1..Nt} ||H M_{0,i} u - (y_i - H(x_i))||_W^2 )

where ``x_i`` is the forward trajectory started at ``z_prev`` and
``M_{0,i}`` the product of step Jacobians along it. The stacked system is
never formed: every sketch iteration regenerates the trajectory, pushes
``(A S)_i = M_i (A S)_{i-1}`` forward one time step at a time and streams
the rows of each block through a Gentleman accumulator of width p. Peak
matrix storage is therefore Ns x p plus p x p.

V and W are diagonal (weight vectors of length Ns); both default to ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg_core as lc
from . import shallow_water as sw
from .errors import ConfigError, NumericalError, OracleSizeError
from .rowstream import GentlemanState
from .sketch import SketchSpec, draw_sketch
from .solver import SolveReport, TraceRecord, _Bookkeeper, check_dimension
from .tracker import TrackerConfig

DENSE_ENTRY_LIMIT = 4_000_000

Probe = Callable[[str, np.ndarray], None]


@dataclass(frozen=True, eq=False)
class FourDVarProblem:
    z_b: np.ndarray = field(repr=False)
    z_prev: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)  # (Nt, Ns); row i-1 observes time i
    dx: float = 100.0
    dt: float = 1e-11
    V: Optional[np.ndarray] = field(default=None, repr=False)
    W: Optional[np.ndarray] = field(default=None, repr=False)
    boundary: str = "periodic"

    def __post_init__(self):
        z_b = np.asarray(self.z_b, dtype=float).reshape(-1)
        z_prev = np.asarray(self.z_prev, dtype=float).reshape(-1)
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        ns = z_b.size
        if ns == 0 or ns % 2:
            raise ConfigError(f"state length must be a positive even number, got {ns}")
        if z_prev.size != ns or y.shape[1] != ns:
            raise ConfigError("z_b, z_prev and observations must share the state length")
        V = np.ones(ns) if self.V is None else np.asarray(self.V, dtype=float).reshape(-1)
        W = np.ones(ns) if self.W is None else np.asarray(self.W, dtype=float).reshape(-1)
        if V.size != ns or W.size != ns:
            raise ConfigError("V and W must be weight vectors of the state length")
        if not (np.all(V > 0) and np.all(W > 0)):
            raise ConfigError("V and W must be positive definite")
        for name, val in (("z_b", z_b), ("z_prev", z_prev), ("y", y), ("V", V), ("W", W)):
            object.__setattr__(self, name, val)
        sw.SwState(z_prev[: ns // 2], z_prev[ns // 2:], self.dx, self.dt, self.boundary)

    @property
    def ns(self) -> int:
        return self.z_b.size

    @property
    def nc(self) -> int:
        return self.z_b.size // 2

    @property
    def nt(self) -> int:
        return self.y.shape[0]

    def initial_state(self) -> sw.SwState:
        return sw.SwState(self.z_prev[: self.nc], self.z_prev[self.nc:], self.dx, self.dt, self.boundary)


def make_problem(nc: int, nt: int, *, dx: float = 100.0, dt: float = 1e-11, noise_seed: Optional[int] = 0,
                 noise_scale: float = 1.0, boundary: str = "periodic") -> FourDVarProblem:
    """Twin experiment: truth from the standard initial condition, noisy phi
    observations, and background = first guess = (j - 100)^4 / 10000."""
    truth = sw.reference_initial_state(nc, dx, dt, boundary)
    traj = sw.simulate(truth, nt)
    y = sw.generate_observations(traj[1:], noise_seed, noise_scale=noise_scale)
    j = np.arange(2 * nc, dtype=float)
    guess = (j - 100.0) ** 4 / 10000.0
    return FourDVarProblem(guess, guess.copy(), y, dx, dt, boundary=boundary)


def _innovations(problem: FourDVarProblem):
    """Yield (i, state x_{i-1}, state x_i, d_i) along the outer trajectory."""
    st = problem.initial_state()
    for i in range(1, problem.nt + 1):
        nxt = sw.step(st)
        d = problem.y[i - 1] - sw.observation_operator(nxt.vector)
        yield i, st, nxt, d
        st = nxt


def dense_system(problem: FourDVarProblem, limit: int = DENSE_ENTRY_LIMIT):
    """Assemble (A, c, w) of the stacked inner problem: min ||A u - c||_w^2.

    Desk-scale oracle only; the streaming solver never calls this.
    """
    ns, nt = problem.ns, problem.nt
    if ns * ns * (nt + 1) > limit:
        raise OracleSizeError(f"dense inner system would have {ns * ns * (nt + 1)} entries (limit {limit})")
    H = sw.observation_jacobian(problem.nc)
    blocks, rhs, wts = [np.eye(ns)], [problem.z_b - problem.z_prev], [problem.V]
    M = np.eye(ns)
    for _, st, _, d in _innovations(problem):
        M = sw.jacobian(st) @ M
        blocks.append(H @ M)
        rhs.append(d)
        wts.append(problem.W)
    return np.vstack(blocks), np.concatenate(rhs), np.concatenate(wts)


def tangent_products(problem: FourDVarProblem, S: np.ndarray) -> list[np.ndarray]:
    """[(A S)_0, (A S)_1, ...] with (A S)_i = M_{0,i} S, as the stream builds them."""
    out = [np.array(S, dtype=float)]
    for _, st, _, _ in _innovations(problem):
        out.append(sw.jacobian(st) @ out[-1])
    return out


def inner_objective(problem: FourDVarProblem, u: np.ndarray, limit: int = DENSE_ENTRY_LIMIT) -> float:
    A, c, w = dense_system(problem, limit)
    r = A @ np.asarray(u, dtype=float) - c
    return 0.5 * float(r @ (w * r))


def dense_solution(problem: FourDVarProblem, limit: int = DENSE_ENTRY_LIMIT) -> np.ndarray:
    A, c, w = dense_system(problem, limit)
    sw_ = np.sqrt(w)
    return np.linalg.lstsq(A * sw_[:, None], c * sw_, rcond=None)[0]


@dataclass
class AssimilationReport(SolveReport):
    """SolveReport whose ``x_final`` is the increment u."""

    @property
    def increment(self) -> np.ndarray:
        return self.x_final


def _sketch_iteration(problem: FourDVarProblem, S: np.ndarray, x: np.ndarray, acc: GentlemanState,
                      probe: Optional[Probe]):
    """One pass over the time window; returns (g_tilde, u) for the current iterate x."""
    nc = problem.nc
    acc.reset()
    AS = S
    r0 = x - (problem.z_b - problem.z_prev)
    g_tilde = AS.T @ (problem.V * r0)
    acc.include_rows(AS, r0, problem.V)
    v = x.copy()  # M_{0,i} x, propagated alongside the sketched columns
    w_obs = problem.W[:nc]
    for i, st, _, d in _innovations(problem):
        J = sw.jacobian(st)
        AS = J @ AS
        if probe is not None:
            probe("AS", AS)
        v = J @ v
        # H keeps the phi rows; the zeroed velocity rows carry no information
        rows = AS[:nc]
        r = v[:nc] - d[:nc]
        g_tilde += rows.T @ (w_obs * r)
        acc.include_rows(rows, r, w_obs)
    if probe is not None:
        probe("R", acc.R)
    return g_tilde, acc.solve()


def assimilate(problem: FourDVarProblem, spec: SketchSpec, cfg: TrackerConfig, max_iterations: int, *,
               oracle: bool = False, halt: bool = True, probe: Optional[Probe] = None,
               on_record: Optional[Callable[[TraceRecord], None]] = None, keep_trace: bool = True,
               strict: bool = True) -> AssimilationReport:
    """Streaming sketched solve of the inner problem with tracking and stopping.

    The sketch width doubles as the accumulator width. ``probe`` is called
    with every matrix the stream materializes, for memory auditing.
    ``oracle=True`` adds exact gradient quantities from the dense assembly
    and is limited to desk-scale sizes.
    """
    if int(max_iterations) != max_iterations or max_iterations < 1:
        raise ConfigError(f"max_iterations must be a positive integer, got {max_iterations}")
    check_dimension(spec, strict)
    ns = problem.ns
    book = _Bookkeeper(spec, cfg, oracle)
    dense = None
    if oracle:
        A, c, w = dense_system(problem)
        dense = lc.WlsProblem(A, c, w, oracle_limit=A.shape[0])
    acc = GentlemanState(spec.p)
    x = np.zeros(ns)
    trace: list[TraceRecord] = []
    reason, ci, its = "max_iterations", None, 0
    for k in range(max_iterations):
        S = draw_sketch(spec, ns, k).matrix
        if probe is not None:
            probe("S", S)
        g_tilde, u = _sketch_iteration(problem, S, x, acc, probe)
        sq = float(g_tilde @ g_tilde)
        extra = {}
        if oracle:
            g = lc.gradient(dense, x)
            pr = lc.projected_residual_norm(dense, x)
            extra = dict(exact_sq=float(g @ g), proj_res=pr, m=dense.spectral_norm * pr)
        rec, ci, verdict = book.record(k, sq, **extra)
        x = x - S @ u
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite increment after iteration {k}")
        its += 1
        if keep_trace:
            trace.append(rec)
        if on_record is not None:
            on_record(rec)
        if halt and verdict.stop:
            reason = "stopped"
            break
    return AssimilationReport(x, its, trace, reason, ci)


def default_tracker_config(nc: int, nt: int, *, lambda1: int = 1, lambda2: int = 100, alpha: float = 0.05,
                         upsilon_scale: float = 1e-9, eta: float = 1.0) -> TrackerConfig:
    """Stopping parameters of the shallow-water experiment: upsilon = scale * Nc (Nt + 1)."""
    return TrackerConfig(lambda1=lambda1, lambda2=lambda2, alpha=alpha,
                         upsilon=upsilon_scale * nc * (nt + 1),
                         deltaI=0.9, deltaII=1.1, xiI=0.95, xiII=0.95, eta=eta)
