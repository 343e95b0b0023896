"""Acceptance suite: one test per acceptance criterion, at the stated tolerances.

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
import tracemalloc

import numpy as np
import pytest

from sketchtrack import experiments as ex
from sketchtrack import fourdvar as fv
from sketchtrack import linalg_core as lc
from sketchtrack import shallow_water as sw
from sketchtrack.problems_io import GENERATORS, suite_matrix
from sketchtrack.rowstream import GentlemanState
from sketchtrack.sketch import (
    METHODS,
    SketchSpec,
    calibrate_constants,
    calibrate_from_samples,
    draw_sketch,
    sample_sq_norms,
    tail_bound,
)
from sketchtrack.tracker import TrackerConfig

EPSILONS = (0.25, 0.5, 1.0)


def test_criterion_01_sketch_concentration():
    n, p, trials = 512, 20, 100_000
    z = np.random.default_rng(12345).standard_normal(n)
    z /= np.linalg.norm(z)
    t0 = time.perf_counter()
    for method in METHODS:
        sq = sample_sq_norms(SketchSpec.for_method(method, p, seed=2024), z, trials)
        se = sq.std(ddof=1) / math.sqrt(trials)
        assert abs(sq.mean() - 1.0) <= 3 * se, method
        C, omega = calibrate_from_samples(sq, p, EPSILONS)
        assert 0.05 <= C <= 0.5 and omega == 1.0, (method, C)
        for eps in EPSILONS:
            freq = np.count_nonzero(np.abs(sq - 1.0) > eps) / trials
            assert freq <= tail_bound(C, p, eps, omega), (method, eps, freq)
        # a fit on independent draws lands close to the large-sample fit
        C_small, _ = calibrate_constants(method, n, p, 20_000, EPSILONS, seed=77, probe=z)
        assert abs(C_small - C) <= 0.25 * C, (method, C_small, C)
    assert time.perf_counter() - t0 < 120


def test_criterion_02_full_sketch_exactness():
    rng = np.random.default_rng(2)
    prob = lc.WlsProblem(rng.standard_normal((64, 32)), rng.standard_normal(64))
    x1 = lc.block_update(prob, np.zeros(32), np.eye(32))
    assert np.linalg.norm(lc.gradient(prob, x1)) <= 1e-10


def _monotone_systems():
    out = []
    for i, (m, n) in enumerate([(64, 32), (128, 64), (256, 128), (256, 128), (512, 256), (300, 150),
                                (1024, 512), (200, 100)]):
        out.append(("rand_dense", m, n, i, None))
    for i, cond in enumerate([10.0, 100.0, 1000.0]):
        out.append(("rand_illcond", 256, 128, 20 + i, cond))
    for g in ("hadamard", "rohess", "wilkinson"):
        for i, (m, n) in enumerate([(128, 64), (256, 128), (512, 256)]):
            out.append((g, m, n, 30 + i, None))
    return out


def test_criterion_03_monotone_projected_residual():
    systems = _monotone_systems()
    assert len(systems) == 20
    for j, (kind, m, n, seed, cond) in enumerate(systems):
        A = suite_matrix(kind, m, n, seed=seed, cond=cond)
        b = np.random.default_rng(seed + 7).standard_normal(m)
        prob = lc.WlsProblem(A, b)
        spec = SketchSpec.for_method(METHODS[j % 3], 20, seed=seed)
        x = np.zeros(n)
        first = prev = lc.projected_residual_norm(prob, x)
        reached = False
        for k in range(10_000):
            x = lc.block_update(prob, x, draw_sketch(spec, n, k))
            cur = lc.projected_residual_norm(prob, x)
            assert cur <= prev + 1e-12 * first, (kind, m, n, k)
            prev = cur
            if cur <= 1e-6 * first:
                reached = True
                break
        assert reached, (kind, m, n, cur / first)


@pytest.fixture(scope="module")
def replica_traces():
    """Generators x methods at 256 x 128, p = 20, 2000 iterations, oracle on.

    The run uses the stopping-experiment tracker settings; the estimators and
    the window rule do not depend on upsilon, delta or xi, so the same traces
    serve the consistency check.
    """
    cfg = ex.default_stopping_config()
    cells = ex.trace_cells(GENERATORS, METHODS, m=256, n=128, p=20, iterations=2000, cfg=cfg, seed=0)
    t0 = time.perf_counter()
    results = ex.run_pool(ex.run_trace_cell, cells)
    return results, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_04_consistency_replica(replica_traces):
    results, elapsed = replica_traces
    assert len(results) == 18
    summary = ex.consistency_summary(results)
    assert len(summary) == 2000
    for name in ("rho", "iota"):
        verdict = ex.trend_check([s[f"{name}_p50"] for s in summary], factor=1.5)
        assert verdict.ok, (name, verdict)
    assert elapsed < 600


@pytest.mark.slow
def test_criterion_05_coverage_replica():
    t0 = time.perf_counter()
    setup = ex.CoverageSetup(generator="golub", m=512, n=256, method="gaussian", p=25, window=15,
                             alpha=0.05, eta=1.0, phase1_iterations=500, checkpoints=50, replicates=200)
    rows, rate = ex.coverage_experiment(setup)
    assert len(rows) == 50 and all(r["replicates"] == 200 for r in rows)
    assert rate <= 0.05
    assert time.perf_counter() - t0 < 900


@pytest.mark.slow
def test_criterion_06_stopping_error_control(replica_traces):
    results, elapsed = replica_traces
    cfg = results[0].cell.cfg
    assert (cfg.upsilon, cfg.deltaI, cfg.deltaII, cfg.xiI, cfg.xiII) == (100.0, 0.9, 1.1, 0.01, 0.01)
    summary = ex.stopping_summary(results)
    late, early, n = ex.pooled_error_rates(summary)
    assert n > 0
    assert late <= 0.01 and early <= 0.01
    for row in summary:
        assert row["late_freq"] <= 0.01 and row["early_freq"] <= 0.01, row
    assert elapsed < 600


def test_criterion_07_gentleman_equivalence():
    rng = np.random.default_rng(7)
    for _ in range(100):
        s = int(rng.integers(1, 11))
        m = int(rng.integers(s + 1, 51))
        X = rng.standard_normal((m, s))
        y = rng.standard_normal(m)
        w = rng.uniform(0.1, 10.0, m)
        u = GentlemanState(s).include_rows(X, y, w).solve()
        sw_ = np.sqrt(w)
        ref = np.linalg.lstsq(X * sw_[:, None], y * sw_, rcond=None)[0]
        res_stream = float(np.sum(w * (y - X @ u) ** 2))
        res_dense = float(np.sum(w * (y - X @ ref) ** 2))
        assert abs(res_stream - res_dense) <= 1e-10 * res_dense
        assert np.linalg.norm(u - ref) <= 1e-10 * np.linalg.cond(X * sw_[:, None]) * np.linalg.norm(ref)


def test_criterion_08_tangent_model():
    rng = np.random.default_rng(8)
    h = 1e-6
    for trial in range(20):
        nc = int(rng.integers(5, 30))
        boundary = sw.BOUNDARIES[trial % 2]
        st_ = sw.SwState(rng.uniform(0.2, 3.0, nc), rng.uniform(-2.0, 2.0, nc),
                         dx=float(rng.uniform(0.5, 5.0)), dt=float(rng.uniform(1e-3, 5e-2)), boundary=boundary)
        J = sw.jacobian(st_)
        Jd = J.toarray()
        z = st_.vector
        fd = np.empty_like(Jd)
        for j in range(z.size):
            e = np.zeros(z.size)
            e[j] = h
            fd[:, j] = (sw.step(st_.with_vector(z + e)).vector - sw.step(st_.with_vector(z - e)).vector) / (2 * h)
        nz = Jd != 0
        assert np.max(np.abs(Jd[nz] - fd[nz]) / np.abs(Jd[nz])) <= 1e-5
        # clamped edges reuse their own phi as the missing neighbour; everywhere else the entry is exact zero
        cells = range(nc) if boundary == "periodic" else range(1, nc - 1)
        for x in cells:
            assert Jd[nc + x, x] == 0.0


def _tiny_instance(i):
    rng = np.random.default_rng(900 + i)
    nc = int(rng.integers(3, 6))
    nt = int(rng.integers(1, 4))
    dx, dt = 1.0, float(rng.uniform(1e-3, 2e-2))
    boundary = "clamped" if i % 4 == 3 else "periodic"
    z_prev = np.concatenate([rng.uniform(0.5, 1.5, nc), rng.uniform(-0.5, 0.5, nc)])
    z_b = z_prev + 0.1 * rng.standard_normal(2 * nc)
    truth = sw.SwState(z_prev[:nc] + 0.05 * rng.standard_normal(nc), z_prev[nc:], dx, dt, boundary)
    y = sw.generate_observations(sw.simulate(truth, nt)[1:], 900 + i, noise_scale=0.01)
    V = rng.uniform(0.5, 2.0, 2 * nc) if i % 2 else None
    W = rng.uniform(0.5, 2.0, 2 * nc) if i % 3 == 1 else None
    return fv.FourDVarProblem(z_b, z_prev, y, dx, dt, V, W, boundary)


def test_criterion_09_streaming_4dvar_equivalence():
    for i in range(10):
        prob = _tiny_instance(i)
        assert prob.nc <= 5 and prob.nt <= 3
        spec = SketchSpec.for_method(("gaussian", "achlioptas")[i % 2], 4, seed=i)
        rep = fv.assimilate(prob, spec, TrackerConfig(upsilon=0.0), 800)
        ref = fv.inner_objective(prob, fv.dense_solution(prob))
        got = fv.inner_objective(prob, rep.increment)
        assert abs(got - ref) <= 1e-6 * ref, (i, got, ref)


def test_criterion_10_memory_contract(monkeypatch):
    nc, nt, p = 200, 50, 20
    prob = fv.make_problem(nc, nt)
    ns = prob.ns
    spec = SketchSpec.for_method("achlioptas", p, seed=0)
    cfg = fv.default_tracker_config(nc, nt)
    largest = {}

    def probe(name, a):
        largest[name] = max(largest.get(name, 0), a.size)

    def no_dense(*args, **kwargs):
        raise AssertionError("dense assembly must not be used by the streaming solver")

    fv.assimilate(prob, spec, cfg, 1, probe=probe)  # compile kernels outside the measurement
    monkeypatch.setattr(fv, "dense_system", no_dense)
    tracemalloc.start()
    try:
        rep = fv.assimilate(prob, spec, cfg, 4, probe=probe)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert rep.iterations == 4
    assert set(largest) == {"S", "AS", "R"}
    assert max(largest.values()) <= max(ns * p, p * p)
    # no single Ns x Ns float64 array could have been live, let alone the stacked system
    assert peak < ns * ns * 8
