import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchtrack.errors import ConfigError
from sketchtrack.sketch import SketchSpec
from sketchtrack.tracker import (
    CredibleInterval,
    TrackerConfig,
    TrackerState,
    adapt_window,
    credible_interval,
    iota_relative_tail_bound,
    push_and_estimate,
    stopping_check,
    stopping_threshold,
)

UNIT = SketchSpec("gaussian", 20, C=1.0, omega=1.0)


def test_single_element_window():
    st_ = TrackerState(1, 1)
    assert push_and_estimate(st_, 4.0) == (4.0, 16.0)


def test_two_element_window():
    st_ = TrackerState(2, 2)
    push_and_estimate(st_, 1.0)
    assert push_and_estimate(st_, 3.0) == (2.0, 5.0)


def test_window_is_capped_by_observation_count():
    st_ = TrackerState(5, 5)
    rho, iota = push_and_estimate(st_, 2.0)
    assert st_.last_lambda == 1
    assert (rho, iota) == (2.0, 4.0)


def test_ring_buffer_keeps_newest_entries():
    st_ = TrackerState(3, 3)
    for v in [1.0, 2.0, 3.0, 4.0, 5.0]:
        rho, iota = push_and_estimate(st_, v)
    assert rho == pytest.approx(4.0)
    assert iota == pytest.approx((9 + 16 + 25) / 3)


def test_negative_input_rejected():
    with pytest.raises(ConfigError):
        push_and_estimate(TrackerState(1, 2), -1.0)


@given(st.floats(0, 1e6), st.integers(1, 30), st.integers(1, 60))
def test_constant_window(c, lam, pushes):
    st_ = TrackerState(lam, lam)
    for _ in range(pushes):
        rho, iota = push_and_estimate(st_, c)
    assert rho == pytest.approx(c, rel=1e-12)
    assert iota == pytest.approx(c * c, rel=1e-12)


@given(st.lists(st.floats(0, 1e8), min_size=1, max_size=80), st.integers(1, 20))
def test_power_mean_inequality(values, lam):
    st_ = TrackerState(lam, lam)
    for v in values:
        rho, iota = push_and_estimate(st_, v)
        assert iota >= rho * rho * (1 - 1e-12)


def test_zero_iota_gives_zero_width():
    assert credible_interval(3.0, 0.0, 5, UNIT, 0.05).half_width == 0.0


def test_half_width_square_root_branch():
    ci = credible_interval(0.0, 1.0, 1, UNIT, 2 / math.e)
    assert ci.half_width == pytest.approx(math.sqrt(0.1), rel=1e-12)
    assert ci.half_width == pytest.approx(0.316228, abs=1e-6)


def test_half_width_linear_branch():
    spec = SketchSpec("gaussian", 20, C=1.0, omega=10.0)
    assert credible_interval(0.0, 1.0, 1, spec, 2 / math.e).half_width == pytest.approx(1.0, rel=1e-12)


def test_interval_endpoints_are_raw():
    ci = credible_interval(0.01, 1.0, 1, UNIT, 0.05)
    assert ci.low < 0
    assert ci.contains(0.01) and not ci.contains(ci.high + 1)


@given(st.floats(1e-6, 1e6), st.integers(1, 200))
def test_eta_strictly_narrows_interval(iota, lam):
    widths = [credible_interval(1.0, iota, lam, UNIT, 0.05, eta=e).half_width for e in (1.0, 1.5, 3.0, 10.0)]
    assert all(a > b for a, b in zip(widths, widths[1:]))


def test_threshold_branches_agree_under_symmetry():
    spec = SketchSpec.for_method("gaussian", 20)
    cfg = TrackerConfig(upsilon=100.0, deltaI=0.9, deltaII=1.1, xiI=0.01, xiII=0.01)
    lam = 100
    cpl = spec.C * 20 * lam
    denom = (1 + math.log(lam)) * math.log(2 / 0.01)
    # inner min: min(0.1^2 * 100^2, 0.1 * 100 / 1) = min(100, 10) = 10
    expected = cpl * 10.0 / denom
    assert stopping_threshold(lam, spec, cfg) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(math.log(2) / 2 * 20 * 100 * 10 / ((1 + math.log(100)) * math.log(200)))


def test_threshold_vanishes_as_omega_grows():
    cfg = TrackerConfig(upsilon=1.0)
    vals = [stopping_threshold(10, SketchSpec("gaussian", 20, C=0.3, omega=w), cfg) for w in (1, 1e3, 1e6, 1e12)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-10


def test_stopping_rule_boundaries():
    spec = SketchSpec.for_method("gaussian", 20)
    cfg = TrackerConfig(upsilon=1e-3)
    thr = stopping_threshold(7, spec, cfg)
    assert not stopping_check(cfg.upsilon, 0.0, 7, spec, cfg, k=5).stop
    assert stopping_check(0.0, 0.0, 7, spec, cfg, k=5).stop
    assert not stopping_check(cfg.upsilon / 2, thr * (1 + 1e-9), 7, spec, cfg, k=5).stop
    assert stopping_check(cfg.upsilon / 2, thr, 7, spec, cfg, k=5).stop


def test_never_stops_at_first_iteration():
    spec = SketchSpec.for_method("gaussian", 20)
    assert not stopping_check(0.0, 0.0, 1, spec, TrackerConfig(), k=0).stop


def _wide():
    return CredibleInterval(0.0, math.inf, 0.95)


def test_window_starts_at_lambda1():
    st_ = TrackerState(2, 9)
    assert st_.lam == 2
    assert adapt_window(st_, _wide(), 1.0) == 2


def test_window_grows_to_lambda2_and_stays():
    st_ = TrackerState(1, 6)
    for _ in range(20):
        push_and_estimate(st_, 1.0)
        adapt_window(st_, _wide(), 1.0)
    assert st_.lam == 6


def test_jump_resets_window():
    spec = SketchSpec.for_method("gaussian", 20)
    st_ = TrackerState(1, 50)
    seq = [1.0] * 60 + [100.0]
    for v in seq:
        rho, iota = push_and_estimate(st_, v)
        ci = credible_interval(rho, iota, st_.last_lambda, spec, 0.05)
        lam = adapt_window(st_, ci, v)
        if v == 1.0 and st_.k > 50:
            assert lam == 50
    assert lam == 1


def test_config_validation():
    for bad in (dict(lambda1=0), dict(lambda1=5, lambda2=4), dict(alpha=1.0), dict(upsilon=-1.0),
                dict(deltaI=1.0), dict(deltaII=1.0), dict(xiI=0.0), dict(eta=0.9)):
        with pytest.raises(ConfigError):
            TrackerConfig(**bad)


@given(st.floats(0.05, 2.0), st.integers(1, 500))
def test_iota_tail_bound_tightens_with_width(eps, lam):
    a = iota_relative_tail_bound(eps, lam, 0.35, 20)
    b = iota_relative_tail_bound(2 * eps, lam, 0.35, 20)
    assert b <= a
