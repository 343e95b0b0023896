import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchtrack.errors import ConfigError, NumericalError
from sketchtrack.rowstream import GentlemanState, include_row, reset, solve


def dense_wls(X, y, w):
    sw = np.sqrt(w)
    return np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]


def stream(X, y, w=None):
    st_ = GentlemanState(X.shape[1])
    w = np.ones(len(y)) if w is None else w
    for row, rhs, wt in zip(X, y, w):
        include_row(st_, row, rhs, wt)
    return st_


def test_scalar_problem():
    assert solve(stream(np.array([[2.0]]), np.array([6.0]))) == pytest.approx([3.0])


def test_identity_rows():
    assert np.array_equal(solve(stream(np.eye(2), np.array([1.0, 2.0]))), [1.0, 2.0])


def test_small_problem_matches_dense(rng):
    X = rng.standard_normal((3, 2))
    y = rng.standard_normal(3)
    u = solve(stream(X, y))
    ref = dense_wls(X, y, np.ones(3))
    assert np.linalg.norm(u - ref) <= 1e-12 * np.linalg.norm(ref)


def test_weight_equals_prescaling(rng):
    X = rng.standard_normal((8, 3))
    y = rng.standard_normal(8)
    w = rng.uniform(0.1, 5.0, 8)
    a = solve(stream(X, y, w))
    b = solve(stream(X * np.sqrt(w)[:, None], y * np.sqrt(w)))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_random_weighted_problem_matches_dense(rng):
    X = rng.standard_normal((50, 10))
    y = rng.standard_normal(50)
    w = rng.uniform(0.2, 3.0, 50)
    st_ = stream(X, y, w)
    u = st_.solve()
    ref = dense_wls(X, y, w)
    assert np.linalg.norm(u - ref) <= 1e-10 * np.linalg.norm(ref)
    r = y - X @ ref
    assert st_.sse == pytest.approx(float(r @ (w * r)), rel=1e-10)


def test_block_include_equals_row_include(rng):
    X = rng.standard_normal((30, 6))
    y = rng.standard_normal(30)
    w = rng.uniform(0.5, 2.0, 30)
    a = stream(X, y, w)
    b = GentlemanState(6).include_rows(X, y, w)
    assert np.allclose(a.solve(), b.solve(), rtol=1e-13)
    assert np.allclose(a.D, b.D) and np.allclose(a.R, b.R)


def test_duplicate_column_reproduces_fitted_values(rng):
    X = rng.standard_normal((20, 3))
    X = np.column_stack([X, X[:, 1]])
    y = rng.standard_normal(20)
    st_ = stream(X, y)
    assert st_.singular().sum() == 1
    fitted = X @ st_.solve()
    ref = X @ np.linalg.lstsq(X, y, rcond=None)[0]
    assert np.linalg.norm(fitted - ref) <= 1e-10 * np.linalg.norm(ref)


def test_reset_forgets_previous_rows(rng):
    st_ = stream(rng.standard_normal((10, 2)), rng.standard_normal(10))
    reset(st_)
    for row, rhs in zip(np.eye(2), [4.0, 5.0]):
        st_.include_row(row, rhs)
    assert np.array_equal(st_.solve(), [4.0, 5.0])
    fresh = stream(np.eye(2), np.array([4.0, 5.0]))
    assert np.array_equal(st_.D, fresh.D) and np.array_equal(st_.R, fresh.R)


def test_reset_mid_stream_uses_only_later_rows(rng):
    X = rng.standard_normal((25, 4))
    y = rng.standard_normal(25)
    st_ = stream(X[:10], y[:10])
    st_.reset()
    for row, rhs in zip(X[10:], y[10:]):
        st_.include_row(row, rhs)
    ref = dense_wls(X[10:], y[10:], np.ones(15))
    assert np.allclose(st_.solve(), ref, rtol=1e-10)


def test_zero_weight_rows_are_skipped(rng):
    X = rng.standard_normal((12, 3))
    y = rng.standard_normal(12)
    w = np.ones(12)
    w[::3] = 0.0
    st_ = stream(X, y, w)
    assert st_.rows == 8
    keep = w > 0
    assert np.allclose(st_.solve(), dense_wls(X[keep], y[keep], w[keep]), rtol=1e-10)


def test_state_size_independent_of_rows(rng):
    st_ = GentlemanState(5)
    sizes = {st_.D.size + st_.R.size + st_.Tab.size}
    for _ in range(200):
        st_.include_row(rng.standard_normal(5), rng.standard_normal())
        sizes.add(st_.D.size + st_.R.size + st_.Tab.size)
    assert sizes == {5 + 25 + 5}


def test_input_validation():
    st_ = GentlemanState(2)
    with pytest.raises(ConfigError):
        st_.solve()
    with pytest.raises(ConfigError):
        st_.include_row([1.0, 2.0, 3.0], 1.0)
    with pytest.raises(ConfigError):
        st_.include_row([1.0, 2.0], 1.0, -1.0)
    with pytest.raises(NumericalError):
        st_.include_row([np.nan, 1.0], 1.0)
    with pytest.raises(ConfigError):
        GentlemanState(0)


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(0, 20))
def test_order_invariance(seed, s, extra):
    rng = np.random.default_rng(seed)
    m = s + 3 + extra
    X = rng.standard_normal((m, s))
    y = rng.standard_normal(m)
    w = rng.uniform(0.5, 2.0, m)
    perm = rng.permutation(m)
    a = stream(X, y, w).solve()
    b = stream(X[perm], y[perm], w[perm]).solve()
    assert np.linalg.norm(a - b) <= 1e-10 * max(1.0, np.linalg.norm(a))
