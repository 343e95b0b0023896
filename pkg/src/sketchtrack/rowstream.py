"""Square-root-free Givens updates for weighted least squares (Gentleman).

The accumulator holds the factorization ``sum_rows w a a^T = R^T diag(D) R``
with ``R`` unit upper triangular, plus the transformed right-hand side
``Tab`` so that the least-squares solution is ``R^{-1} Tab``. Storage is
O(s^2) regardless of how many rows have been streamed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError

# A pivot D[i] below this fraction of the weighted column sum of squares is
# treated as a dependent column.
SINGULAR_TOL = 1e-10
ELIM_TOL = 1e-11


@njit(cache=True)
def _include(D, R, Tab, colss, row, y, w):
    s = D.shape[0]
    for j in range(s):
        colss[j] += w * row[j] * row[j]
    for i in range(s):
        if w == 0.0:
            return 0.0
        xi = row[i]
        # rounding residue of a dependent column; rotating it in would
        # divide by a near-zero pivot and pollute the later columns
        if abs(xi) <= ELIM_TOL * np.sqrt(colss[i]):
            continue
        di = D[i]
        dpi = di + w * xi * xi
        cbar = di / dpi
        sbar = w * xi / dpi
        w = cbar * w
        D[i] = dpi
        for k in range(i + 1, s):
            xk = row[k]
            row[k] = xk - xi * R[i, k]
            R[i, k] = cbar * R[i, k] + sbar * xk
        yk = y
        y = yk - xi * Tab[i]
        Tab[i] = cbar * Tab[i] + sbar * yk
    return w * y * y


@njit(cache=True)
def _include_block(D, R, Tab, colss, rows, ys, ws):
    sse = 0.0
    work = np.empty(rows.shape[1])
    for r in range(rows.shape[0]):
        if ws[r] == 0.0:
            continue
        for j in range(rows.shape[1]):
            work[j] = rows[r, j]
        sse += _include(D, R, Tab, colss, work, ys[r], ws[r])
    return sse


class GentlemanState:
    """Streaming weighted least-squares accumulator with state (D, R, Tab)."""

    def __init__(self, s: int):
        if int(s) != s or s < 1:
            raise ConfigError(f"column count must be a positive integer, got {s}")
        self.s = int(s)
        self.D = np.zeros(self.s)
        self.R = np.zeros((self.s, self.s))
        self.Tab = np.zeros(self.s)
        self.sse = 0.0
        self.rows = 0
        self._colss = np.zeros(self.s)

    def include_row(self, row, rhs: float, weight: float = 1.0) -> "GentlemanState":
        row = np.array(row, dtype=float).reshape(-1)
        if row.size != self.s:
            raise ConfigError(f"row has length {row.size}, expected {self.s}")
        if not (np.all(np.isfinite(row)) and np.isfinite(rhs) and np.isfinite(weight)):
            raise NumericalError("non-finite value passed to include_row")
        if weight < 0:
            raise ConfigError(f"weight must be non-negative, got {weight}")
        if weight > 0:
            self.sse += _include(self.D, self.R, self.Tab, self._colss, row, float(rhs), float(weight))
            self.rows += 1
        return self

    def include_rows(self, rows, rhs, weights=None) -> "GentlemanState":
        """Stream a block of rows in order; equivalent to repeated include_row."""
        rows = np.ascontiguousarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.s:
            raise ConfigError(f"rows must have shape (k, {self.s}), got {rows.shape}")
        rhs = np.ascontiguousarray(rhs, dtype=float).reshape(-1)
        if weights is None:
            weights = np.ones(rows.shape[0])
        else:
            weights = np.ascontiguousarray(np.broadcast_to(np.asarray(weights, dtype=float), rhs.shape))
        if rhs.size != rows.shape[0]:
            raise ConfigError("rhs length does not match the number of rows")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(rhs)) and np.all(np.isfinite(weights))):
            raise NumericalError("non-finite value passed to include_rows")
        if np.any(weights < 0):
            raise ConfigError("weights must be non-negative")
        self.sse += _include_block(self.D, self.R, self.Tab, self._colss, rows, rhs, weights)
        self.rows += int(np.count_nonzero(weights))
        return self

    def singular(self) -> np.ndarray:
        return self.D <= SINGULAR_TOL * self._colss

    def solve(self) -> np.ndarray:
        """Back-substitute R u = Tab; dependent columns get coefficient zero."""
        if self.rows == 0:
            raise ConfigError("no rows have been included")
        sing = self.singular()
        u = np.zeros(self.s)
        for i in range(self.s - 1, -1, -1):
            if sing[i]:
                continue
            u[i] = self.Tab[i] - self.R[i, i + 1:] @ u[i + 1:]
        return u

    def reset(self) -> "GentlemanState":
        self.D[:] = 0.0
        self.R[:] = 0.0
        self.Tab[:] = 0.0
        self._colss[:] = 0.0
        self.sse = 0.0
        self.rows = 0
        return self


def include_row(state: GentlemanState, row, rhs: float, weight: float = 1.0) -> GentlemanState:
    return state.include_row(row, rhs, weight)


def solve(state: GentlemanState) -> np.ndarray:
    return state.solve()


def reset(state: GentlemanState) -> GentlemanState:
    return state.reset()
