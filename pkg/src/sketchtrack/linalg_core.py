"""Weighted least-squares problems and the sketched block update.

The objective is ``0.5 * ||A x - b||_B^2`` with ``B`` symmetric positive
definite. ``B`` is stored either as a weight vector (diagonal) or as a
dense matrix; in both cases the whitened pair ``(B^{1/2} A, B^{1/2} b)`` is
formed once so that every update is an ordinary least-squares solve.

The oracle quantities (projected residual norm and ``M``) need an
orthonormal basis of ``col(B^{1/2} A)`` and a dense SVD, so they are only
available below ``oracle_limit`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionError, OracleSizeError
from .sketch import SketchDraw

ORACLE_ROW_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class WlsProblem:
    A: np.ndarray
    b: np.ndarray
    weight: Optional[np.ndarray] = None
    oracle_limit: int = ORACLE_ROW_LIMIT
    _sqrt_w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        m, n = A.shape
        if b.size != m:
            raise DimensionError(f"b has length {b.size}, expected {m}")
        w = self.weight
        if w is None:
            sqrt_w = np.ones(m)
        else:
            w = np.asarray(w, dtype=float)
            if w.ndim == 1:
                if w.size != m:
                    raise DimensionError(f"weight vector has length {w.size}, expected {m}")
                if not np.all(w > 0):
                    raise DimensionError("diagonal weights must be strictly positive")
                sqrt_w = np.sqrt(w)
            elif w.shape == (m, m):
                if not np.allclose(w, w.T, rtol=1e-12, atol=0):
                    raise DimensionError("weight matrix is not symmetric")
                evals, evecs = np.linalg.eigh(w)
                if evals.min() <= 0:
                    raise DimensionError("weight matrix is not positive definite")
                sqrt_w = (evecs * np.sqrt(evals)) @ evecs.T
            else:
                raise DimensionError(f"weight has shape {w.shape}, expected ({m},) or ({m}, {m})")
            w = w.copy()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "_sqrt_w", sqrt_w)

    @property
    def shape(self):
        return self.A.shape

    @property
    def diagonal_weight(self) -> bool:
        return self._sqrt_w.ndim == 1

    def apply_weight(self, r: np.ndarray) -> np.ndarray:
        if self.weight is None:
            return r
        if self.weight.ndim == 1:
            return self.weight * r
        return self.weight @ r

    def apply_sqrt_weight(self, r: np.ndarray) -> np.ndarray:
        if self._sqrt_w.ndim == 1:
            return (self._sqrt_w * r.T).T
        return self._sqrt_w @ r

    @cached_property
    def A_w(self) -> np.ndarray:
        """B^{1/2} A."""
        return self.apply_sqrt_weight(self.A)

    @cached_property
    def b_w(self) -> np.ndarray:
        return self.apply_sqrt_weight(self.b)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.A @ self._check_x(x) - self.b

    def objective(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ self.apply_weight(r))

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.A.shape[1]:
            raise DimensionError(f"x has length {x.size}, expected {self.A.shape[1]}")
        return x

    def _require_oracle(self):
        if self.A.shape[0] > self.oracle_limit:
            raise OracleSizeError(
                f"oracle quantities need m <= {self.oracle_limit}, problem has m = {self.A.shape[0]}")

    @cached_property
    def range_basis(self) -> np.ndarray:
        """Orthonormal basis of col(B^{1/2} A)."""
        self._require_oracle()
        return scipy.linalg.orth(self.A_w)

    @cached_property
    def spectral_norm(self) -> float:
        """||A^T B^{1/2}||_2."""
        self._require_oracle()
        return float(scipy.linalg.svdvals(self.A_w)[0])


@dataclass
class SolveState:
    x: np.ndarray
    k: int = 0
    g_tilde: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def gradient(problem: WlsProblem, x: np.ndarray) -> np.ndarray:
    """A^T B (A x - b)."""
    r = problem.residual(x)
    return problem.A.T @ problem.apply_weight(r)


def sketched_gradient(problem: WlsProblem, x: np.ndarray, S: SketchDraw | np.ndarray) -> np.ndarray:
    S = _matrix(S, problem.A.shape[1])
    return S.T @ gradient(problem, x)


def projected_residual_norm(problem: WlsProblem, x: np.ndarray) -> float:
    """||P B^{1/2} (A x - b)||_2 with P the projector onto col(B^{1/2} A)."""
    psi = problem.A_w @ problem._check_x(x) - problem.b_w
    return float(np.linalg.norm(problem.range_basis.T @ psi))


def m_value(problem: WlsProblem, x: np.ndarray) -> float:
    """||A^T B^{1/2}||_2 * ||P B^{1/2} (A x - b)||_2."""
    return problem.spectral_norm * projected_residual_norm(problem, x)


def block_update(problem: WlsProblem, x: np.ndarray, S: SketchDraw | np.ndarray) -> np.ndarray:
    """One sketched step x - S (S^T A^T B A S)^+ S^T A^T B (A x - b).

    The pseudoinverse is applied as the minimum-norm least-squares solution
    of ``(B^{1/2} A S) u = B^{1/2} r``, which is algebraically the same
    vector and avoids squaring the condition number of ``A S``.
    """
    x = problem._check_x(x)
    S = _matrix(S, x.size)
    X = problem.A_w @ S
    psi = problem.A_w @ x - problem.b_w
    m, p = X.shape
    rcond = max(m, p) * np.finfo(float).eps
    u = scipy.linalg.lstsq(X, psi, cond=rcond, lapack_driver="gelsd")[0]
    return x - S @ u


def _matrix(S, n: int) -> np.ndarray:
    M = S.matrix if isinstance(S, SketchDraw) else np.asarray(S, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape[0] != n:
        raise DimensionError(f"sketch has {M.shape[0]} rows, expected {n}")
    return M
