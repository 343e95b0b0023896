"""Random sketching operators and their concentration constants.

Three embeddings are provided: dense Gaussian, Achlioptas' sparse
{+1, 0, -1} sketch and a subsampled randomized Hadamard transform (FJLT).
Each draw is addressed by ``(seed, iteration_index)`` through a keyed
Philox counter generator, so any iteration of any run can be regenerated
without replaying the ones before it.

All three methods are assumed to satisfy the sub-exponential embedding
property

    P(| ||S^T z||^2 - ||z||^2 | > eps ||z||^2) <= 2 exp(-C p min(eps^2, eps/omega)),

with method-specific constants ``C`` and ``omega``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError

METHODS = ("gaussian", "achlioptas", "fjlt")

# Back-solved so that min_embedding_dim(C, 1, 1) gives 3 (gaussian,
# achlioptas) and 23 (fjlt).
DEFAULT_CONSTANTS = {
    "gaussian": (math.log(2.0) / 2.0, 1.0),
    "achlioptas": (math.log(2.0) / 2.0, 1.0),
    "fjlt": (math.log(2.0) / 22.0, 1.0),
}

# Returned by calibrate_constants when no tail event is ever observed.
C_MAX = 10.0


@dataclass(frozen=True)
class SketchSpec:
    """A sketching method together with its concentration constants."""

    method: str
    p: int
    C: float
    omega: float = 1.0
    eta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown sketch method {self.method!r}; expected one of {METHODS}")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigError(f"embedding dimension p must be a positive integer, got {self.p}")
        if not self.C > 0:
            raise ConfigError(f"C must be positive, got {self.C}")
        if not self.omega > 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if not self.eta >= 1:
            raise ConfigError(f"eta must be >= 1, got {self.eta}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @classmethod
    def for_method(cls, method: str, p: int, *, seed: int = 0, eta: float = 1.0,
                   C: Optional[float] = None, omega: Optional[float] = None) -> "SketchSpec":
        """Build a spec, filling unspecified constants from DEFAULT_CONSTANTS."""
        if method not in DEFAULT_CONSTANTS:
            raise ConfigError(f"unknown sketch method {method!r}; expected one of {METHODS}")
        c0, w0 = DEFAULT_CONSTANTS[method]
        return cls(method, p, c0 if C is None else C, w0 if omega is None else omega, eta, seed)

    @property
    def min_p(self) -> int:
        return min_embedding_dim(self.C, self.omega, 1.0)

    def satisfies_dimension_bound(self) -> bool:
        return self.p >= self.min_p

    def with_seed(self, seed: int) -> "SketchSpec":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SketchDraw:
    matrix: np.ndarray = field(repr=False)
    iteration_index: int

    @property
    def shape(self):
        return self.matrix.shape


def min_embedding_dim(C: float, omega: float, delta: float = 1.0) -> int:
    """Smallest integer p with p > log(2)/C * max(omega^2, 1/delta^2)."""
    if not (C > 0 and omega > 0 and delta > 0):
        raise ConfigError("C, omega and delta must all be positive")
    if delta > 1:
        raise ConfigError(f"delta must lie in (0, 1], got {delta}")
    bound = math.log(2.0) / C * max(omega**2, 1.0 / delta**2)
    # log(2)/(log(2)/2) may evaluate a hair below 2
    nearest = round(bound)
    if abs(bound - nearest) <= 1e-9 * max(1.0, bound):
        bound = float(nearest)
    return int(math.floor(bound)) + 1


def _generator(seed: int, iteration_index: int) -> np.random.Generator:
    if iteration_index < 0:
        raise ConfigError(f"iteration_index must be non-negative, got {iteration_index}")
    key = (int(seed) & (2**64 - 1)) | (int(iteration_index) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _hadamard_rows(rows: np.ndarray, n: int) -> np.ndarray:
    """Entries H[rows, :n] of the unnormalized Sylvester Hadamard matrix."""
    cols = np.arange(n, dtype=np.uint64)
    parity = np.bitwise_count(rows.astype(np.uint64)[:, None] & cols[None, :]) & 1
    return 1.0 - 2.0 * parity


def draw_sketch(spec: SketchSpec, n: int, iteration_index: int) -> SketchDraw:
    """Draw the n-by-p sketch for ``iteration_index`` of the stream ``spec.seed``."""
    if int(n) != n or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n}")
    p = spec.p
    rng = _generator(spec.seed, iteration_index)
    if spec.method == "gaussian":
        S = rng.standard_normal((n, p)) / math.sqrt(p)
    elif spec.method == "achlioptas":
        u = rng.random((n, p))
        S = np.where(u < 1.0 / 6.0, 1.0, np.where(u < 1.0 / 3.0, -1.0, 0.0))
        S *= math.sqrt(3.0 / p)
    else:
        N = 1 << max(0, (n - 1).bit_length())
        if p > N:
            raise ConfigError(f"fjlt needs p <= {N} (padded dimension), got p={p}")
        signs = rng.choice(np.array([-1.0, 1.0]), size=n)
        rows = rng.choice(N, size=p, replace=False)
        # S^T z = sqrt(N/p) * P H_N D z_pad with H_N orthonormal; entries are +-1/sqrt(p)
        S = (_hadamard_rows(rows, n).T * signs[:, None]) / math.sqrt(p)
    return SketchDraw(S, int(iteration_index))


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the first axis."""
    x = np.array(x, dtype=float, copy=True)
    N = x.shape[0]
    if N & (N - 1):
        raise ConfigError(f"fwht length must be a power of two, got {N}")
    h = 1
    while h < N:
        x = x.reshape((N // (2 * h), 2, h) + x.shape[1:])
        a = x[:, 0].copy()
        x[:, 0] += x[:, 1]
        x[:, 1] = a - x[:, 1]
        x = x.reshape((N,) + x.shape[3:])
        h *= 2
    return x


def sample_sq_norms(spec: SketchSpec, z: np.ndarray, trials: int, start: int = 0,
                    draw: Optional[Callable[[int], np.ndarray]] = None) -> np.ndarray:
    """||S_i^T z||^2 for draws i = start .. start + trials - 1."""
    z = np.asarray(z, dtype=float)
    out = np.empty(trials)
    for i in range(trials):
        S = draw(start + i) if draw is not None else draw_sketch(spec, z.size, start + i).matrix
        v = S.T @ z
        out[i] = v @ v
    return out


def calibrate_constants(method: str, n: int, p: int, trials: int, epsilon_grid: Sequence[float], *,
                        seed: int = 0, omega: float = 1.0, probe: Optional[np.ndarray] = None,
                        draw: Optional[Callable[[int], np.ndarray]] = None,
                        c_max: float = C_MAX) -> tuple[float, float]:
    """Fit (C, omega) to Monte Carlo tail frequencies on a probe vector.

    ``omega`` is held at the supplied value (default 1, the floor used by
    the dimension bound) and C is the largest value for which the bound
    holds at every grid point. A grid point with no observed exceedance
    does not constrain C; if none do, ``c_max`` is returned.

    ``draw`` replaces the sampler (called with the draw index) so that
    deterministic operators can be calibrated too.
    """
    if not epsilon_grid:
        raise ConfigError("epsilon_grid must be non-empty")
    if any(e <= 0 for e in epsilon_grid):
        raise ConfigError("epsilon_grid entries must be positive")
    if probe is None:
        probe = np.random.default_rng(12345).standard_normal(n)
    probe = np.asarray(probe, dtype=float)
    znorm2 = float(probe @ probe)
    if not znorm2 > 0:
        raise ConfigError("probe vector has zero norm")
    spec = SketchSpec.for_method(method, p, seed=seed, omega=omega)
    sq = sample_sq_norms(spec, probe, trials, draw=draw)
    return calibrate_from_samples(sq / znorm2, p, epsilon_grid, omega=omega, c_max=c_max)


def calibrate_from_samples(ratios: np.ndarray, p: int, epsilon_grid: Sequence[float], *,
                           omega: float = 1.0, c_max: float = C_MAX) -> tuple[float, float]:
    """Same fit as calibrate_constants, on precomputed ratios ||S^T z||^2 / ||z||^2."""
    dev = np.abs(np.asarray(ratios, dtype=float) - 1.0)
    C = c_max
    for eps in epsilon_grid:
        freq = np.count_nonzero(dev > eps) / dev.size
        if freq > 0:
            C = min(C, math.log(2.0 / freq) / (p * min(eps**2, eps / omega)))
    # keep the binding grid point on the safe side of rounding
    return C * (1.0 - 1e-12), float(omega)


def tail_bound(C: float, p: int, eps: float, omega: float) -> float:
    return 2.0 * math.exp(-C * p * min(eps**2, eps / omega))
