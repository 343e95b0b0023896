"""Moving-window estimators, credible intervals and the stopping rule.

The tracker keeps the last ``lambda2`` values of ``||g~_i||^2`` and
``||g~_i||^4``. With window width ``lam`` it reports

    rho~  = mean of ||g~_i||^2 over the newest lam entries
    iota~ = mean of ||g~_i||^4 over the newest lam entries

``iota~`` stands in for the unknown ``M^4`` in both the interval width and
the stopping threshold. All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .sketch import SketchSpec


@dataclass(frozen=True)
class TrackerConfig:
    lambda1: int = 1
    lambda2: int = 100
    alpha: float = 0.05
    upsilon: float = 1e-8
    deltaI: float = 0.9
    deltaII: float = 1.1
    xiI: float = 0.01
    xiII: float = 0.01
    eta: float = 1.0

    def __post_init__(self):
        if not (int(self.lambda1) == self.lambda1 and int(self.lambda2) == self.lambda2):
            raise ConfigError("window widths must be integers")
        if not 1 <= self.lambda1 <= self.lambda2:
            raise ConfigError(f"need 1 <= lambda1 <= lambda2, got ({self.lambda1}, {self.lambda2})")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.upsilon >= 0:
            raise ConfigError(f"upsilon must be non-negative, got {self.upsilon}")
        if not 0 < self.deltaI < 1:
            raise ConfigError(f"deltaI must lie in (0, 1), got {self.deltaI}")
        if not self.deltaII > 1:
            raise ConfigError(f"deltaII must exceed 1, got {self.deltaII}")
        if not (0 < self.xiI < 1 and 0 < self.xiII < 1):
            raise ConfigError("xiI and xiII must lie in (0, 1)")
        if not self.eta >= 1:
            raise ConfigError(f"eta must be >= 1, got {self.eta}")


@dataclass(frozen=True)
class CredibleInterval:
    center: float
    half_width: float
    level: float

    @property
    def low(self) -> float:
        return self.center - self.half_width

    @property
    def high(self) -> float:
        return self.center + self.half_width

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class StoppingVerdict:
    stop: bool
    rho_below: bool
    iota_ok: bool
    threshold: float


@dataclass
class TrackerState:
    """Ring buffers of sketched gradient powers plus the current window width.

    ``lam`` is the width the next push will use (capped by the number of
    observations); ``last_lambda`` is the width behind the latest estimate.
    """

    lambda1: int
    lambda2: int
    sq_buffer: np.ndarray = field(init=False, repr=False)
    quad_buffer: np.ndarray = field(init=False, repr=False)
    lam: int = field(init=False)
    k: int = field(init=False, default=0)
    last_lambda: int = field(init=False, default=0)

    def __post_init__(self):
        if not 1 <= self.lambda1 <= self.lambda2:
            raise ConfigError(f"need 1 <= lambda1 <= lambda2, got ({self.lambda1}, {self.lambda2})")
        self.sq_buffer = np.zeros(self.lambda2)
        self.quad_buffer = np.zeros(self.lambda2)
        self.lam = self.lambda1

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> "TrackerState":
        return cls(cfg.lambda1, cfg.lambda2)

    def window(self, lam: int) -> np.ndarray:
        """Indices into the ring of the newest ``lam`` entries."""
        return (self.k - 1 - np.arange(lam)) % self.lambda2

    def push(self, value: float) -> None:
        slot = self.k % self.lambda2
        self.sq_buffer[slot] = value
        self.quad_buffer[slot] = value * value
        self.k += 1

    def estimate(self, lam: int) -> tuple[float, float]:
        idx = self.window(lam)
        return float(self.sq_buffer[idx].mean()), float(self.quad_buffer[idx].mean())


def push_and_estimate(state: TrackerState, g_tilde_norm_sq: float) -> tuple[float, float]:
    """Record ||g~_k||^2 and return (rho~, iota~) over the current window."""
    if not g_tilde_norm_sq >= 0:
        raise ConfigError(f"squared norm must be non-negative, got {g_tilde_norm_sq}")
    state.push(float(g_tilde_norm_sq))
    lam = min(state.lam, state.k)
    state.last_lambda = lam
    return state.estimate(lam)


def _cp_eta(spec: SketchSpec, eta: float | None) -> float:
    return spec.C * spec.p * (spec.eta if eta is None else eta)


def credible_interval(rho_tilde: float, iota_tilde: float, lam: int, spec: SketchSpec,
                      alpha: float, eta: float | None = None) -> CredibleInterval:
    """rho~ +- max(sqrt(2 L iota~ (1+log lam)/(C p lam eta)), 2 L iota~ (1+log lam) omega/(C p lam eta))

    with L = log(2/alpha). ``eta`` defaults to ``spec.eta``.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if not iota_tilde >= 0:
        raise ConfigError(f"iota must be non-negative, got {iota_tilde}")
    if lam < 1:
        raise ConfigError(f"window width must be positive, got {lam}")
    scale = 2.0 * math.log(2.0 / alpha) * iota_tilde * (1.0 + math.log(lam)) / (_cp_eta(spec, eta) * lam)
    half = max(math.sqrt(scale), scale * spec.omega)
    return CredibleInterval(float(rho_tilde), half, 1.0 - alpha)


def _branch(cpe: float, lam: int, upsilon: float, gap: float, omega: float, xi: float) -> float:
    inner = min(gap**2 * upsilon**2, gap * upsilon / omega)
    return cpe * lam * inner / ((1.0 + math.log(lam)) * math.log(2.0 / xi))


def stopping_threshold(lam: int, spec: SketchSpec, cfg: TrackerConfig) -> float:
    """Largest iota~ for which both stopping-error probabilities are controlled."""
    if lam < 1:
        raise ConfigError(f"window width must be positive, got {lam}")
    cpe = spec.C * spec.p * cfg.eta
    late = _branch(cpe, lam, cfg.upsilon, 1.0 - cfg.deltaI, spec.omega, cfg.xiI)
    early = _branch(cpe, lam, cfg.upsilon, cfg.deltaII - 1.0, spec.omega, cfg.xiII)
    return min(late, early)


def stopping_check(rho_tilde: float, iota_tilde: float, lam: int, spec: SketchSpec,
                   cfg: TrackerConfig, k: int | None = None) -> StoppingVerdict:
    """Stop iff rho~ < upsilon and iota~ <= threshold; never at k == 0."""
    threshold = stopping_threshold(lam, spec, cfg)
    rho_below = rho_tilde < cfg.upsilon
    iota_ok = iota_tilde <= threshold
    stop = rho_below and iota_ok and k != 0
    return StoppingVerdict(bool(stop), bool(rho_below), bool(iota_ok), threshold)


def adapt_window(state: TrackerState, ci: CredibleInterval, latest_sq: float) -> int:
    """Pick the window width for the next push.

    The width grows by one per iteration up to lambda2. An observation that
    lands outside the current interval signals a change of regime, and the
    window restarts at lambda1. With lambda1 == lambda2 the width is fixed.
    """
    if state.k == 0:
        state.lam = state.lambda1
    elif not ci.contains(latest_sq):
        state.lam = state.lambda1
    else:
        state.lam = min(state.last_lambda + 1, state.lambda2)
    return state.lam


def iota_relative_tail_bound(eps: float, lam: int, C: float, p: int) -> float:
    """Bound on P(|iota~ - iota| / M^4 > eps) given the window start.

    (1 + lam) exp(-eps^2 C p lam / (2 (2 + (eps^2 lam/(1+log lam))^{1/4})^2 (1+log lam)))
    """
    L = 1.0 + math.log(lam)
    G = 2.0 + (eps**2 * lam / L) ** 0.25
    return (1.0 + lam) * math.exp(-(eps**2) * C * p * lam / (2.0 * G**2 * L))
