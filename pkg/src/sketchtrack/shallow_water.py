"""1-D shallow-water dynamics: forward-Euler step and its tangent model.

With c = dt / (2 dx) and neighbours phi[x-1], phi[x+1] (likewise u),

    phi' = phi + c * (u   * (phi[x-1] - phi[x+1]) + phi * (u[x-1] - u[x+1]))
    u'   = u   + c * (       phi[x-1] - phi[x+1]  + u   * (u[x-1] - u[x+1]))

Neighbours wrap around by default. ``boundary="clamped"`` instead repeats
the edge value outside the domain, which is offered for sensitivity checks.
The state vector used by the tangent model is ``[phi; u]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError

BOUNDARIES = ("periodic", "clamped")


@dataclass(frozen=True, eq=False)
class SwState:
    phi: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    dx: float = 100.0
    dt: float = 1e-11
    boundary: str = "periodic"

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        if phi.size != u.size or phi.size == 0:
            raise ConfigError(f"phi and u must be non-empty and equal length, got {phi.size}, {u.size}")
        if not (self.dx > 0 and self.dt > 0):
            raise ConfigError("dx and dt must be positive")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "u", u)

    @property
    def nc(self) -> int:
        return self.phi.size

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.u])

    def with_vector(self, z: np.ndarray) -> "SwState":
        z = np.asarray(z, dtype=float)
        return replace(self, phi=z[: self.nc], u=z[self.nc:])


def neighbours(nc: int, boundary: str = "periodic") -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (left, right) of each coordinate's stencil neighbours."""
    idx = np.arange(nc)
    if boundary == "periodic":
        return (idx - 1) % nc, (idx + 1) % nc
    if boundary == "clamped":
        return np.maximum(idx - 1, 0), np.minimum(idx + 1, nc - 1)
    raise ConfigError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")


def step(state: SwState) -> SwState:
    if not (np.all(np.isfinite(state.phi)) and np.all(np.isfinite(state.u))):
        raise NumericalError("non-finite shallow-water state")
    left, right = neighbours(state.nc, state.boundary)
    phi, u = state.phi, state.u
    c = state.dt / (2.0 * state.dx)
    dphi = phi[left] - phi[right]
    du = u[left] - u[right]
    # overflow surfaces as non-finite values, which simulate() reports with the step index
    with np.errstate(over="ignore", invalid="ignore"):
        phi_new = phi + c * (u * dphi + phi * du)
        u_new = u + c * (dphi + u * du)
    return replace(state, phi=phi_new, u=u_new)


def jacobian(state: SwState) -> sp.csr_matrix:
    """Sparse d[phi'; u'] / d[phi; u], at most six non-zeros per row."""
    nc = state.nc
    left, right = neighbours(nc, state.boundary)
    phi, u = state.phi, state.u
    c = state.dt / (2.0 * state.dx)
    idx = np.arange(nc)
    du = u[left] - u[right]
    dphi = phi[left] - phi[right]
    one = np.ones(nc)
    P, U = 0, nc  # block offsets
    blocks = [
        # d phi'
        (P + idx, P + right, -c * u),
        (P + idx, P + idx, 1.0 + c * du),
        (P + idx, P + left, c * u),
        (P + idx, U + right, -c * phi),
        (P + idx, U + idx, c * dphi),
        (P + idx, U + left, c * phi),
        # d u'; the d u'(x) / d phi(x) partial is identically zero
        (U + idx, P + right, -c * one),
        (U + idx, P + left, c * one),
        (U + idx, U + right, -c * u),
        (U + idx, U + idx, 1.0 + c * du),
        (U + idx, U + left, c * u),
    ]
    rows = np.concatenate([b[0] for b in blocks])
    cols = np.concatenate([b[1] for b in blocks])
    vals = np.concatenate([b[2] for b in blocks])
    # coinciding stencil positions (tiny or clamped grids) add up, as the chain rule requires
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nc, 2 * nc))


def simulate(initial: SwState, steps: int) -> list[SwState]:
    if int(steps) != steps or steps < 1:
        raise ConfigError(f"steps must be a positive integer, got {steps}")
    traj = [initial]
    for i in range(steps):
        try:
            nxt = step(traj[-1])
        except NumericalError as exc:
            raise NumericalError(f"simulation blew up before step {i}") from exc
        if not (np.all(np.isfinite(nxt.phi)) and np.all(np.isfinite(nxt.u))):
            raise NumericalError(f"simulation blew up at step {i + 1}")
        traj.append(nxt)
    return traj


def reference_initial_state(nc: int, dx: float = 100.0, dt: float = 1e-11, boundary: str = "periodic") -> SwState:
    """phi_i = (i - 100)^2 / 10000 and u = 0.5 everywhere."""
    i = np.arange(nc, dtype=float)
    return SwState((i - 100.0) ** 2 / 10000.0, np.full(nc, 0.5), dx, dt, boundary)


def generate_observations(trajectory: list[SwState], noise_seed: int | None, *,
                          noise_scale: float = 1.0) -> np.ndarray:
    """Observation vectors y_i = [phi_i + N(0, 1) noise; 0] for every state.

    Returns an array of shape (len(trajectory), 2 * nc). ``noise_seed=None``
    or ``noise_scale=0`` gives noise-free observations.
    """
    if not trajectory:
        raise ConfigError("trajectory is empty")
    nc = trajectory[0].nc
    y = np.zeros((len(trajectory), 2 * nc))
    for i, st in enumerate(trajectory):
        y[i, :nc] = st.phi
    if noise_seed is not None and noise_scale != 0:
        rng = np.random.default_rng(noise_seed)
        y[:, :nc] += noise_scale * rng.standard_normal((len(trajectory), nc))
    return y


def observation_operator(state_vector: np.ndarray) -> np.ndarray:
    """H: keep the phi block, zero the velocity block."""
    z = np.asarray(state_vector, dtype=float)
    out = np.zeros_like(z)
    nc = z.size // 2
    out[:nc] = z[:nc]
    return out


def observation_jacobian(nc: int) -> sp.csr_matrix:
    d = np.concatenate([np.ones(nc), np.zeros(nc)])
    return sp.diags(d, format="csr")
