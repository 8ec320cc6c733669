"""Agent dynamics, hold semantics and exact propagation between events.

Three agent models share the same pattern: a frozen state object whose error
signals are properties computed from the stored samples, a control law, and
a propagation routine that is exact (or matrix-exponential exact) as long as
no event happens inside the step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sl

from .graph import Graph, laplacian

CLOCK_OWN = "own"
CLOCK_SENDER = "sender"
EXPM_MAX_DIM = 400
RK4_STEP = 1e-3


class DivergenceError(FloatingPointError):
    """State became nonfinite or exceeded the divergence guard."""


def _lap(g) -> np.ndarray:
    return laplacian(g) if isinstance(g, Graph) else np.asarray(g, dtype=float)


def check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError("nonfinite state")


# ---------------------------------------------------------------------------
# single integrator, zero-order hold


@dataclass(frozen=True)
class SingleIntegratorState:
    t: float
    x: np.ndarray
    x_hat: np.ndarray

    @property
    def e(self) -> np.ndarray:
        return self.x_hat - self.x


def si_control(x_hat, g) -> np.ndarray:
    """u = -L x_hat."""
    return -(_lap(g) @ np.asarray(x_hat, dtype=float))


def si_propagate(state: SingleIntegratorState, dt: float, g=None,
                 u: np.ndarray | None = None) -> SingleIntegratorState:
    """Exact ZOH step. Pass either the graph (u = -L x_hat) or a precomputed u."""
    if u is None:
        u = si_control(state.x_hat, g)
    x = state.x + dt * u
    check_finite(x)
    return replace(state, t=state.t + dt, x=x)


# ---------------------------------------------------------------------------
# double integrator, first-order hold


@dataclass(frozen=True)
class DoubleIntegratorState:
    t: float
    r: np.ndarray
    v: np.ndarray
    r_hat: np.ndarray
    v_hat: np.ndarray
    t_last: np.ndarray

    @property
    def e_r(self) -> np.ndarray:
        return self.r_hat + (self.t - self.t_last) * self.v_hat - self.r

    @property
    def e_v(self) -> np.ndarray:
        return self.v_hat - self.v

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])


def gamma_matrix(g, gamma: float) -> np.ndarray:
    """Closed-loop matrix [[0, I], [-L, -gamma L]] acting on (r; v)."""
    L = _lap(g)
    n = L.shape[0]
    return np.block([[np.zeros((n, n)), np.eye(n)], [-L, -gamma * L]])


def di_decay_rate(g, gamma: float) -> float:
    """Third smallest |Re| among the eigenvalues of Gamma (two are zero)."""
    ev = np.sort(np.abs(np.linalg.eigvals(gamma_matrix(g, gamma)).real))
    return float(ev[2])


def di_control_coeffs(state: DoubleIntegratorState, g, gamma: float,
                      clock: str = CLOCK_OWN) -> tuple[np.ndarray, np.ndarray]:
    """(u0, u1) with u(state.t + tau) = u0 + tau * u1 until the next event.

    ``clock="own"`` extrapolates every term in agent i's law with i's own
    last event time; ``clock="sender"`` extrapolates neighbor j's broadcast
    with j's event time.
    """
    L = _lap(g)
    Lv = L @ state.v_hat
    age = state.t - state.t_last
    if clock == CLOCK_OWN:
        u0 = -(L @ state.r_hat) - age * Lv - gamma * Lv
    elif clock == CLOCK_SENDER:
        u0 = -(L @ (state.r_hat + age * state.v_hat)) - gamma * Lv
    else:
        raise ValueError(f"unknown clock convention {clock!r}")
    return u0, -Lv


def di_control(state: DoubleIntegratorState, t: float, g, gamma: float,
               clock: str = CLOCK_OWN) -> np.ndarray:
    u0, u1 = di_control_coeffs(state, g, gamma, clock)
    return u0 + (t - state.t) * u1


def di_trajectory(state: DoubleIntegratorState, taus, u0, u1):
    """Positions and velocities at state.t + taus, shape (len(taus), N)."""
    tau = np.asarray(taus, dtype=float)[:, None]
    v = state.v + u0 * tau + 0.5 * u1 * tau ** 2
    r = state.r + state.v * tau + 0.5 * u0 * tau ** 2 + u1 * tau ** 3 / 6.0
    return r, v


def di_propagate(state: DoubleIntegratorState, dt: float, g, gamma: float,
                 clock: str = CLOCK_OWN) -> DoubleIntegratorState:
    """Closed-form step: u is affine in t, so v is quadratic and r cubic."""
    u0, u1 = di_control_coeffs(state, g, gamma, clock)
    r, v = di_trajectory(state, [dt], u0, u1)
    check_finite(r, v)
    return replace(state, t=state.t + dt, r=r[0], v=v[0])


# ---------------------------------------------------------------------------
# general linear agents with model-based estimates


@dataclass(frozen=True)
class LinearAgentState:
    t: float
    x: np.ndarray  # (N, n)
    x_hat: np.ndarray  # (N, n)
    u_hat: np.ndarray  # (N, m)

    @property
    def e(self) -> np.ndarray:
        return self.x_hat - self.x


def linear_control(estimates, g, c: float, F) -> np.ndarray:
    """u_i = c F zhat_i with zhat_i = sum_j w_ij (xhat_i - xhat_j); rows are agents."""
    X = np.atleast_2d(np.asarray(estimates, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != X.shape[1]:
        raise ValueError(f"F has {F.shape[1]} columns but agent state has {X.shape[1]}")
    return c * (_lap(g) @ X) @ F.T


@lru_cache(maxsize=64)
def _expm_cached(key: bytes, shape: tuple, dt: float) -> np.ndarray:
    M = np.frombuffer(key).reshape(shape)
    return sl.expm(M * dt)


@dataclass(frozen=True)
class LinearClosedLoop:
    """Augmented LTI system for y = (x, x_hat, u_hat), all agent-major.

        x'     = (I (x) A) x + c (L (x) BF) x_hat
        x_hat' = (I (x) A) x_hat + (I (x) B) u_hat
        u_hat' = 0
    """

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    c: float
    L: np.ndarray

    @property
    def N(self) -> int:
        return self.L.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def matrix(self) -> np.ndarray:
        N, n, m = self.N, self.n, self.m
        I = np.eye(N)
        IA = np.kron(I, self.A)
        top = np.hstack([IA, self.c * np.kron(self.L, self.B @ self.F), np.zeros((N * n, N * m))])
        mid = np.hstack([np.zeros((N * n, N * n)), IA, np.kron(I, self.B)])
        bot = np.zeros((N * m, 2 * N * n + N * m))
        return np.vstack([top, mid, bot])

    def pack(self, s: LinearAgentState) -> np.ndarray:
        return np.concatenate([s.x.ravel(), s.x_hat.ravel(), s.u_hat.ravel()])

    def unpack(self, y: np.ndarray, t: float) -> LinearAgentState:
        N, n, m = self.N, self.n, self.m
        k = N * n
        return LinearAgentState(t=t, x=y[:k].reshape(N, n), x_hat=y[k:2 * k].reshape(N, n),
                                u_hat=y[2 * k:].reshape(N, m))

    def transition(self, dt: float) -> np.ndarray:
        M = np.ascontiguousarray(self.matrix())
        return _expm_cached(M.tobytes(), M.shape, float(dt))

    def advance(self, y: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0:
            return y.copy()
        if self.N * self.n <= EXPM_MAX_DIM:
            return self.transition(dt) @ y
        return _rk4(self.matrix(), y, dt, RK4_STEP)


def _rk4(M: np.ndarray, y: np.ndarray, dt: float, step: float) -> np.ndarray:
    steps = max(1, int(np.ceil(dt / step)))
    h = dt / steps
    for _ in range(steps):
        k1 = M @ y
        k2 = M @ (y + 0.5 * h * k1)
        k3 = M @ (y + 0.5 * h * k2)
        k4 = M @ (y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def linear_propagate(state: LinearAgentState, dt: float,
                     system: LinearClosedLoop) -> LinearAgentState:
    y = system.advance(system.pack(state), dt)
    check_finite(y)
    return system.unpack(y, state.t + dt)
