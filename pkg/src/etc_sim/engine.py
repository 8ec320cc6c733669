"""Hybrid simulation of event-triggered coordination.

Time advances in segments bounded by the output grid, pending channel
deliveries, periodic sampling instants and the horizon. Inside a segment the
broadcast signals are fixed, so each agent's error and threshold are known
functions of the elapsed time tau:

* for the single-integrator rules whose fire condition is a quadratic in tau
  (centralized, state, zhat, phi, directed) the first crossing is the
  smallest admissible root of that quadratic;
* for the reset-to-one dynamic rule the internal variable has a closed form
  on each branch of its min, so its zero crossing is found by root finding;
* every other rule is checked on a grid of spacing ``detection_step`` and the
  first crossing is refined by bisection to 1e-9 (fire side).

At an event instant every agent whose rule holds fires in ascending id, the
broadcast values are updated, and the instant is re-checked until no new
agent fires (each agent fires at most once per instant).
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sl
from scipy.optimize import brentq

from . import triggers as trg
from .channel import apply_channel, quantize
from .dynamics import (DivergenceError, DoubleIntegratorState, LinearClosedLoop,
                       di_control_coeffs, di_trajectory)
from .graph import Graph, laplacian
from .scenario import DOUBLE, LINEAR, SINGLE, Prepared, Scenario, ScenarioError, prepare
from .zeno import ZenoFlag, ZenoMonitor

EVENT_TOL = 1e-9
DIVERGENCE_BOUND = 1e9
_TINY = 1e-12
# crossings closer than this (relative to t) are roundoff of the current instant
_SNAP_REL = 1e-13
_CHUNK = 4096


@dataclass(frozen=True)
class Event:
    agent: int  # 0-based
    t: float
    kind: str
    payload: object = None


@dataclass
class Trace:
    layout: str  # single | double | linear
    n_agents: int
    dim: int
    columns: list
    times: np.ndarray
    states: np.ndarray
    V: np.ndarray
    disagreement: np.ndarray
    events: list
    status: str = "ok"  # ok | zeno
    zeno: Optional[ZenoFlag] = None
    tolerance: float = 1e-3
    info: dict = field(default_factory=dict)

    @property
    def zeno_flag(self) -> bool:
        return self.zeno is not None

    def event_times(self, agent: int) -> np.ndarray:
        return np.array([ev.t for ev in self.events if ev.agent == agent])

    def agent_states(self) -> np.ndarray:
        """State samples reshaped to (rows, N, d)."""
        rows = self.states.shape[0]
        if self.layout == DOUBLE:
            N = self.n_agents
            return np.stack([self.states[:, :N], self.states[:, N:]], axis=2)
        return self.states.reshape(rows, self.n_agents, self.dim)


def fires_array(g, h) -> np.ndarray:
    return (g >= h) & ((g > 0) | (h > 0))


def first_upcrossing(a, b, c) -> np.ndarray:
    """Smallest tau >= 0 at which a tau^2 + b tau + c >= 0 starts to hold.

    ``c`` is f(0). Where c > 0 the answer is 0; where c == 0 (both sides of
    the trigger zero) a strictly growing f gives a tiny positive tau, so the
    Zeno monitor sees the resulting burst instead of the loop spinning.
    """
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c)))
    tau = np.full(a.shape, np.inf)
    tau[c > 0] = 0.0
    grows = (c == 0) & ((b > 0) | ((b == 0) & (a > 0)))
    tau[grows] = _TINY
    neg = c < 0
    if np.any(neg):
        an, bn, cn = a[neg], b[neg], c[neg]
        disc = bn * bn - 4.0 * an * cn
        sq = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (bn + np.where(bn >= 0, sq, -sq))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(an != 0, q / an, np.inf)
            r2 = np.where(q != 0, cn / q, np.inf)
            lin = np.where(bn > 0, -cn / bn, np.inf)
        roots = np.stack([r1, r2])
        roots = np.where((roots > 0) & np.isfinite(roots), roots, np.inf)
        best = roots.min(axis=0)
        best = np.where(disc < 0, np.inf, best)
        best = np.where(an == 0, lin, best)
        tau[neg] = best
    return tau


# ---------------------------------------------------------------------------
# simulators


class _Sim:
    """Shared machinery; subclasses own the state and the trigger algebra."""

    layout = SINGLE

    def __init__(self, prep: Prepared, rng: np.random.Generator):
        s = prep.scenario
        self.prep = prep
        self.rt = prep.trigger
        self.kind = self.rt.kind
        self.L = prep.L
        self.W = prep.W
        self.nn = prep.n_nbrs.astype(float)
        self.n = s.n
        self.t = 0.0
        self.delta = s.detection_step
        self.rng = rng
        self.version = 0  # bumped on every state change

    # hooks ---------------------------------------------------------------
    def advance(self, tau: float) -> None:
        raise NotImplementedError

    def gh(self, taus: np.ndarray, grid: bool) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def next_crossing(self, tau_max: float):
        return self.grid_search(tau_max)

    def fire_mask(self) -> np.ndarray:
        g, h = self.gh(np.zeros(1), grid=False)
        return fires_array(g[0], h[0])

    def fire(self, i: int):
        raise NotImplementedError

    def end_instant(self, fired: list) -> None:
        pass

    def next_delivery(self) -> float:
        return math.inf

    def deliver_due(self) -> bool:
        return False

    # shared --------------------------------------------------------------
    def grid_search(self, tau_max: float):
        """First grid cell in (0, tau_max] where any agent fires, refined by bisection."""
        d = self.delta
        k_total = max(1, int(math.ceil(tau_max / d - 1e-9)))
        start = 0
        chunk = 64
        while start < k_total:
            stop = min(k_total, start + chunk)
            taus = np.minimum(np.arange(start + 1, stop + 1) * d, tau_max)
            g, h = self.gh(taus, grid=True)
            hit = fires_array(g, h).any(axis=1)
            if hit.any():
                j = int(np.argmax(hit))
                lo = taus[j - 1] if j > 0 else start * d
                hi = float(taus[j])
                while hi - lo > EVENT_TOL:
                    mid = 0.5 * (lo + hi)
                    g, h = self.gh(np.array([mid]), grid=False)
                    if fires_array(g, h).any():
                        hi = mid
                    else:
                        lo = mid
                g, h = self.gh(np.array([hi]), grid=False)
                return hi, np.flatnonzero(fires_array(g[0], h[0]))
            start = stop
            chunk = min(2 * chunk, _CHUNK)
        return None

    def check_bounds(self, *arrays) -> None:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise DivergenceError(f"nonfinite state at t = {self.t:.9g}")
            if np.max(np.abs(a)) > DIVERGENCE_BOUND:
                raise DivergenceError(f"state norm exceeded {DIVERGENCE_BOUND:g} "
                                      f"at t = {self.t:.9g}")


class _SingleSim(_Sim):
    """Single integrators with ZOH broadcasts and per-agent views of neighbors.

    ``views[i, j]`` is agent i's copy of j's last received broadcast and
    ``views[i, i]`` its own broadcast value. ``sample[i]`` is the unquantized
    state agent i sampled at its last event; the error is ``sample - x``.
    """

    def __init__(self, prep, rng):
        super().__init__(prep, rng)
        s = prep.scenario
        self.channel = s.channel
        self.step = s.channel.quantizer_step
        x0 = np.array(s.initial_state["x"], dtype=float)
        # Work relative to the initial average so that differences keep full
        # relative precision as the states approach consensus. The quantizer
        # acts on absolute values, so quantized runs are not shifted.
        self.offset = float(x0.mean()) if self.step is None else 0.0
        self.x = x0 - self.offset
        self.sample = self.x.copy()
        b = quantize(self.x, self.step)
        self.views = np.tile(np.asarray(b, dtype=float), (self.n, 1))
        self.listeners = [np.flatnonzero(self.W[:, i] > 0) for i in range(self.n)]
        self.chi = np.full(self.n, self.rt.chi0)
        self.pending: list = []
        self._seq = 0
        self._cache_version = -1
        self._miet = None
        self._fired_now: set = set()
        self.sigma = self.rt.sigma
        self.young = trg.young_factor(self.nn, self.rt.a)
        self.norm_L = prep.spectral.laplacian_norm
        self._refresh()

    # derived broadcast quantities, constant between events and deliveries
    def _refresh(self):
        own = np.diag(self.views)
        D = own[:, None] - self.views
        WD = self.W * D
        self.zhat = WD.sum(axis=1)
        self.phi = (WD * D).sum(axis=1)
        self.u = -self.zhat
        self.version += 1
        if self.kind == trg.DYNAMIC_MIET:
            self._miet_update(self._fired_now)
            self._fired_now = set()

    @property
    def e(self) -> np.ndarray:
        return self.sample - self.x

    # -- trigger algebra ---------------------------------------------------
    def _quad(self):
        """Per-agent (or global) coefficients of f(tau) = g - h."""
        e0, u = self.e, self.u
        k = self.kind
        if k in (trg.BROADCAST_PHI, trg.DIRECTED):
            h = trg.phi_threshold(self.phi, self.nn, self.sigma)
            return u * u, -2 * e0 * u, e0 * e0 - h
        if k == trg.BROADCAST_ZHAT:
            h = self.sigma * self.young * self.zhat ** 2
            return u * u, -2 * e0 * u, e0 * e0 - h
        if k == trg.DECENTRALIZED_STATE:
            z0, dz = self.L @ self.x, self.L @ u
            kz = self.sigma * self.young
            return (u * u - kz * dz * dz, -2 * e0 * u - 2 * kz * z0 * dz,
                    e0 * e0 - kz * z0 * z0)
        # centralized, one global quadratic
        kk = (float(self.sigma.min()) / self.norm_L) ** 2
        z0, dz = self.L @ self.x, self.L @ u
        return (u @ u - kk * (dz @ dz), -2 * (e0 @ u) - 2 * kk * (z0 @ dz),
                e0 @ e0 - kk * (z0 @ z0))

    QUADRATIC = (trg.CENTRALIZED, trg.DECENTRALIZED_STATE, trg.BROADCAST_ZHAT,
                 trg.BROADCAST_PHI, trg.DIRECTED)

    def next_crossing(self, tau_max):
        if self.kind in self.QUADRATIC:
            tau = first_upcrossing(*self._quad())
            best = float(tau.min())
            if not best <= tau_max:
                return None
            if self.kind == trg.CENTRALIZED:
                return best, np.arange(self.n)
            return best, np.flatnonzero(tau <= best * (1 + 1e-12) + 1e-15)
        if self.kind == trg.DYNAMIC_MIET:
            fire = np.array([seg.t_fire for seg in self._miet]) - self.t
            best = max(float(fire.min()), 0.0)
            if not best <= tau_max:
                return None
            return best, np.flatnonzero(fire <= best * (1 + 1e-12) + 1e-15)
        return self.grid_search(tau_max)

    def gh(self, taus, grid):
        tau = np.asarray(taus, dtype=float)[:, None]
        e = self.e + tau * self.zhat
        k = self.kind
        rt = self.rt
        if k == trg.TIME_DEPENDENT:
            h = trg.time_threshold(self.t + tau, rt.c0, rt.c1, rt.alpha)
            return np.abs(e), np.broadcast_to(h, e.shape)
        if k == trg.DYNAMIC:
            return self.nn * e * e, self.sigma / 4 * self.phi + self._dynamic_chi(tau)
        if k == trg.DYNAMIC_MIET:
            chi = self._miet_chi_at(self.t + tau[:, 0])
            return -chi, np.zeros_like(chi)
        if k == trg.CENTRALIZED:
            x = self.x + tau * self.u
            g = np.linalg.norm(e, axis=1)
            h = float(self.sigma.min()) * np.linalg.norm(x @ self.L.T, axis=1) / self.norm_L
            return np.repeat(g[:, None], self.n, 1), np.repeat(h[:, None], self.n, 1)
        if k == trg.DECENTRALIZED_STATE:
            z = (self.x + tau * self.u) @ self.L.T
            return e * e, self.sigma * self.young * z * z
        if k in (trg.BROADCAST_ZHAT, trg.PERIODIC_ZHAT):
            coef = self.sigma * (self.young if k == trg.BROADCAST_ZHAT else 1.0)
            return e * e, np.broadcast_to(coef * self.zhat ** 2, e.shape)
        # phi-type: BroadcastPhi, Directed, PeriodicPhi
        return e * e, np.broadcast_to(trg.phi_threshold(self.phi, self.nn, self.sigma), e.shape)

    def fire_mask(self):
        if self.kind == trg.DYNAMIC_MIET:
            return self.chi <= 0
        return super().fire_mask()

    # -- Dynamic (chi not reset): closed form for a quadratic forcing -------
    def _dynamic_chi(self, tau):
        e0, zh = self.e, self.zhat
        a = self.sigma / 4 * self.phi - e0 * e0
        b = -2 * e0 * zh
        c = -zh * zh
        A, B = a - b + 2 * c, b - 2 * c
        return A + B * tau + c * tau * tau + (self.chi - A) * np.exp(-tau)

    # -- DynamicMIET: per-agent piecewise closed form -----------------------
    def _miet_update(self, force=()):
        """Recompute the chi trajectory of agents whose inputs changed."""
        if self._miet is None:
            self._miet = [None] * self.n
        e = self.e
        for i in range(self.n):
            seg = self._miet[i]
            if (seg is not None and i not in force and seg.zhat == self.zhat[i]
                    and seg.phi == self.phi[i]):
                continue
            self._miet[i] = MietTrajectory.build(self.t, e[i], self.zhat[i], self.phi[i],
                                                 self.chi[i] + 1.0)

    def _miet_chi_at(self, t_abs):
        t_abs = np.atleast_1d(np.asarray(t_abs, dtype=float))
        return np.stack([seg.chi(t_abs) for seg in self._miet], axis=1)

    # -- state changes ------------------------------------------------------
    def advance(self, tau):
        if tau <= 0:
            return
        if self.kind == trg.DYNAMIC:
            self.chi = self._dynamic_chi(np.array([[tau]]))[0]
        elif self.kind == trg.DYNAMIC_MIET:
            self.chi = np.array([seg.chi_scalar(self.t + tau) for seg in self._miet])
        self.x = self.x + tau * self.u
        self.t += tau
        self.version += 1
        self.check_bounds(self.x)

    def fire(self, i):
        self.sample[i] = self.x[i]
        b = float(quantize(self.x[i], self.step))
        self.views[i, i] = b
        if self.kind == trg.DYNAMIC_MIET:
            self.chi[i] = trg.DYNAMIC_MIET_RESET
            self._fired_now.add(i)
        ideal = self.channel.ideal
        for j in self.listeners[i]:
            if ideal:
                self.views[j, i] = b
                continue
            d = apply_channel((self.t, self.x[i]), (i, int(j)), self.channel, self.rng)
            if d is None:
                continue
            if d.time <= self.t:
                self.views[j, i] = d.value
            else:
                heapq.heappush(self.pending, (d.time, self._seq, d))
                self._seq += 1
        self._refresh()
        return b + self.offset

    def next_delivery(self):
        return self.pending[0][0] if self.pending else math.inf

    def deliver_due(self):
        hit = False
        while self.pending and self.pending[0][0] <= self.t:
            _, _, d = heapq.heappop(self.pending)
            self.views[d.recipient, d.sender] = d.value
            hit = True
        if hit:
            self._refresh()
        return hit

    # -- recording ------------------------------------------------------------
    def row(self):
        return self.x + self.offset

    def lyapunov(self):
        return 0.5 * float(self.x @ self.L @ self.x)

    def disagreement(self):
        return float(np.linalg.norm(self.x - self.x.mean()))


@dataclass(frozen=True)
class _Piece:
    start: float  # offset from the trajectory's reference time
    nonlinear: bool
    y_start: float


@dataclass(frozen=True)
class MietTrajectory:
    """chi(t) for the reset-to-one dynamic rule while the agent's broadcast
    inputs (zhat, phi) stay fixed, with y = chi + 1 and e(tau) = e0 + zhat tau.

    On the constant branch y decreases at unit rate. On the other branch
    d(y e^2)/dtau = phi - e^2, so y e^2 is a cubic in tau. The nonlinear branch
    is active while C = 2 y zhat e - phi > 0. Where C = 0 its derivative has
    the sign of phi - 2 e^2 on either branch, so between consecutive roots of
    e^2 = phi/2 and e = 0 at most one switch can happen.
    """

    t_ref: float
    e0: float
    zhat: float
    phi: float
    pieces: tuple
    t_fire: float

    def _y(self, piece: _Piece, tau):
        if not piece.nonlinear:
            return piece.y_start - (tau - piece.start)
        e0, zh = self.e0, self.zhat
        ea = e0 + zh * piece.start
        e = e0 + zh * tau
        integral = (e ** 3 - ea ** 3) / (3.0 * zh)  # nonlinear implies zhat != 0
        return (piece.y_start * ea * ea + self.phi * (tau - piece.start) - integral) / (e * e)

    def _C(self, piece, tau):
        return 2.0 * self._y(piece, tau) * self.zhat * (self.e0 + self.zhat * tau) - self.phi

    @classmethod
    def build(cls, t_ref, e0, zhat, phi, y0):
        e0, zhat, phi, y0 = float(e0), float(zhat), float(phi), float(y0)
        traj = cls(t_ref, e0, zhat, phi, (), math.inf)
        if y0 <= 1.0:
            return cls(t_ref, e0, zhat, phi, (_Piece(0.0, False, y0),), t_ref)
        horizon = y0 - 1.0  # the constant branch alone reaches chi = 0 by then
        cuts = []
        if zhat != 0:
            cands = [-e0 / zhat]
            if phi > 0:
                r = math.sqrt(phi / 2.0)
                cands += [(r - e0) / zhat, (-r - e0) / zhat]
            cuts = sorted(c for c in cands if 0 < c < horizon)
        bounds = [0.0] + cuts + [horizon]
        piece = _Piece(0.0, 2.0 * y0 * zhat * e0 - phi > 0, y0)
        pieces = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            end = b
            switch = None
            if (traj._C(piece, b) > 0) != piece.nonlinear:
                fa = traj._C(piece, a)
                if (fa > 0) != piece.nonlinear:
                    switch = a
                else:
                    switch = brentq(lambda s: traj._C(piece, s), a, b, xtol=1e-14)
                end = switch
            t_fire = traj._fire_in(piece, a, end)
            if t_fire is not None:
                pieces.append(piece)
                return cls(t_ref, e0, zhat, phi, tuple(pieces), t_ref + t_fire)
            if switch is not None:
                pieces.append(piece)
                piece = _Piece(switch, not piece.nonlinear, float(traj._y(piece, switch)))
                t_fire = traj._fire_in(piece, switch, b)
                if t_fire is not None:
                    pieces.append(piece)
                    return cls(t_ref, e0, zhat, phi, tuple(pieces), t_ref + t_fire)
        pieces.append(piece)
        # numerical safety: the constant-rate bound guarantees a fire by horizon
        return cls(t_ref, e0, zhat, phi, tuple(pieces), t_ref + horizon)

    def _fire_in(self, piece, a, b):
        """First tau in [a, b] with y <= 1 on ``piece``, or None."""
        if self._y(piece, b) > 1.0:
            return None
        if not piece.nonlinear:
            return piece.start + piece.y_start - 1.0
        if self._y(piece, a) <= 1.0:
            return a
        return brentq(lambda s: self._y(piece, s) - 1.0, a, b, xtol=1e-15)

    def chi_scalar(self, t_abs: float) -> float:
        tau = t_abs - self.t_ref
        k = max(bisect.bisect_right([p.start for p in self.pieces], tau) - 1, 0)
        return float(self._y(self.pieces[k], tau)) - 1.0

    def chi(self, t_abs):
        tau = np.asarray(t_abs, dtype=float) - self.t_ref
        out = np.empty(tau.shape)
        starts = np.array([p.start for p in self.pieces])
        idx = np.clip(np.searchsorted(starts, tau, side="right") - 1, 0, len(self.pieces) - 1)
        for k, piece in enumerate(self.pieces):
            sel = idx == k
            if np.any(sel):
                out[sel] = self._y(piece, tau[sel]) - 1.0
        return out


class _DoubleSim(_Sim):
    layout = DOUBLE

    def __init__(self, prep, rng):
        super().__init__(prep, rng)
        s = prep.scenario
        self.r = np.array(s.initial_state["r"], dtype=float)
        self.v = np.array(s.initial_state["v"], dtype=float)
        self.r_hat, self.v_hat = self.r.copy(), self.v.copy()
        self.t_last = np.zeros(self.n)
        self.gamma = self.rt.gamma
        self.clock = s.di_clock
        self._coeff_version = -1

    def _state(self):
        return DoubleIntegratorState(self.t, self.r, self.v, self.r_hat, self.v_hat, self.t_last)

    def _coeffs(self):
        if self._coeff_version != self.version:
            self._u = di_control_coeffs(self._state(), self.L, self.gamma, self.clock)
            self._coeff_version = self.version
        return self._u

    def gh(self, taus, grid):
        u0, u1 = self._coeffs()
        r, v = di_trajectory(self._state(), taus, u0, u1)
        tau = np.asarray(taus, dtype=float)[:, None]
        e_r = self.r_hat + (self.t + tau - self.t_last) * self.v_hat - r
        e_v = self.v_hat - v
        rt = self.rt
        h = trg.time_threshold(self.t + tau, rt.c0, rt.c1, rt.alpha)
        return np.hypot(e_r, self.gamma * e_v), np.broadcast_to(h, e_r.shape)

    def advance(self, tau):
        if tau <= 0:
            return
        u0, u1 = self._coeffs()
        r, v = di_trajectory(self._state(), [tau], u0, u1)
        self.r, self.v = r[0], v[0]
        self.t += tau
        self.version += 1
        self.check_bounds(self.r, self.v)

    def fire(self, i):
        self.r_hat[i], self.v_hat[i], self.t_last[i] = self.r[i], self.v[i], self.t
        self.version += 1
        return (float(self.r[i]), float(self.v[i]))

    def row(self):
        return np.concatenate([self.r, self.v])

    def lyapunov(self):
        return 0.5 * float(self.r @ self.L @ self.r + self.v @ self.L @ self.v)

    def disagreement(self):
        return float(math.hypot(np.linalg.norm(self.r - self.r.mean()),
                                np.linalg.norm(self.v - self.v.mean())))


class _LinearSim(_Sim):
    layout = LINEAR

    def __init__(self, prep, rng):
        super().__init__(prep, rng)
        s = prep.scenario
        d = prep.design
        lin = s.linear
        self.sys = LinearClosedLoop(A=lin.A, B=lin.B, F=d.F, c=d.c, L=self.L)
        self.M = self.sys.matrix()
        self.small = self.sys.N * self.sys.n <= 400
        self.E_delta = sl.expm(self.M * self.delta) if self.small else None
        self.K = d.P @ lin.B @ lin.B.T @ d.P
        x = np.array(s.initial_state["x"], dtype=float)
        self.N, self.dim = x.shape
        x_hat = x.copy()
        u_hat = d.c * (self.L @ x_hat) @ d.F.T
        self.y = np.concatenate([x.ravel(), x_hat.ravel(), u_hat.ravel()])
        rt = self.rt
        c1, c2 = rt.c1_lin, rt.c2_lin
        b = rt.b
        nn = self.nn
        self.theta_coef = 2 * c2 - b * nn * (c2 - c1)
        self.bracket = (2 * c1 * nn * (1 + b) + (c2 - c1) / b + c1 * (self.n - 1) * (b + 3 / b))
        self.cross_coef = 2 * (c2 - c1) * nn

    def _split(self, Y):
        k = self.N * self.dim
        X = Y[..., :k].reshape(Y.shape[:-1] + (self.N, self.dim))
        Xh = Y[..., k:2 * k].reshape(Y.shape[:-1] + (self.N, self.dim))
        return X, Xh

    def _propagate(self, tau):
        if self.small:
            return sl.expm(self.M * tau) @ self.y
        return self.sys.advance(self.y, tau)

    def _states_at(self, taus, grid):
        """States at segment offsets; uniform grid steps reuse expm(M delta)."""
        out = np.empty((len(taus), self.y.size))
        y = None
        for j, tau in enumerate(taus):
            step_ok = (grid and self.small and j > 0
                       and abs(tau - taus[j - 1] - self.delta) <= 1e-12 * self.delta)
            if step_ok:
                y = self.E_delta @ y
            else:
                y = self.y if tau == 0 else self._propagate(tau)
            out[j] = y
        return out

    def gh(self, taus, grid):
        Y = self._states_at(np.asarray(taus, dtype=float), grid)
        X, Xh = self._split(Y)
        E = Xh - X
        rt = self.rt
        if self.kind == trg.LINEAR_TIME:
            tau = np.asarray(taus, dtype=float)[:, None]
            h = rt.c1 * np.exp(-rt.alpha * (self.t + tau))
            g = np.linalg.norm(E, axis=2)
            return g, np.broadcast_to(h, g.shape)
        Z = np.einsum("ij,kjn->kin", self.L, Xh)
        K = self.K
        zKe = np.einsum("kin,nm,kim->ki", Z, K, E)
        eKe = np.einsum("kin,nm,kim->ki", E, K, E)
        zKz = np.einsum("kin,nm,kim->ki", Z, K, Z)
        delta = self.cross_coef * zKe + self.nn * eKe * self.bracket
        return delta, rt.sigma * self.theta_coef * zKz

    def advance(self, tau):
        if tau <= 0:
            return
        self.y = self._propagate(tau)
        self.t += tau
        self.version += 1
        self.check_bounds(self.y)

    def fire(self, i):
        k = self.N * self.dim
        sl_x = slice(i * self.dim, (i + 1) * self.dim)
        self.y[k + i * self.dim:k + (i + 1) * self.dim] = self.y[sl_x]
        self.version += 1
        return self.y[sl_x].tolist()

    def end_instant(self, fired):
        if not fired:
            return
        d = self.prep.design
        X, Xh = self._split(self.y)
        U = d.c * (self.L @ Xh) @ d.F.T
        m = U.shape[1]
        base = 2 * self.N * self.dim
        for i in fired:
            self.y[base + i * m:base + (i + 1) * m] = U[i]
        self.version += 1

    def row(self):
        return self.y[:self.N * self.dim].copy()

    def lyapunov(self):
        X, _ = self._split(self.y)
        return 0.5 * float(np.trace(X.T @ self.L @ X))

    def disagreement(self):
        X, _ = self._split(self.y)
        return float(np.linalg.norm(X - X.mean(axis=0)))


_SIMS = {SINGLE: _SingleSim, DOUBLE: _DoubleSim, LINEAR: _LinearSim}


def _columns(s: Scenario, dim: int) -> list:
    N = s.n
    if s.dynamics == SINGLE:
        names = [f"x_{i + 1}" for i in range(N)]
    elif s.dynamics == DOUBLE:
        names = [f"r_{i + 1}" for i in range(N)] + [f"v_{i + 1}" for i in range(N)]
    else:
        names = [f"x_{i + 1}_{k + 1}" for i in range(N) for k in range(dim)]
    return ["t"] + names + ["V", "disagreement"]


def _output_times(T: float, step: float) -> list:
    k = int(math.floor(T / step + 1e-9))
    times = [j * step for j in range(k + 1)]
    if T - times[-1] > 1e-12 * max(1.0, T):
        times.append(T)
    else:
        times[-1] = T
    return times


def run(scenario: Scenario, seed: Optional[int] = None) -> Trace:
    """Simulate a validated scenario.

    Raises ScenarioError when validation fails and DivergenceError when the
    state blows up. A Zeno flag ends the run early and is reported on the
    returned trace.
    """
    prep = prepare(scenario)
    if not prep.ok:
        raise ScenarioError(prep.problems)
    s = scenario
    rng = np.random.default_rng(s.seed if seed is None else seed)
    sim = _SIMS[s.dynamics](prep, rng)
    rt = prep.trigger
    monitor = ZenoMonitor(s.n, s.zeno)
    dim = 1 if s.dynamics != LINEAR else s.linear.A.shape[0]

    times, rows, Vs, dis = [], [], [], []

    def record():
        if times and times[-1] == sim.t:
            return
        times.append(sim.t)
        rows.append(sim.row())
        Vs.append(sim.lyapunov())
        dis.append(sim.disagreement())

    events: list = []

    def process_instant(forced=()):
        fired: list = []
        done = set()
        forced = set(int(i) for i in forced)
        while True:
            mask = sim.fire_mask()
            new = sorted((set(np.flatnonzero(mask)) | forced) - done)
            forced = set()
            if not new and not rt.periodic:
                # a cascade computed in floating point can put a neighbour's
                # crossing a few ulps after t; it belongs to this instant
                cross = sim.next_crossing(_SNAP_REL * max(1.0, abs(sim.t)))
                if cross is not None:
                    new = sorted(set(int(i) for i in cross[1]) - done)
            if not new:
                break
            if rt.kind == trg.CENTRALIZED:
                new = [i for i in range(s.n) if i not in done]
            for i in new:
                payload = sim.fire(i)
                events.append(Event(int(i), sim.t, rt.kind, payload))
                monitor.record(int(i), sim.t)
                done.add(i)
                fired.append(int(i))
        sim.end_instant(fired)
        return fired

    out_times = _output_times(s.horizon, s.output_step)
    k_out = 0
    periodic = rt.periodic
    h = rt.h
    k_s = 0
    T = s.horizon

    record()
    k_out = 1
    if periodic:
        process_instant()
        k_s = 1
    else:
        process_instant()

    while sim.t < T and monitor.flag is None:
        nxt = out_times[k_out] if k_out < len(out_times) else T
        nxt = min(nxt, T, sim.next_delivery())
        if periodic:
            nxt = min(nxt, k_s * h)
        tau_max = nxt - sim.t
        cross = None
        if not periodic and tau_max > 0:
            cross = sim.next_crossing(tau_max)
        if cross is not None and cross[0] < tau_max:
            tau, forced = cross
            sim.advance(tau)
        else:
            forced = cross[1] if cross is not None else ()
            sim.advance(tau_max)
            sim.t = nxt  # land exactly on the boundary
        delivered = sim.deliver_due()
        fired: list = []
        if periodic:
            if sim.t == k_s * h:
                fired = process_instant()
                k_s += 1
        elif len(forced) or delivered:
            fired = process_instant(forced)
        on_grid = k_out < len(out_times) and sim.t == out_times[k_out]
        if on_grid:
            k_out += 1
        if on_grid or fired or monitor.flag is not None:
            record()

    trace = Trace(
        layout=s.dynamics, n_agents=s.n, dim=dim, columns=_columns(s, dim),
        times=np.array(times), states=np.array(rows), V=np.array(Vs),
        disagreement=np.array(dis), events=events,
        status="zeno" if monitor.flag is not None else "ok", zeno=monitor.flag,
        tolerance=s.tolerance,
        info={"lambda2": prep.spectral.lambda2, "lambdaN": prep.spectral.lambdaN,
              "laplacian_norm": prep.spectral.laplacian_norm},
    )
    if rt.kind == trg.TIME_DEPENDENT:
        trace.info["radius"] = trg.time_radius(prep.spectral.laplacian_norm, s.n, rt.c0,
                                               prep.spectral.lambda2)
    if prep.decay_rate is not None:
        trace.info["decay_rate"] = prep.decay_rate
    if prep.design is not None:
        trace.info["design"] = prep.design.report()
    return trace


def reference_trajectory(graph, x0, t_grid) -> np.ndarray:
    """exp(-L t) x0 on ``t_grid`` via the eigendecomposition of L; shape (len, N)."""
    L = laplacian(graph) if isinstance(graph, Graph) else np.asarray(graph, dtype=float)
    lam, Q = np.linalg.eigh(0.5 * (L + L.T))
    coeff = Q.T @ np.asarray(x0, dtype=float)
    t = np.asarray(t_grid, dtype=float)[:, None]
    return (np.exp(-t * lam) * coeff) @ Q.T


# ---------------------------------------------------------------------------
# metrics


def inter_event_gaps(trace: Trace, agent: int) -> np.ndarray:
    """Gaps between an agent's consecutive events, counting the implicit
    broadcast at t = 0 as the first event."""
    t = trace.event_times(agent)
    return np.diff(np.concatenate([[0.0], t])) if t.size else np.array([])


def time_to_tolerance(times, disagreement, tol) -> Optional[float]:
    d = np.asarray(disagreement)
    above = np.flatnonzero(d >= tol)
    if above.size == 0:
        return float(times[0])
    if above[-1] == d.size - 1:
        return None
    return float(times[above[-1] + 1])


def metrics(trace: Trace) -> dict:
    per_agent = []
    all_gaps = []
    for i in range(trace.n_agents):
        g = inter_event_gaps(trace, i)
        all_gaps.append(g)
        per_agent.append({
            "agent": i + 1, "count": int(g.size),
            "min_inter_event": float(g.min()) if g.size else None,
            "mean_inter_event": float(g.mean()) if g.size else None,
        })
    gaps = np.concatenate(all_gaps) if all_gaps else np.array([])
    out = {
        "total_events": len(trace.events),
        "min_inter_event": float(gaps.min()) if gaps.size else None,
        "mean_inter_event": float(gaps.mean()) if gaps.size else None,
        "final_disagreement": float(trace.disagreement[-1]),
        "final_V": float(trace.V[-1]),
        "time_to_tolerance": time_to_tolerance(trace.times, trace.disagreement, trace.tolerance),
        "zeno_flag": trace.zeno_flag,
        "zeno_diagnostic": trace.zeno.describe() if trace.zeno else None,
        "final_time": float(trace.times[-1]),
        "per_agent": per_agent,
    }
    S = trace.agent_states()[-1]
    if trace.layout == DOUBLE:
        out["final_position_disagreement"] = float(np.linalg.norm(S[:, 0] - S[:, 0].mean()))
        out["final_velocity_disagreement"] = float(np.linalg.norm(S[:, 1] - S[:, 1].mean()))
    if trace.layout == LINEAR:
        diff = S[:, None, :] - S[None, :, :]
        out["final_max_pairwise_gap"] = float(np.linalg.norm(diff, axis=2).max())
    return out
