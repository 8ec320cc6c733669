"""Triggering functions for event-triggered consensus.

Every trigger is written as a pair ``g(e)`` (error measure) and ``h(w)``
(threshold); an agent fires when ``g >= h``. The helpers here work on
scalars and numpy arrays alike so the simulator and the per-agent
``eval_*`` functions share one implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence, Union

import numpy as np

# trigger kinds
CENTRALIZED = "Centralized"
DECENTRALIZED_STATE = "DecentralizedState"
BROADCAST_ZHAT = "BroadcastZhat"
BROADCAST_PHI = "BroadcastPhi"
PERIODIC_ZHAT = "PeriodicZhat"
PERIODIC_PHI = "PeriodicPhi"
TIME_DEPENDENT = "TimeDependent"
DYNAMIC = "Dynamic"
DYNAMIC_MIET = "DynamicMIET"
DIRECTED = "Directed"
DI_TIME = "DITime"
LINEAR_STATE = "LinearState"
LINEAR_TIME = "LinearTime"

SINGLE_KINDS = (
    CENTRALIZED, DECENTRALIZED_STATE, BROADCAST_ZHAT, BROADCAST_PHI,
    PERIODIC_ZHAT, PERIODIC_PHI, TIME_DEPENDENT, DYNAMIC, DYNAMIC_MIET, DIRECTED,
)
DOUBLE_KINDS = (DI_TIME,)
LINEAR_KINDS = (LINEAR_STATE, LINEAR_TIME)
ALL_KINDS = SINGLE_KINDS + DOUBLE_KINDS + LINEAR_KINDS
PERIODIC_KINDS = (PERIODIC_ZHAT, PERIODIC_PHI)

DEFAULT_SIGMA = 0.5
DYNAMIC_MIET_RESET = 1.0

Number = Union[float, np.ndarray]


class TriggerConfigError(ValueError):
    """Trigger parameters violate the conditions of the underlying result."""


def fires(g: Number, h: Number):
    """Fire rule ``g >= h``, except that ``g == h == 0`` never fires."""
    g = np.asarray(g)
    h = np.asarray(h)
    out = (g >= h) & ((g > 0) | (h > 0))
    return bool(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# thresholds


def young_factor(n_nbrs: Number, a: float) -> Number:
    """a (1 - a |N_i|) / |N_i|."""
    return a * (1.0 - a * np.asarray(n_nbrs, dtype=float)) / np.asarray(n_nbrs, dtype=float)


def centralized_threshold(Lx: np.ndarray, sigma: float, norm_L: float) -> float:
    return sigma * float(np.linalg.norm(Lx)) / norm_L


def zsq_threshold(z: Number, n_nbrs: Number, sigma: Number, a: float) -> Number:
    """sigma a (1 - a|N_i|)/|N_i| z^2, shared by the state and broadcast-zhat rules."""
    return sigma * young_factor(n_nbrs, a) * np.square(z)


def phi_threshold(phi: Number, n_nbrs: Number, sigma: Number) -> Number:
    return sigma * np.asarray(phi, dtype=float) / (4.0 * np.asarray(n_nbrs, dtype=float))


def time_threshold(t: Number, c0: float, c1: float, alpha: float) -> Number:
    return c0 + c1 * np.exp(-alpha * np.asarray(t, dtype=float))


def time_radius(norm_L: float, n: int, c0: float, lambda2: float) -> float:
    """Ultimate disagreement radius ||L|| sqrt(N) c0 / lambda2 of the time-dependent rule."""
    return norm_L * math.sqrt(n) * c0 / lambda2


def centralized_miet(sigma: float, norm_L: float) -> float:
    return sigma / (norm_L * (1.0 + sigma))


def dynamic_miet(n_nbrs: Number) -> Number:
    """Per-agent minimum inter-event time of the reset-to-one dynamic rule."""
    s = np.sqrt(np.asarray(n_nbrs, dtype=float))
    return (np.arctan(2.0 * s) - np.arctan(s)) / s


def dynamic_chi_rate(e: Number, phi: Number, sigma: Number, chi: Number) -> Number:
    """d/dt chi = -chi + sigma/4 phi - e^2."""
    return -np.asarray(chi) + np.asarray(sigma) / 4.0 * np.asarray(phi) - np.square(e)


def miet_chi_rate(e: Number, phi: Number, zhat: Number, chi: Number) -> Number:
    """d/dt chi = min{-1, phi/e^2 - 2 (chi + 1) zhat / e - 1}; -1 where e == 0.

    The cross term is written for the error x - xhat, so with the
    e = xhat - x used throughout this package it enters with a minus sign.
    Evaluated as (phi - 2(chi+1) zhat e - e^2) / e^2 so a vanishing error
    never produces inf - inf.
    """
    e = np.asarray(e, dtype=float)
    phi = np.asarray(phi, dtype=float)
    zhat = np.asarray(zhat, dtype=float)
    chi = np.asarray(chi, dtype=float)
    e2 = e * e
    num = phi - 2.0 * (chi + 1.0) * zhat * e - e2
    with np.errstate(divide="ignore", invalid="ignore"):
        branch = np.where(e2 > 0, num / np.where(e2 > 0, e2, 1.0), np.inf)
    out = np.minimum(-1.0, branch)
    return float(out) if out.ndim == 0 else out


def linear_theta(P: np.ndarray, B: np.ndarray, n_nbrs: int, c1: float, c2: float,
                 b: float) -> np.ndarray:
    PB = P @ B
    return (2.0 * c2 - b * n_nbrs * (c2 - c1)) * (PB @ PB.T)


def linear_delta(e: np.ndarray, zhat: np.ndarray, P: np.ndarray, B: np.ndarray,
                 n_nbrs: int, n_agents: int, c1: float, c2: float, b: float) -> float:
    PB = P @ B
    K = PB @ PB.T
    bracket = (2.0 * c1 * n_nbrs * (1.0 + b) + (c2 - c1) / b
               + c1 * (n_agents - 1) * (b + 3.0 / b))
    return float(2.0 * (c2 - c1) * n_nbrs * zhat @ K @ e + n_nbrs * (e @ K @ e) * bracket)


# ---------------------------------------------------------------------------
# per-agent evaluation


def _check_young(a: float, n_nbrs: int) -> None:
    if not (0.0 < a < 1.0 / n_nbrs):
        raise TriggerConfigError(f"a={a} outside (0, 1/|N_i|) = (0, {1.0 / n_nbrs})")


def eval_centralized(e, x, L, sigma: float) -> bool:
    L = np.asarray(L, dtype=float)
    x = np.asarray(x, dtype=float)
    g = float(np.linalg.norm(e))
    h = centralized_threshold(L @ x, sigma, float(np.linalg.norm(L, 2)))
    return fires(g, h)


def eval_decentralized_state(e_i: float, z_i: float, n_nbrs: int, sigma_i: float,
                             a: float) -> bool:
    _check_young(a, n_nbrs)
    return fires(e_i * e_i, zsq_threshold(z_i, n_nbrs, sigma_i, a))


def eval_broadcast_zhat(e_i: float, zhat_i: float, n_nbrs: int, sigma_i: float,
                        a: float) -> bool:
    _check_young(a, n_nbrs)
    return fires(e_i * e_i, zsq_threshold(zhat_i, n_nbrs, sigma_i, a))


def eval_broadcast_phi(e_i: float, phihat_i: float, n_nbrs: int, sigma_i: float) -> bool:
    return fires(e_i * e_i, phi_threshold(phihat_i, n_nbrs, sigma_i))


def is_sample_time(t: float, h: float, tol: float = 1e-12) -> bool:
    k = round(t / h)
    return abs(t - k * h) <= tol * max(1.0, abs(t))


def eval_periodic(kind: str, e_i: float, w_i: float, n_nbrs: int, sigma_i: float,
                  t: float, h: float) -> bool:
    """Sampled rule; ``w_i`` is zhat_i for ``"zhat"`` and phihat_i for ``"phi"``.

    Off the sampling lattice {0, h, 2h, ...} nothing fires.
    """
    if not is_sample_time(t, h):
        return False
    if kind == "zhat":
        return fires(e_i * e_i, sigma_i * w_i * w_i)
    if kind == "phi":
        return fires(e_i * e_i, phi_threshold(w_i, n_nbrs, sigma_i))
    raise ValueError(f"unknown periodic rule {kind!r}")


def eval_time_dependent(e_i, t: float, c0: float, c1: float, alpha: float) -> bool:
    if c0 < 0 or c1 < 0 or c0 + c1 <= 0:
        raise TriggerConfigError("need c0, c1 >= 0 and c0 + c1 > 0")
    return fires(float(np.linalg.norm(np.atleast_1d(e_i))), time_threshold(t, c0, c1, alpha))


def eval_dynamic(e_i: float, phihat_i: float, chi_i: float, n_nbrs: int,
                 sigma_i: float) -> tuple[bool, float]:
    g = n_nbrs * e_i * e_i
    h = sigma_i / 4.0 * phihat_i + chi_i
    return fires(g, h), float(dynamic_chi_rate(e_i, phihat_i, sigma_i, chi_i))


def eval_dynamic_miet(e_i: float, phihat_i: float, zhat_i: float,
                      chi_i: float) -> tuple[bool, float]:
    """Fire when chi_i <= 0; chi_i is reset to 1 at the agent's own events."""
    return bool(chi_i <= 0.0), miet_chi_rate(e_i, phihat_i, zhat_i, chi_i)


def eval_directed(e_i: float, xhat_i: float, out_broadcasts: Sequence[float],
                  weights: Sequence[float], sigma_i: float) -> bool:
    xj = np.asarray(out_broadcasts, dtype=float)
    w = np.asarray(weights, dtype=float)
    phi = float(np.sum(w * (xhat_i - xj) ** 2))
    return fires(e_i * e_i, phi_threshold(phi, len(xj), sigma_i))


def eval_di_time(e_r_i: float, e_v_i: float, gamma: float, t: float, c0: float,
                 c1: float, alpha: float) -> bool:
    g = math.hypot(e_r_i, gamma * e_v_i)
    return fires(g, time_threshold(t, c0, c1, alpha))


def eval_linear_state(e_i, zhat_i, P, B, n_nbrs: int, n_agents: int, sigma_i: float,
                      c1: float, c2: float, b: float) -> bool:
    e_i = np.atleast_1d(np.asarray(e_i, dtype=float))
    zhat_i = np.atleast_1d(np.asarray(zhat_i, dtype=float))
    P = np.atleast_2d(P)
    B = np.atleast_2d(B)
    if B.shape[0] != P.shape[0]:
        B = B.T
    delta = linear_delta(e_i, zhat_i, P, B, n_nbrs, n_agents, c1, c2, b)
    theta = linear_theta(P, B, n_nbrs, c1, c2, b)
    return fires(delta, sigma_i * float(zhat_i @ theta @ zhat_i))


def eval_linear_time(e_i, t: float, c1: float, alpha: float) -> bool:
    return fires(float(np.linalg.norm(np.atleast_1d(e_i))), c1 * math.exp(-alpha * t))


# ---------------------------------------------------------------------------
# specification and validity


@dataclass
class TriggerSpec:
    kind: str
    sigma: Union[float, list, None] = None
    a: Optional[float] = None
    c0: Optional[float] = None
    c1: Optional[float] = None
    alpha: Optional[float] = None
    h: Optional[float] = None
    gamma: Optional[float] = None
    c1_lin: Optional[float] = None
    c2_lin: Optional[float] = None
    b: Union[float, list, None] = None
    chi0: Optional[float] = None
    detection: str = "dense"

    @classmethod
    def from_dict(cls, payload: dict) -> "TriggerSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise TriggerConfigError(f"unknown trigger parameters: {sorted(unknown)}")
        if "kind" not in payload:
            raise TriggerConfigError("trigger block needs a 'kind'")
        spec = cls(**payload)
        if spec.kind not in ALL_KINDS:
            raise TriggerConfigError(f"unknown trigger kind {spec.kind!r}")
        if spec.kind in PERIODIC_KINDS:
            spec.detection = "periodic"
        if spec.detection not in ("dense", "periodic"):
            raise TriggerConfigError(f"unknown detection mode {spec.detection!r}")
        return spec

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            if v is not None:
                out[f.name] = v
        return out

    @property
    def periodic(self) -> bool:
        return self.detection == "periodic"


@dataclass
class ResolvedTrigger:
    """TriggerSpec with defaults filled in against a concrete graph."""

    kind: str
    sigma: np.ndarray
    a: float
    c0: float
    c1: float
    alpha: float
    h: Optional[float]
    gamma: float
    c1_lin: float
    c2_lin: float
    b: np.ndarray
    chi0: float
    detection: str

    @property
    def periodic(self) -> bool:
        return self.detection == "periodic"


@dataclass
class TriggerState:
    chi: np.ndarray
    t_last: np.ndarray
    fire_count: np.ndarray = field(default=None)

    @classmethod
    def initial(cls, n: int, chi0: float) -> "TriggerState":
        return cls(chi=np.full(n, float(chi0)), t_last=np.zeros(n),
                   fire_count=np.zeros(n, dtype=int))


def _per_agent(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise TriggerConfigError(f"{name} must be a scalar or a length-{n} list")
    return arr.copy()


def resolve(spec: TriggerSpec, n: int, max_nbrs: int, lambda2: float,
            decay_rate: Optional[float] = None) -> ResolvedTrigger:
    """Fill defaults. ``decay_rate`` replaces lambda2 in the default alpha
    (the double-integrator rule uses the third eigenvalue of its closed loop).
    """
    sigma = _per_agent(DEFAULT_SIGMA if spec.sigma is None else spec.sigma, n, "sigma")
    a = spec.a if spec.a is not None else 1.0 / (2.0 * max_nbrs)
    rate = lambda2 if decay_rate is None else decay_rate
    if spec.kind == LINEAR_TIME:
        c0 = 0.0
        c1 = 0.3 if spec.c1 is None else spec.c1
        alpha = 0.25 if spec.alpha is None else spec.alpha
    else:
        c0 = 0.0 if spec.c0 is None else spec.c0
        c1 = 0.3 if spec.c1 is None else spec.c1
        alpha = 0.5 * rate if spec.alpha is None else spec.alpha
    c1_lin = spec.c1_lin if spec.c1_lin is not None else 1.0 / lambda2
    c2_lin = spec.c2_lin if spec.c2_lin is not None else c1_lin
    b = _per_agent(1.0 if spec.b is None else spec.b, n, "b")
    chi0 = spec.chi0 if spec.chi0 is not None else (
        DYNAMIC_MIET_RESET if spec.kind == DYNAMIC_MIET else 1.0)
    return ResolvedTrigger(
        kind=spec.kind, sigma=sigma, a=float(a), c0=float(c0), c1=float(c1),
        alpha=float(alpha), h=spec.h, gamma=1.0 if spec.gamma is None else float(spec.gamma),
        c1_lin=float(c1_lin), c2_lin=float(c2_lin), b=b, chi0=float(chi0),
        detection=spec.detection,
    )


def periodic_zhat_violations(h: float, sigma_max: float, lambdaN: float) -> list[str]:
    out = []
    bound = 1.0 / (2.0 * lambdaN)
    if not h <= bound:
        out.append(f"h <= 1/(2 lambda_N) = {bound:.6g} violated (h = {h:.6g})")
    sbound = 1.0 / lambdaN ** 2
    if not sigma_max < sbound:
        out.append(f"sigma_max < 1/lambda_N^2 = {sbound:.6g} violated "
                   f"(sigma_max = {sigma_max:.6g})")
    return out


def periodic_phi_violations(h: float, sigma_max: float, max_nbrs: int) -> list[str]:
    total = sigma_max + 4.0 * h * max_nbrs ** 2
    if total < 1.0:
        return []
    return [f"sigma_max + 4 h |N_max|^2 < 1 violated (value {total:.6g})"]


def linear_constant_violations(c1: float, c2: float, b: np.ndarray, n_nbrs: np.ndarray,
                               lambda2: float) -> list[str]:
    out = []
    if not c1 >= 1.0 / lambda2 - 1e-12:
        out.append(f"c1 >= 1/lambda2 = {1.0 / lambda2:.6g} violated (c1 = {c1:.6g})")
    if not c2 > 0:
        out.append(f"c2 > 0 violated (c2 = {c2:.6g})")
    for i, (bi, ni) in enumerate(zip(b, n_nbrs)):
        if c2 > c1:
            ub = 2.0 * c2 / (ni * (c2 - c1))
            if not 0 < bi < ub:
                out.append(f"0 < b_{i + 1} < 2 c2/(|N_i|(c2 - c1)) = {ub:.6g} violated "
                           f"(b = {bi:.6g})")
        elif not bi > 0:
            out.append(f"b_{i + 1} > 0 violated (b = {bi:.6g})")
    return out


def trigger_violations(rt: ResolvedTrigger, *, n_nbrs: np.ndarray, lambda2: float,
                       lambdaN: float) -> list[str]:
    """Every violated parameter predicate for a resolved trigger."""
    out = []
    kind = rt.kind
    sig = rt.sigma
    if kind == DYNAMIC:
        if np.any(sig < 0) or np.any(sig >= 1):
            out.append("sigma_i in [0, 1) violated")
        if not rt.chi0 > 0:
            out.append(f"chi_i(0) > 0 violated (chi0 = {rt.chi0})")
    elif kind in (CENTRALIZED, DECENTRALIZED_STATE, BROADCAST_ZHAT, BROADCAST_PHI,
                  PERIODIC_ZHAT, PERIODIC_PHI, DIRECTED, LINEAR_STATE):
        if np.any(sig <= 0) or np.any(sig >= 1):
            out.append("sigma_i in (0, 1) violated")
    if kind in (DECENTRALIZED_STATE, BROADCAST_ZHAT):
        ub = 1.0 / float(np.max(n_nbrs))
        if not 0 < rt.a < ub:
            out.append(f"0 < a < 1/|N_i| for all i (1/|N_max| = {ub:.6g}) violated "
                       f"(a = {rt.a:.6g})")
    if kind in (TIME_DEPENDENT, DI_TIME):
        if rt.c0 < 0 or rt.c1 < 0 or rt.c0 + rt.c1 <= 0:
            out.append("c0, c1 >= 0 and c0 + c1 > 0 violated")
        if rt.alpha < 0:
            out.append("alpha >= 0 violated")
    if kind == DI_TIME and not rt.gamma > 0:
        out.append("gamma > 0 violated")
    if kind == LINEAR_TIME and not (rt.c1 > 0 and rt.alpha > 0):
        out.append("c1 > 0 and alpha > 0 violated")
    if rt.periodic:
        if rt.h is None or not rt.h > 0:
            out.append("sampling period h > 0 required")
        elif kind == PERIODIC_ZHAT:
            out.extend(periodic_zhat_violations(rt.h, float(sig.max()), lambdaN))
        elif kind == PERIODIC_PHI:
            out.extend(periodic_phi_violations(rt.h, float(sig.max()), int(np.max(n_nbrs))))
    if kind == LINEAR_STATE:
        out.extend(linear_constant_violations(rt.c1_lin, rt.c2_lin, rt.b, n_nbrs, lambda2))
    return out
