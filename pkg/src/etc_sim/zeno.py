"""Zeno instrumentation: an online window monitor and an offline classifier.

The online monitor is a cheap guard that aborts runs whose events pile up.
The offline classifier fits the tail of an inter-event gap sequence with
``c + A (l + 1)^-p`` and separates three cases: accumulating event times
(c = 0, p > 1), gaps that shrink to zero without accumulating (c = 0,
p <= 1), and gaps bounded away from zero (c > 0).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.special import zeta

ZENO = "zeno"
NO_MIET = "no_miet"
POSITIVE_MIET = "miet"


@dataclass(frozen=True)
class ZenoConfig:
    window: float = 0.1
    count: int = 50
    eps_z: float = 1e-7

    @classmethod
    def from_dict(cls, payload: Optional[dict]) -> "ZenoConfig":
        payload = payload or {}
        unknown = set(payload) - {"window", "count", "eps_z"}
        if unknown:
            raise ValueError(f"unknown zeno parameters: {sorted(unknown)}")
        return cls(window=float(payload.get("window", 0.1)),
                   count=int(payload.get("count", 50)),
                   eps_z=float(payload.get("eps_z", 1e-7)))

    def to_dict(self) -> dict:
        return {"window": self.window, "count": self.count, "eps_z": self.eps_z}


@dataclass(frozen=True)
class ZenoFlag:
    agent: int  # 0-based
    time: float
    reason: str
    accumulation_estimate: Optional[float]

    def describe(self) -> str:
        acc = ("" if self.accumulation_estimate is None
               else f", accumulation estimate t* ~ {self.accumulation_estimate:.6g}")
        return f"agent {self.agent + 1} at t = {self.time:.9g}: {self.reason}{acc}"


def _geometric_accumulation(times: np.ndarray) -> Optional[float]:
    """Extrapolate t* from the last three events assuming geometric gaps."""
    if len(times) < 3:
        return None
    g1, g2 = times[-2] - times[-3], times[-1] - times[-2]
    if g1 <= 0 or not g2 < g1:
        return None
    ratio = g2 / g1
    return float(times[-1] + g2 * ratio / (1.0 - ratio))


class ZenoMonitor:
    """Online per-agent check: more than ``count`` events inside any window of
    length ``window``, or two consecutive events closer than ``eps_z``."""

    def __init__(self, n_agents: int, config: ZenoConfig = ZenoConfig()):
        self.config = config
        self._recent = [deque() for _ in range(n_agents)]
        self._last = [None] * n_agents
        self.flag: Optional[ZenoFlag] = None

    def record(self, agent: int, t: float) -> Optional[ZenoFlag]:
        cfg = self.config
        last = self._last[agent]
        self._last[agent] = t
        q = self._recent[agent]
        q.append(t)
        while q and q[0] < t - cfg.window:
            q.popleft()
        reason = None
        if last is not None and t - last < cfg.eps_z:
            reason = f"consecutive events {t - last:.3g} s apart (< eps_z = {cfg.eps_z:g})"
        elif len(q) > cfg.count:
            reason = f"{len(q)} events within {cfg.window:g} s (> {cfg.count})"
        if reason and self.flag is None:
            self.flag = ZenoFlag(agent, t, reason, _geometric_accumulation(np.asarray(q)))
        return self.flag if reason else None


def zeno_monitor(event_log: Iterable[tuple[int, float]], window: float = 0.1,
                 count: int = 50, eps_z: float = 1e-7) -> Optional[ZenoFlag]:
    """Replay a time-ordered ``(agent, t)`` log through the window monitor."""
    log = list(event_log)
    n = 1 + max((a for a, _ in log), default=-1)
    mon = ZenoMonitor(n, ZenoConfig(window, count, eps_z))
    for agent, t in log:
        flag = mon.record(agent, t)
        if flag is not None:
            return flag
    return None


@dataclass(frozen=True)
class GapClassification:
    label: str
    floor: float  # fitted c
    exponent: float  # fitted p
    scale: float  # fitted A
    min_gap: float
    accumulation: Optional[float]


def classify_event_times(times, tail_fraction: float = 0.5,
                         floor_rel_tol: float = 1e-6,
                         exponent_margin: float = 0.05) -> GapClassification:
    """Classify an increasing event-time sequence by its gap tail.

    Gaps are indexed from the first event (gap l = t_{l+1} - t_l). The fit
    uses the last ``tail_fraction`` of the gaps with relative residuals. A
    Zeno sequence reports the accumulation point t_n + A * zeta(p, n + 1).
    """
    t = np.asarray(times, dtype=float)
    gaps = np.diff(t)
    if gaps.size < 8:
        raise ValueError("need at least 9 event times to classify")
    if np.any(gaps <= 0):
        raise ValueError("event times must be strictly increasing")
    start = int(gaps.size * (1.0 - tail_fraction))
    ell = np.arange(start, gaps.size, dtype=float)
    g = gaps[start:]

    def resid(theta):
        c, A, p = theta
        return (c + A * (ell + 1.0) ** (-p)) / g - 1.0

    x0 = [0.5 * g.min(), g[0] * (ell[0] + 1.0), 1.0]
    fit = least_squares(resid, x0, bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, 10.0]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000)
    c, A, p = (float(v) for v in fit.x)
    if c > floor_rel_tol * gaps.max():
        label, acc = POSITIVE_MIET, None
    elif p > 1.0 + exponent_margin:
        label = ZENO
        acc = float(t[-1] + A * zeta(p, gaps.size + 1))
    else:
        label, acc = NO_MIET, None
    return GapClassification(label, c, p, A, float(gaps.min()), acc)
