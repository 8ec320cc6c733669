"""Imperfect broadcast channel: uniform quantization, fixed delay, dropouts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np


class ChannelError(ValueError):
    pass


class Delivery(NamedTuple):
    time: float
    sender: int
    recipient: int
    value: float


@dataclass(frozen=True)
class ChannelModel:
    """``delay`` is a scalar applied to every link or an N x N matrix
    indexed [sender, recipient]. ``quantizer_step`` of None means no
    quantization."""

    delay: Union[float, np.ndarray] = 0.0
    drop_prob: float = 0.0
    quantizer_step: Optional[float] = None

    @property
    def ideal(self) -> bool:
        return (self.quantizer_step is None and self.drop_prob == 0
                and not np.any(np.asarray(self.delay) > 0))

    def link_delay(self, sender: int, recipient: int) -> float:
        d = np.asarray(self.delay, dtype=float)
        return float(d) if d.ndim == 0 else float(d[sender, recipient])

    def violations(self, n: int) -> list[str]:
        out = []
        d = np.asarray(self.delay, dtype=float)
        if d.ndim not in (0, 2) or (d.ndim == 2 and d.shape != (n, n)):
            out.append(f"channel delay must be a scalar or a {n}x{n} matrix")
        elif np.any(d < 0) or not np.all(np.isfinite(d)):
            out.append("channel delay >= 0 violated")
        if not 0 <= self.drop_prob < 1:
            out.append(f"drop_prob in [0, 1) violated (drop_prob = {self.drop_prob})")
        if self.quantizer_step is not None and not self.quantizer_step > 0:
            out.append(f"quantizer step > 0 violated (step = {self.quantizer_step})")
        return out

    @classmethod
    def from_dict(cls, payload: Optional[dict]) -> "ChannelModel":
        if not payload:
            return cls()
        unknown = set(payload) - {"delay", "drop_prob", "quantizer"}
        if unknown:
            raise ChannelError(f"unknown channel parameters: {sorted(unknown)}")
        q = payload.get("quantizer", "none")
        step = None
        if isinstance(q, dict):
            if q.get("kind", "uniform") != "uniform":
                raise ChannelError(f"unsupported quantizer {q.get('kind')!r}")
            step = float(q["step"])
        elif q not in (None, "none"):
            raise ChannelError(f"quantizer must be 'none' or a uniform block, got {q!r}")
        delay = payload.get("delay", 0.0)
        delay = np.asarray(delay, dtype=float) if isinstance(delay, list) else float(delay)
        return cls(delay=delay, drop_prob=float(payload.get("drop_prob", 0.0)),
                   quantizer_step=step)

    def to_dict(self) -> dict:
        d = np.asarray(self.delay)
        return {
            "delay": d.tolist() if d.ndim else float(d),
            "drop_prob": self.drop_prob,
            "quantizer": ("none" if self.quantizer_step is None
                          else {"kind": "uniform", "step": self.quantizer_step}),
        }


def quantize(value, step: Optional[float]):
    """Uniform quantizer q(v) = step * round(v / step); identity when step is None."""
    if step is None:
        return value
    return step * np.round(np.asarray(value, dtype=float) / step)


def apply_channel(message: tuple[float, float], link: tuple[int, int],
                  channel: ChannelModel, rng: np.random.Generator) -> Optional[Delivery]:
    """Send ``(t, value)`` over ``(sender, recipient)``.

    Returns the delivery, or None when the packet is dropped. Drops are drawn
    independently per recipient; no random number is consumed when
    ``drop_prob`` is zero.
    """
    t, value = message
    sender, recipient = link
    if channel.drop_prob > 0 and rng.random() < channel.drop_prob:
        return None
    q = float(quantize(value, channel.quantizer_step))
    return Delivery(t + channel.link_delay(sender, recipient), sender, recipient, q)
