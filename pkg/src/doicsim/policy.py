"""Scheduler contract shared by DOIC and the baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelDraw
from .power import PowerPolicy, rate
from .queueing import SuState


@dataclass(frozen=True)
class SlotDecision:
    su: Optional[int] = None
    power: float = 0.0
    rate_bits: float = 0.0

    def powers(self, n: int) -> np.ndarray:
        """Full per-SU power vector for this slot (all zero except ``su``)."""
        out = np.zeros(n)
        if self.su is not None:
            out[self.su] = self.power
        return out


IDLE = SlotDecision()


@dataclass
class FrameRecord:
    """One idle period followed by one busy period.

    ``delays[i]`` holds the delays of SU ``i``'s packets that arrived in the
    frame; frame closure guarantees all of them have departed.
    """

    index: int
    start_slot: int
    idle_len: int = 0
    busy_len: int = 0
    delays: list[list[int]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.idle_len + self.busy_len

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.length - 1


class Scheduler:
    """Base class: picks at most one SU per slot and powers it.

    The engine calls ``on_frame_start`` before the first slot of each frame,
    ``on_slot`` in every busy slot and ``on_frame_end`` once the system
    empties. ``u`` is the slot's scheduler uniform from the seeded streams.
    """

    name = "base"

    def __init__(self, power: PowerPolicy, log_base: float = 2.0):
        self.power_policy = power
        self.log_base = log_base

    def on_frame_start(self, frame_index: int, queues: Sequence[SuState]) -> None:
        pass

    def on_slot(self, draw: ChannelDraw, queues: Sequence[SuState], u: float) -> SlotDecision:
        raise NotImplementedError

    def on_frame_end(self, record: FrameRecord) -> None:
        pass

    def transmit(self, su: Optional[int], draw: ChannelDraw) -> SlotDecision:
        if su is None:
            return IDLE
        p = self.power_policy.power(float(draw.g[su]))
        return SlotDecision(su, p, rate(p, float(draw.gamma[su]), self.log_base))
