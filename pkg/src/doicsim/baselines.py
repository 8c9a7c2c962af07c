"""Reference schedulers: random access (CSMA), MaxWeight (CNC) and fixed priority.

All of them transmit with the interference-capped power ``min(I_inst / g, P_max)``.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .channel import ChannelDraw
from .doic import PriorityList, select_transmitter
from .policy import Scheduler, SlotDecision
from .power import PowerPolicy, rate
from .queueing import SuState


def csma_select(nonempty: Sequence[bool], u: float) -> Optional[int]:
    """Uniform choice among non-empty SUs driven by one uniform ``u`` in [0, 1)."""
    candidates = [i for i, busy in enumerate(nonempty) if busy]
    if not candidates:
        return None
    return candidates[min(int(u * len(candidates)), len(candidates) - 1)]


def cnc_select(q: Sequence[int], draw: ChannelDraw, policy: PowerPolicy, log_base: float = 2.0) -> Optional[int]:
    """Non-empty SU maximising ``Q_i * R_i``; ties go to the lower index."""
    best, best_w = None, -math.inf
    for i, qi in enumerate(q):
        if qi <= 0:
            continue
        w = qi * rate(policy.power(float(draw.g[i])), float(draw.gamma[i]), log_base)
        if w > best_w:
            best, best_w = i, w
    return best


class CsmaScheduler(Scheduler):
    name = "csma"

    def on_slot(self, draw: ChannelDraw, queues: Sequence[SuState], u: float) -> SlotDecision:
        return self.transmit(csma_select([q.nonempty for q in queues], u), draw)


class CncScheduler(Scheduler):
    name = "cnc"

    def on_slot(self, draw: ChannelDraw, queues: Sequence[SuState], u: float) -> SlotDecision:
        return self.transmit(cnc_select([len(q) for q in queues], draw, self.power_policy, self.log_base), draw)


class StaticPriorityScheduler(Scheduler):
    """Fixed preemptive-resume priority list (highest first)."""

    name = "static-priority"

    def __init__(self, power: PowerPolicy, order: Sequence[int], log_base: float = 2.0):
        super().__init__(power, log_base)
        self.order = PriorityList(tuple(order))

    def on_slot(self, draw: ChannelDraw, queues: Sequence[SuState], u: float) -> SlotDecision:
        return self.transmit(select_transmitter(self.order, [q.nonempty for q in queues]), draw)
