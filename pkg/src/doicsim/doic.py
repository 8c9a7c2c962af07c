"""DOIC frame-based scheduling with virtual delay queues.

At each frame start the users are ranked by ``Y_i / E[s_i]`` (descending),
the ranking is used as a preemptive-resume priority list for the whole
frame, and at frame end every ``Y_i`` absorbs the excess delay of the
packets that arrived during the frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelDraw
from .policy import FrameRecord, Scheduler, SlotDecision
from .power import PowerPolicy
from .queueing import SuState


@dataclass(frozen=True)
class PriorityList:
    order: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"{self.order} is not a permutation")

    def __iter__(self):
        return iter(self.order)

    def __len__(self) -> int:
        return len(self.order)


@dataclass
class VirtualQueue:
    y: float = 0.0
    r_current: float = 0.0


@dataclass(frozen=True)
class DoicParams:
    V: float
    expected_service: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.V > 0:
            raise ValueError("V must be positive")
        if any(not s > 0 for s in self.expected_service):
            raise ValueError("expected service times must be positive")


def sort_priorities(y: Sequence[float], expected_service: Sequence[float]) -> PriorityList:
    """Descending ``y_i / E[s_i]``; ties go to the lower index."""
    if any(not s > 0 for s in expected_service):
        raise ValueError("expected service times must be positive")
    keys = [yi / si for yi, si in zip(y, expected_service)]
    return PriorityList(tuple(sorted(range(len(keys)), key=lambda i: (-keys[i], i))))


def select_transmitter(order: PriorityList | Sequence[int], nonempty: Sequence[bool]) -> Optional[int]:
    for i in order:
        if nonempty[i]:
            return i
    return None


def update_auxiliary(y_i: float, lambda_i: float, V: float, d_i: float) -> float:
    """Minimiser of ``(V - y_i lambda_i) r`` over ``[0, d_i]``, ties to 0."""
    return d_i if V < y_i * lambda_i else 0.0


def update_virtual_queue(y_i: float, frame_delays: Sequence[Optional[int]], r_i: float) -> float:
    """``max(0, y_i + sum_j (W_j - r_i))`` over the frame's arrivals."""
    if any(w is None for w in frame_delays):
        raise AssertionError("frame closed with an undeparted packet")
    total = float(sum(frame_delays)) - r_i * len(frame_delays)
    return max(0.0, y_i + total)


def mean_rate_stability_series(y_history: np.ndarray, frames: np.ndarray | None = None) -> np.ndarray:
    """``Y_i(K) / K`` for each row of ``y_history``.

    Row ``k`` is taken as ``Y(K)`` with ``K = frames[k]`` (default ``k + 1``).
    """
    y = np.asarray(y_history, dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("y_history must be a non-empty (K, N) array")
    k = np.arange(1, y.shape[0] + 1) if frames is None else np.asarray(frames, dtype=float)
    if np.any(k < 1):
        raise ValueError("frame counts must be >= 1")
    return y / k[:, None]


def frames_to_stability(y_history: np.ndarray, frames: np.ndarray, threshold: float) -> Optional[int]:
    """First recorded ``K`` with ``max_i Y_i(K) / K < threshold``."""
    series = mean_rate_stability_series(y_history, frames).max(axis=1)
    hit = np.flatnonzero(series < threshold)
    return int(frames[hit[0]]) if hit.size else None


class DoicScheduler(Scheduler):
    name = "doic"

    def __init__(
        self,
        power: PowerPolicy,
        V: float,
        expected_service: Sequence[float],
        arrival_rates: Sequence[float],
        delay_bounds: Sequence[float],
        log_base: float = 2.0,
    ):
        super().__init__(power, log_base)
        self.params = DoicParams(float(V), tuple(float(s) for s in expected_service))
        self.arrival_rates = np.asarray(arrival_rates, dtype=float)
        self.delay_bounds = np.asarray(delay_bounds, dtype=float)
        n = len(expected_service)
        self.queues = [VirtualQueue() for _ in range(n)]
        self.order = PriorityList(tuple(range(n)))
        self.history: list[np.ndarray] = []

    @property
    def y(self) -> np.ndarray:
        return np.array([q.y for q in self.queues])

    def on_frame_start(self, frame_index: int, queues: Sequence[SuState]) -> None:
        self.order = sort_priorities(self.y, self.params.expected_service)

    def on_slot(self, draw: ChannelDraw, queues: Sequence[SuState], u: float) -> SlotDecision:
        su = select_transmitter(self.order, [q.nonempty for q in queues])
        return self.transmit(su, draw)

    def on_frame_end(self, record: FrameRecord) -> None:
        for i, vq in enumerate(self.queues):
            vq.r_current = update_auxiliary(vq.y, self.arrival_rates[i], self.params.V, self.delay_bounds[i])
            vq.y = update_virtual_queue(vq.y, record.delays[i], vq.r_current)
        self.history.append(self.y)
