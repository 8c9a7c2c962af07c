"""Per-SU FIFO packet buffers with bit-level head-of-line service."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional


class EmptyQueueError(RuntimeError):
    """Service was requested from an SU whose buffer is empty."""


@dataclass
class Packet:
    arrival_slot: int
    departure_slot: Optional[int] = None

    @property
    def departed(self) -> bool:
        return self.departure_slot is not None


def packet_delay(p: Packet) -> int:
    """Slots from arrival to last-bit transmission, both slots counted."""
    if p.departure_slot is None:
        raise ValueError("packet has not departed yet")
    return p.departure_slot - p.arrival_slot + 1


@dataclass
class SuState:
    """Buffer of one secondary user.

    ``hol_remaining_bits`` is a float because per-slot rates are real valued.
    """

    arrival_rate: float
    delay_bound: float
    packet_bits: float
    queue: deque = field(default_factory=deque)
    hol_remaining_bits: float = 0.0
    last_served_slot: int = -1
    last_departed: Optional[Packet] = None

    def __len__(self) -> int:
        return len(self.queue)

    @property
    def nonempty(self) -> bool:
        return bool(self.queue)

    def enqueue(self, slot: int) -> Packet:
        pkt = Packet(slot)
        if not self.queue:
            self.hol_remaining_bits = self.packet_bits
        self.queue.append(pkt)
        return pkt


def arrive(state: SuState, slot: int, rng) -> int:
    """Bernoulli(λ) arrival at the start of ``slot``; returns 0 or 1."""
    if slot < 0:
        raise ValueError("slot must be non-negative")
    if state.arrival_rate > 0 and rng.random() < state.arrival_rate:
        state.enqueue(slot)
        return 1
    return 0


def serve_bits(state: SuState, rate_bits: float, slot: int) -> int:
    """Send ``min(rate_bits, remaining)`` bits of the HOL packet.

    Returns 1 when the HOL packet completes in this slot. At most one packet
    per SU can complete per slot.
    """
    if not state.queue:
        raise EmptyQueueError("serve_bits called on an empty buffer")
    if state.last_served_slot == slot:
        raise RuntimeError(f"SU served twice in slot {slot}")
    state.last_served_slot = slot
    sent = min(rate_bits, state.hol_remaining_bits)
    state.hol_remaining_bits -= sent
    if state.hol_remaining_bits > 0.0:
        return 0
    pkt = state.queue.popleft()
    pkt.departure_slot = slot
    state.hol_remaining_bits = state.packet_bits if state.queue else 0.0
    state.last_departed = pkt
    return 1
