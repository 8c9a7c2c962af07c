"""Seeded random substreams shared by the reference and compiled engines.

Every SU owns three independent streams (BS gain, PU gain, arrivals) keyed
by its index, so adding users never perturbs existing users' draws. Draws
are produced in fixed-size blocks; both engines consume the same blocks in
the same order, which is what makes them bit-for-bit comparable.

Channel gains are consumed only in busy slots: an idle slot schedules
nobody, so its gains would never be observed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .channel import ChannelDraw, LinkPair

CHANNEL_BLOCK = 4096
ARRIVAL_BLOCK = 1024
NEVER = np.iinfo(np.int64).max
_SCHEDULER_KEY = (0x5C4ED,)


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class ChannelSource:
    """Per-busy-slot channel gains plus one scheduler uniform per busy slot."""

    def __init__(self, links: Sequence[LinkPair], seed: int, block: int = CHANNEL_BLOCK):
        self.links = list(links)
        self.block = block
        self._gamma_rng = [substream(seed, i, 0) for i in range(len(links))]
        self._g_rng = [substream(seed, i, 1) for i in range(len(links))]
        self._u_rng = substream(seed, *_SCHEDULER_KEY)
        self._buf: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        self._pos = block

    def next_block(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``gamma[N, B]``, ``g[N, B]`` and ``u[B]``."""
        n, b = len(self.links), self.block
        gamma = np.empty((n, b))
        g = np.empty((n, b))
        for i, link in enumerate(self.links):
            gamma[i] = link.gamma.sample(self._gamma_rng[i], b)
            g[i] = link.g.sample(self._g_rng[i], b)
        u = self._u_rng.random(b)
        return gamma, g, u

    def draw(self) -> tuple[ChannelDraw, float]:
        """Next busy slot's gains and scheduler uniform."""
        if self._pos >= self.block:
            self._buf = self.next_block()
            self._pos = 0
        gamma, g, u = self._buf
        k = self._pos
        self._pos += 1
        return ChannelDraw(gamma[:, k].copy(), g[:, k].copy()), float(u[k])


class ArrivalSource:
    """Bernoulli arrival slots of one SU, generated as geometric gaps."""

    def __init__(self, rate: float, seed: int, index: int, block: int = ARRIVAL_BLOCK):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("arrival rate must lie in [0, 1]")
        self.rate = rate
        self.block = block
        self._rng = substream(seed, index, 2)
        self._last = -1

    def next_block(self) -> np.ndarray:
        """Next ``block`` arrival slots, strictly increasing."""
        if self.rate <= 0.0:
            return np.full(self.block, NEVER, dtype=np.int64)
        gaps = self._rng.geometric(self.rate, self.block).astype(np.int64)
        slots = self._last + np.cumsum(gaps)
        self._last = int(slots[-1])
        return slots

    def __iter__(self):
        while True:
            yield from self.next_block().tolist()
