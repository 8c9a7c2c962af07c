"""Per-slot channel power gains for the SU->BS and SU->PU links.

Gains are i.i.d. across slots and independent across users and links.
Continuous laws are exponentials truncated at a hard maximum by rejection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("truncated-exponential", "discrete-table", "constant")


@dataclass(frozen=True)
class GainDistribution:
    """Law of one link's power gain.

    ``mean`` is the scale of the untruncated exponential (or the constant
    value); ``expected_gain`` returns the mean after truncation.
    """

    kind: str
    mean: float
    max: float
    support: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown gain distribution kind {self.kind!r}")
        if not self.mean > 0:
            raise ValueError("mean must be positive")
        if self.max < self.mean:
            raise ValueError("max must be >= mean")
        if self.kind == "discrete-table":
            if len(self.support) == 0 or len(self.support) != len(self.probs):
                raise ValueError("discrete-table needs matching support and probs")
            if abs(math.fsum(self.probs) - 1.0) > 1e-12:
                raise ValueError("discrete-table probabilities must sum to 1")
            if any(p < 0 for p in self.probs):
                raise ValueError("negative probability in discrete-table")
            if any(not 0 < x <= self.max for x in self.support):
                raise ValueError("discrete-table support must lie in (0, max]")

    @classmethod
    def truncated_exponential(cls, mean: float, max: float | None = None) -> GainDistribution:
        """Exponential with scale ``mean`` truncated at ``max`` (default ``10 * mean``)."""
        return cls("truncated-exponential", float(mean), float(10 * mean if max is None else max))

    @classmethod
    def constant(cls, value: float) -> GainDistribution:
        return cls("constant", float(value), float(value))

    @classmethod
    def table(cls, points: dict[float, float] | Sequence[tuple[float, float]]) -> GainDistribution:
        items = sorted(dict(points).items())
        support = tuple(float(x) for x, _ in items)
        probs = tuple(float(p) for _, p in items)
        mean = math.fsum(x * p for x, p in zip(support, probs))
        return cls("discrete-table", mean, max(support), support, probs)

    @property
    def is_discrete(self) -> bool:
        return self.kind != "truncated-exponential"

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        """P(gain <= x), vectorised."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return (x >= self.mean).astype(float)
        if self.kind == "discrete-table":
            sup = np.asarray(self.support)
            cum = np.cumsum(self.probs)
            idx = np.searchsorted(sup, x, side="right")
            return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        theta, top = self.mean, self.max
        norm = -math.expm1(-top / theta)
        xc = np.clip(x, 0.0, top)
        return np.minimum(-np.expm1(-xc / theta) / norm, 1.0)

    def pdf(self, x: np.ndarray | float) -> np.ndarray:
        """Density on (0, max]; only defined for the continuous kind."""
        if self.kind != "truncated-exponential":
            raise ValueError("pdf is only defined for truncated-exponential gains")
        x = np.asarray(x, dtype=float)
        theta, top = self.mean, self.max
        norm = -math.expm1(-top / theta)
        inside = (x >= 0) & (x <= top)
        return np.where(inside, np.exp(-x / theta) / (theta * norm), 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` gains; exceedances of ``max`` are redrawn until none remain."""
        if self.kind == "constant":
            return np.full(size, self.mean)
        if self.kind == "discrete-table":
            return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.probs))
        out = rng.exponential(self.mean, size)
        # exact zeros are outside the (0, max] support, reject them too
        bad = np.flatnonzero((out > self.max) | (out <= 0.0))
        while bad.size:
            out[bad] = rng.exponential(self.mean, bad.size)
            bad = bad[(out[bad] > self.max) | (out[bad] <= 0.0)]
        return out


def expected_gain(dist: GainDistribution) -> float:
    """Mean of the gain after truncation."""
    if dist.kind == "constant":
        return dist.mean
    if dist.kind == "discrete-table":
        return math.fsum(x * p for x, p in zip(dist.support, dist.probs))
    theta, top = dist.mean, dist.max
    # E[X | X <= M] for X ~ Exp(scale theta)
    return theta - top * math.exp(-top / theta) / -math.expm1(-top / theta)


@dataclass(frozen=True)
class LinkPair:
    """Gain laws of one SU: ``gamma`` towards the BS, ``g`` towards the PU."""

    gamma: GainDistribution
    g: GainDistribution


@dataclass
class ChannelDraw:
    gamma: np.ndarray
    g: np.ndarray = field(default_factory=lambda: np.empty(0))


def sample_slot(dists: Sequence[LinkPair], rngs: Sequence[tuple[np.random.Generator, np.random.Generator]]) -> ChannelDraw:
    """One slot's gains for every SU, using a separate generator per SU and link."""
    if len(dists) != len(rngs):
        raise ValueError("need one generator pair per SU")
    gamma = np.array([d.gamma.sample(r[0], 1)[0] for d, r in zip(dists, rngs)])
    g = np.array([d.g.sample(r[1], 1)[0] for d, r in zip(dists, rngs)])
    return ChannelDraw(gamma, g)
