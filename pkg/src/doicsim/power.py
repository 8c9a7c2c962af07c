"""Interference-capped power control and the resulting per-slot rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

POLICY_KINDS = ("interference-capped", "constant", "custom-table")


def optimal_power(g: float, i_inst: float, p_max: float) -> float:
    """Largest power satisfying both the peak cap and the PU interference cap.

    The returned value always satisfies ``p * g <= i_inst`` in floating point.
    """
    if not g > 0:
        raise ValueError("interference gain must be positive")
    p = i_inst / g
    if p >= p_max:
        return float(p_max)
    while p * g > i_inst:
        p = math.nextafter(p, 0.0)
    return p


def optimal_power_array(g: np.ndarray, i_inst: float, p_max: float) -> np.ndarray:
    """Vectorised :func:`optimal_power` with the same rounding guarantee."""
    g = np.asarray(g, dtype=float)
    p = np.minimum(i_inst / g, p_max)
    over = p * g > i_inst
    while np.any(over):
        p[over] = np.nextafter(p[over], 0.0)
        over = p * g > i_inst
    return p


def rate(p: float, gamma: float, log_base: float = 2.0) -> float:
    """Bits per slot at power ``p`` over gain ``gamma``."""
    if p <= 0.0:
        return 0.0
    return math.log1p(p * gamma) / math.log(log_base)


def rate_array(p: np.ndarray, gamma: np.ndarray, log_base: float = 2.0) -> np.ndarray:
    return np.log1p(np.asarray(p) * np.asarray(gamma)) / math.log(log_base)


def max_rate(p_max: float, gamma_max: float, log_base: float = 2.0) -> float:
    return rate(p_max, gamma_max, log_base)


@dataclass(frozen=True)
class PowerPolicy:
    """Maps an SU->PU gain to a transmit power.

    ``interference-capped`` is ``min(I_inst / g, P_max)``; ``constant`` always
    uses ``level`` (clipped to stay feasible); ``custom-table`` is a step
    function given as ``((g_upper, power), ...)`` sorted by ``g_upper``, again
    clipped to the feasible set.
    """

    p_max: float
    i_inst: float
    kind: str = "interference-capped"
    level: float = 0.0
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown power policy {self.kind!r}")
        if not (self.p_max > 0 and self.i_inst > 0):
            raise ValueError("p_max and i_inst must be positive")

    def power(self, g: float) -> float:
        cap = optimal_power(g, self.i_inst, self.p_max)
        if self.kind == "interference-capped":
            return cap
        if self.kind == "constant":
            return min(self.level, cap)
        for g_upper, p in self.table:
            if g <= g_upper:
                return min(p, cap)
        return min(self.table[-1][1], cap) if self.table else 0.0

    def power_array(self, g: np.ndarray) -> np.ndarray:
        cap = optimal_power_array(g, self.i_inst, self.p_max)
        if self.kind == "interference-capped":
            return cap
        return np.minimum(np.array([self.power(x) for x in np.asarray(g)]), cap)
