"""Service-time moments, priority-queue delays and load quantities.

A packet of ``L`` bits is served over consecutive scheduled slots whose rates
are i.i.d. draws of the per-slot rate law. Its service time ``s`` is the
first ``m`` with ``R_1 + ... + R_m >= L``, so ``P(s >= m) = P(S_{m-1} < L)``
and both moments follow from the partial-sum distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .channel import GainDistribution
from .power import PowerPolicy


class InstabilityError(ValueError):
    """Cumulative load reached or exceeded one."""


class HorizonTooShortError(ValueError):
    """Partial-sum tail mass at the requested horizon is not negligible."""


@dataclass(frozen=True)
class RateLaw:
    """Per-slot rate distribution on the lattice ``support = step * k``.

    ``continuous`` marks a law obtained by binning a continuous one. Its
    lattice masses are linear-binned (mean preserving), and CDF queries are
    interpolated instead of read off the lattice.
    """

    support: np.ndarray
    probs: np.ndarray
    step: float
    continuous: bool = False

    def __post_init__(self) -> None:
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-9:
            raise ValueError("rate law probabilities must sum to 1")
        if np.any(self.probs < -1e-15) or np.any(self.support < 0):
            raise ValueError("rate law must be a non-negative distribution")

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.support**2, self.probs))

    @property
    def r_max(self) -> float:
        return float(self.support[np.flatnonzero(self.probs > 0)[-1]])

    @property
    def min_positive(self) -> float:
        pos = self.support[(self.probs > 0) & (self.support > 0)]
        return float(pos.min()) if pos.size else 0.0

    @classmethod
    def from_points(cls, points: dict[float, float] | Sequence[tuple[float, float]], max_lattice: int = 1 << 16) -> RateLaw:
        """Build a law from explicit ``{rate: probability}`` points.

        Points are placed on the coarsest lattice containing all of them when
        one exists with at most ``max_lattice`` nodes; otherwise they are
        linear-binned onto a fine uniform grid.
        """
        items = sorted((float(x), float(p)) for x, p in dict(points).items() if p > 0)
        xs = np.array([x for x, _ in items])
        ps = np.array([p for _, p in items])
        step = _lattice_step(xs)
        if step is not None and xs[-1] / step <= max_lattice:
            idx = np.rint(xs / step).astype(int)
            probs = np.zeros(idx[-1] + 1)
            np.add.at(probs, idx, ps)
            return cls(step * np.arange(idx[-1] + 1), probs, step, continuous=False)
        n = 4096
        step = xs[-1] / n
        probs = _linear_bin(xs, ps, step, n)
        return cls(step * np.arange(n + 1), probs, step, continuous=True)


def _lattice_step(xs: np.ndarray) -> float | None:
    pos = xs[xs > 0]
    if pos.size == 0:
        return 1.0
    base = float(pos.min())
    denom = 1
    for x in pos:
        frac = Fraction(float(x) / base).limit_denominator(1000)
        if abs(float(frac) * base - x) > 1e-12 * max(1.0, x):
            return None
        denom = denom * frac.denominator // math.gcd(denom, frac.denominator)
    return base / denom


def _linear_bin(xs: np.ndarray, ps: np.ndarray, step: float, n: int) -> np.ndarray:
    pos = np.clip(xs / step, 0.0, n)
    lo = np.minimum(np.floor(pos).astype(int), n - 1)
    frac = pos - lo
    out = np.zeros(n + 1)
    np.add.at(out, lo, ps * (1.0 - frac))
    np.add.at(out, lo + 1, ps * frac)
    return out


def _gain_quadrature(dist: GainDistribution, breaks: Sequence[float], nodes: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating against the gain law (weights sum to 1)."""
    if dist.is_discrete:
        if dist.kind == "constant":
            return np.array([dist.mean]), np.array([1.0])
        return np.asarray(dist.support), np.asarray(dist.probs)
    cuts = sorted({0.0, dist.max, *[b for b in breaks if 0.0 < b < dist.max]})
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = 0.5 * (b - a) * gl_x + 0.5 * (b + a)
        xs.append(x)
        ws.append(0.5 * (b - a) * gl_w * dist.pdf(x))
    x, w = np.concatenate(xs), np.concatenate(ws)
    return x, w / w.sum()


def rate_law(
    gamma_dist: GainDistribution,
    g_dist: GainDistribution,
    policy: PowerPolicy,
    grid_size: int = 512,
    log_base: float = 2.0,
) -> RateLaw:
    """Law of ``log_b(1 + P(g) * gamma)`` for independent ``gamma`` and ``g``."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    if gamma_dist.is_discrete and g_dist.is_discrete:
        g_nodes, g_w = _gain_quadrature(g_dist, ())
        gam_nodes, gam_w = _gain_quadrature(gamma_dist, ())
        points: dict[float, float] = {}
        for g, wg in zip(g_nodes, g_w):
            p = policy.power(float(g))
            for gam, wgam in zip(gam_nodes, gam_w):
                r = math.log1p(p * gam) / math.log(log_base)
                key = round(r, 12)
                points[key] = points.get(key, 0.0) + wg * wgam
        return RateLaw.from_points(points)

    kink = policy.i_inst / policy.p_max
    g_nodes, g_w = _gain_quadrature(g_dist, (kink,), nodes=256)
    powers = policy.power_array(g_nodes)
    r_max = math.log1p(float(powers.max()) * gamma_dist.max) / math.log(log_base)
    n = grid_size
    step = r_max / n
    sub = 8
    fine = np.linspace(0.0, r_max, n * sub * 2 + 1)

    def cdf(r: np.ndarray) -> np.ndarray:
        x = np.expm1(r * math.log(log_base))
        out = np.zeros_like(r)
        for p, w in zip(powers, g_w):
            if p > 0:
                out += w * gamma_dist.cdf(x / p)
            else:
                out += w
        return np.minimum(out, 1.0)

    F = cdf(fine)
    F[-1] = 1.0
    Fe = F[:: 2 * sub]
    # per coarse cell: integral of F by composite Simpson on the fine grid
    h = fine[1] - fine[0]
    simpson = (F[:-1:2] + 4.0 * F[1::2] + F[2::2]) * (h / 3.0)
    int_F = simpson.reshape(n, sub).sum(axis=1)
    edges = step * np.arange(n + 1)
    mass = np.diff(Fe)
    first_moment = edges[1:] * Fe[1:] - edges[:-1] * Fe[:-1] - int_F
    with np.errstate(invalid="ignore", divide="ignore"):
        centre = np.where(mass > 0, first_moment / np.where(mass > 0, mass, 1.0), edges[:-1] + 0.5 * step)
    centre = np.clip(centre, edges[:-1], edges[1:])
    frac = (centre - edges[:-1]) / step
    probs = np.zeros(n + 1)
    probs[0] += Fe[0]
    probs[:-1] += mass * (1.0 - frac)
    probs[1:] += mass * frac
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    return RateLaw(edges, probs, step, continuous=True)


def _lattice_threshold(law: RateLaw, L: float) -> int:
    """Number of lattice points needed to answer ``P(S < L)``."""
    if law.continuous:
        return int(math.floor(L / law.step - 0.5)) + 2
    return int(math.ceil(L / law.step - 1e-9))


def _prob_below(law: RateLaw, dist: np.ndarray, L: float) -> float:
    if not law.continuous:
        n = _lattice_threshold(law, L)
        return float(dist[:n].sum())
    # P(S <= k*step) of a linear-binned variable approximates F((k + 1/2) step)
    pos = L / law.step - 0.5
    k = int(math.floor(pos))
    cum_k = float(dist[: k + 1].sum()) if k >= 0 else 0.0
    if k + 1 >= dist.size:
        return cum_k
    return cum_k + (pos - k) * float(dist[k + 1])


def _convolve(a: np.ndarray, kernel: np.ndarray, n: int) -> np.ndarray:
    if a.size * kernel.size <= 2_000_000:
        out = np.convolve(a, kernel)[:n]
    else:
        out = signal.fftconvolve(a, kernel)[:n]
        np.clip(out, 0.0, None, out=out)
    return out


def service_survival(law: RateLaw, L: float, horizon: int | None = None, tail_tol: float = 1e-9) -> np.ndarray:
    """``P(s >= m) = P(R_1 + ... + R_{m-1} < L)`` for ``m = 1 .. horizon``.

    With ``horizon=None`` the series runs until the survival drops below
    ``1e-13``. An explicit horizon whose next term exceeds ``tail_tol``
    raises :class:`HorizonTooShortError`.
    """
    if L <= 0:
        raise ValueError("packet length must be positive")
    if law.mean <= 0:
        raise ValueError("rate law is a point mass at zero")
    n = _lattice_threshold(law, L)
    kernel = law.probs
    dist = np.zeros(max(n, 1))
    dist[0] = 1.0
    out: list[float] = []
    limit = horizon if horizon is not None else 10_000_000
    for _ in range(limit):
        pm = _prob_below(law, dist, L)
        out.append(pm)
        if horizon is None and pm < 1e-13:
            break
        dist = _convolve(dist, kernel, dist.size)
    else:
        if horizon is not None:
            tail = _prob_below(law, dist, L)
            if tail > tail_tol:
                raise HorizonTooShortError(f"P(s > {horizon}) = {tail:.3g} exceeds {tail_tol:g}")
        else:
            raise HorizonTooShortError("survival series did not converge")
    return np.array(out)


def mean_service_time(law: RateLaw, L: float) -> float:
    """Mean service time ``L / E[R]`` in slots.

    A renewal approximation that ignores the overshoot of the last slot;
    :func:`renewal_mean_service_time` gives the exact stopping-time mean.
    """
    if law.mean <= 0:
        raise ValueError("rate law is a point mass at zero")
    return L / law.mean


def renewal_mean_service_time(law: RateLaw, L: float, horizon: int | None = None) -> float:
    """Exact mean of the stopping time, ``sum_m P(s >= m)``."""
    return float(math.fsum(service_survival(law, L, horizon)))


def second_moment_service_time(law: RateLaw, L: float, horizon: int | None = None) -> float:
    """``E[s^2]`` through the collapsed indicator sum ``sum_m (2m - 1) P(s >= m)``."""
    surv = service_survival(law, L, horizon)
    m = np.arange(1, surv.size + 1)
    return float(math.fsum((2 * m - 1) * surv))


def second_moment_double_sum(law: RateLaw, L: float, horizon: int | None = None) -> float:
    """Literal ``sum_{t1} sum_{t2} P(S_{max(t1,t2)-1} < L)`` over ``1..horizon``.

    ``horizon`` defaults to ``ceil(L)``, which is exact when every positive
    rate is at least one bit per slot. O(horizon^2); meant for small ``L``.
    """
    h = int(math.ceil(L)) if horizon is None else horizon
    surv = service_survival(law, L, h, tail_tol=math.inf)
    terms = [surv[max(t1, t2) - 1] for t1 in range(1, h + 1) for t2 in range(1, h + 1)]
    return float(math.fsum(terms))


@dataclass(frozen=True)
class ServiceMoments:
    mean_slots: float
    second_moment_slots2: float
    arrival_rate: float

    @property
    def rho(self) -> float:
        return self.arrival_rate * self.mean_slots


def service_moments(law: RateLaw, L: float, arrival_rate: float, horizon: int | None = None) -> ServiceMoments:
    return ServiceMoments(mean_service_time(law, L), second_moment_service_time(law, L, horizon), arrival_rate)


def priority_delay(moments: Sequence[ServiceMoments], j: int, residual_scale: float = 0.5) -> float:
    """Mean sojourn (slots) of the class at position ``j`` (0-based) under
    preemptive-resume priority, ``moments`` ordered highest priority first.

    ``E[s_j] / (1 - rho_above) + residual_scale * sum_{l<=j} lam_l E[s_l^2]
    / ((1 - rho_above) (1 - rho_above - rho_j))``. The default
    ``residual_scale = 0.5`` is the usual mean-residual-work factor; 1.0
    gives the expression without it.
    """
    if not 0 <= j < len(moments):
        raise IndexError("class index out of range")
    rho_above = math.fsum(m.rho for m in moments[:j])
    d1 = 1.0 - rho_above
    d2 = d1 - moments[j].rho
    if d1 <= 0 or d2 <= 0:
        raise InstabilityError(f"cumulative load {rho_above + moments[j].rho:.4f} >= 1")
    residual = residual_scale * math.fsum(m.arrival_rate * m.second_moment_slots2 for m in moments[: j + 1])
    return moments[j].mean_slots / d1 + residual / (d1 * d2)


def priority_delays(moments: Sequence[ServiceMoments], order: Sequence[int], residual_scale: float = 0.5) -> np.ndarray:
    """Per-SU delays (indexed by SU) when ``order`` lists SUs highest first."""
    ranked = [moments[i] for i in order]
    out = np.empty(len(moments))
    for pos, i in enumerate(order):
        out[i] = priority_delay(ranked, pos, residual_scale)
    return out


def total_load(moments: Sequence[ServiceMoments]) -> float:
    return math.fsum(m.rho for m in moments)


def lambda_scale_for_load(mean_service: Sequence[float], weights: Sequence[float], target_load: float) -> float:
    """``lam`` such that ``sum_i weights_i * lam * E[s_i] = target_load``."""
    return target_load / math.fsum(w * s for w, s in zip(weights, mean_service))


def delay_targets_feasible(moments: Sequence[ServiceMoments], bounds: Sequence[float], slack: float = 0.0, residual_scale: float = 0.5) -> bool:
    """Whether some mixture of strict priority orders meets every bound.

    The per-order delay vectors come from :func:`priority_delay`; the check
    solves a small LP over their convex hull and requires each bound to hold
    with relative margin ``slack``.
    """
    n = len(moments)
    if total_load(moments) >= 1.0:
        return False
    verts = np.array([priority_delays(moments, order, residual_scale) for order in itertools.permutations(range(n))])
    k = verts.shape[0]
    res = optimize.linprog(
        np.zeros(k),
        A_ub=verts.T,
        b_ub=np.asarray(bounds, dtype=float) * (1.0 - slack),
        A_eq=np.ones((1, k)),
        b_eq=[1.0],
        bounds=[(0, None)] * k,
        method="highs",
    )
    return bool(res.status == 0)
