"""Brute-force validators kept independent of the engine and analytics paths.

* Monte Carlo service-time moments from raw channel draws.
* Exact service-time moments by enumerating every rate sequence.
* Replay of a fully logged run with a separate queue/frame implementation.
* Exhaustive search over priority lists for the frame objective.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytics import ServiceMoments, priority_delays
from .channel import GainDistribution
from .power import PowerPolicy


@dataclass(frozen=True)
class MCMoments:
    mean: float
    second: float
    se_mean: float
    se_second: float
    samples: int

    def agrees(self, mean: float | None = None, second: float | None = None, n_se: float = 3.0) -> bool:
        ok = True
        if mean is not None:
            ok &= abs(mean - self.mean) <= n_se * self.se_mean
        if second is not None:
            ok &= abs(second - self.second) <= n_se * self.se_second
        return bool(ok)


def mc_service_moments(
    gamma_dist: GainDistribution,
    g_dist: GainDistribution,
    policy: PowerPolicy,
    L: float,
    samples: int = 100_000,
    seed: int = 12345,
    log_base: float = 2.0,
) -> MCMoments:
    """Simulate ``samples`` packets, each served until ``L`` bits have gone out."""
    rng = np.random.default_rng(seed)
    remaining = np.full(samples, float(L))
    slots = np.zeros(samples)
    active = np.arange(samples)
    ln_b = math.log(log_base)
    while active.size:
        g = g_dist.sample(rng, active.size)
        gamma = gamma_dist.sample(rng, active.size)
        p = policy.power_array(g)
        remaining[active] -= np.log1p(p * gamma) / ln_b
        slots[active] += 1
        active = active[remaining[active] > 0]
    s2 = slots**2
    root = math.sqrt(samples)
    return MCMoments(
        float(slots.mean()),
        float(s2.mean()),
        float(slots.std(ddof=1) / root),
        float(s2.std(ddof=1) / root),
        samples,
    )


class EnumerationBudgetError(RuntimeError):
    pass


def enumerate_service_time(
    rate_support: dict[float, float] | Sequence[tuple[float, float]],
    L: float,
    node_budget: int = 10_000_000,
) -> tuple[float, float]:
    """Exact ``(E[s], E[s^2])`` by walking the tree of rate sequences."""
    points = [(float(r), float(p)) for r, p in dict(rate_support).items() if p > 0]
    if len(points) > 4 or L > 20:
        raise ValueError("enumeration is limited to support size <= 4 and L <= 20")
    if any(r <= 0 for r, _ in points):
        raise ValueError("zero rates make the enumeration tree infinite")
    first: list[float] = []
    second: list[float] = []
    stack = [(0.0, 0, 1.0)]
    nodes = 0
    while stack:
        sent, depth, prob = stack.pop()
        for r, p in points:
            nodes += 1
            if nodes > node_budget:
                raise EnumerationBudgetError(f"more than {node_budget} nodes")
            total = sent + r
            if total >= L:
                k = depth + 1
                first.append(prob * p * k)
                second.append(prob * p * k * k)
            else:
                stack.append((total, depth + 1, prob * p))
    return math.fsum(first), math.fsum(second)


# ---------------------------------------------------------------- replay


@dataclass
class ReplayResult:
    passed: bool
    mismatches: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def _close(a: float, b: float, rel: float = 1e-12, abs_: float = 1e-9) -> bool:
    if math.isnan(a) and math.isnan(b):
        return True
    return abs(a - b) <= abs_ + rel * max(abs(a), abs(b))


def replay_verify(report, max_mismatches: int = 20) -> ReplayResult:
    """Rebuild queues, delays, frames, virtual queues and statistics from the
    logged arrivals and per-slot decisions, and compare with the report.

    Also re-derives each logged decision from its policy rule and checks
    the per-slot power and interference constraints.
    """
    trace = report.trace
    cfg = report.config
    if trace is None or cfg is None:
        raise ValueError("replay needs a report produced with full_log=True")
    bad: list[str] = []

    def fail(msg: str) -> None:
        if len(bad) < max_mismatches:
            bad.append(msg)

    n = cfg.n_users
    L = float(cfg.packet_bits)
    ln_b = math.log(cfg.log_base)
    arrivals_at: dict[int, list[int]] = {}
    for t, i in trace.arrivals:
        arrivals_at.setdefault(t, []).append(i)
    slot_log = {rec[0]: rec for rec in trace.slots}
    if len(slot_log) != len(trace.slots):
        fail("duplicate slot records in trace")

    es = None
    if report.policy == "doic":
        from .engine import expected_service_times

        es = expected_service_times(cfg)
    lam = list(cfg.arrival_rates)
    bounds = list(cfg.delay_bounds)

    fifo: list[list[int]] = [[] for _ in range(n)]
    head = [0] * n
    bits = [0.0] * n
    y = [0.0] * n
    rank = list(range(n)) if report.policy != "static-priority" else list(cfg.priority_order)
    frame_start, idle, busy = 0, 0, 0
    frame_delays: list[list[int]] = [[] for _ in range(n)]
    frame_no = 0
    measured: list[list[int]] = [[] for _ in range(n)]
    q_sum = [0] * n
    arr_meas = [0] * n
    departures: list[tuple[int, int, int]] = []
    frames: list[tuple[int, int, int, list[list[int]]]] = []
    y_seq: list[list[float]] = []
    measure_start = 0 if cfg.warmup_frames == 0 else -1

    for t in range(report.slots):
        counting = frame_no >= cfg.warmup_frames
        for i in arrivals_at.get(t, []):
            if len(fifo[i]) == head[i]:
                bits[i] = L
            fifo[i].append(t)
            if counting:
                arr_meas[i] += 1
        backlog = [len(fifo[i]) - head[i] for i in range(n)]
        if sum(backlog) == 0:
            if t in slot_log:
                fail(f"slot {t}: logged as busy but every buffer is empty")
            idle += 1
            continue
        busy += 1
        if counting:
            for i in range(n):
                q_sum[i] += backlog[i]
        rec = slot_log.get(t)
        if rec is None:
            fail(f"slot {t}: busy slot missing from the log")
            continue
        _, gamma, g, u, su, p, r = rec

        want = _policy_choice(report.policy, rank, backlog, gamma, g, u, cfg, ln_b)
        if want != su:
            fail(f"slot {t}: {report.policy} should pick {want}, log has {su}")
        if su is not None:
            if backlog[su] == 0:
                fail(f"slot {t}: SU {su} scheduled with an empty buffer")
                continue
            if p < 0 or p > cfg.p_max or p * g[su] > cfg.i_inst:
                fail(f"slot {t}: power {p} violates a per-slot cap")
            if not _close(r, math.log1p(p * gamma[su]) / ln_b, rel=1e-15, abs_=0.0):
                fail(f"slot {t}: logged rate {r} inconsistent with power and gain")
            bits[su] -= min(r, bits[su])
            if not bits[su] > 0:
                a = fifo[su][head[su]]
                head[su] += 1
                departures.append((su, a, t))
                w = t - a + 1
                frame_delays[su].append(w)
                if counting:
                    measured[su].append(w)
                bits[su] = L if len(fifo[su]) > head[su] else 0.0
        if all(len(fifo[i]) == head[i] for i in range(n)):
            frames.append((frame_start, idle, busy, frame_delays))
            if report.policy == "doic":
                for i in range(n):
                    aux = bounds[i] if y[i] * lam[i] > cfg.V else 0.0
                    y[i] = max(0.0, y[i] + (float(sum(frame_delays[i])) - aux * len(frame_delays[i])))
                rank = sorted(range(n), key=lambda i: (-(y[i] / es[i]), i))
            y_seq.append(list(y))
            frame_no += 1
            frame_start, idle, busy = t + 1, 0, 0
            frame_delays = [[] for _ in range(n)]
            if frame_no == cfg.warmup_frames:
                measure_start = t + 1

    if departures != list(trace.departures):
        fail(f"departure sequence differs ({len(departures)} replayed vs {len(trace.departures)} logged)")
    logged_frames = [(f.start_slot, f.idle_len, f.busy_len, f.delays) for f in trace.frames[: len(frames)]]
    if logged_frames != frames:
        fail("frame boundaries or per-frame delays differ")
    if len(frames) != report.frames:
        fail(f"frame count {len(frames)} replayed vs {report.frames} reported")
    if len(y_seq) != len(trace.y_after_frame):
        fail("number of virtual-queue updates differs")
    for k, (mine, theirs) in enumerate(zip(y_seq, trace.y_after_frame)):
        if not all(_close(a, float(b), rel=1e-13) for a, b in zip(mine, theirs)):
            fail(f"frame {k}: virtual queues {mine} vs logged {list(theirs)}")
            break
    if y_seq and not all(_close(a, float(b), rel=1e-13) for a, b in zip(y_seq[-1], report.y_final)):
        fail("final virtual queues differ")

    for i in range(n):
        wbar = math.fsum(measured[i]) / len(measured[i]) if measured[i] else math.nan
        if not _close(wbar, float(report.w_bar[i])):
            fail(f"SU {i}: mean delay {wbar} vs reported {report.w_bar[i]}")
        if len(measured[i]) != int(report.packets[i]):
            fail(f"SU {i}: packet count {len(measured[i])} vs reported {report.packets[i]}")
        if arr_meas[i] != int(report.arrivals_measured[i]):
            fail(f"SU {i}: measured arrivals differ")
    span = report.slots - measure_start if measure_start >= 0 else 0
    if measure_start != report.measure_start:
        fail(f"measurement start {measure_start} vs reported {report.measure_start}")
    elif span:
        for i in range(n):
            if not _close(q_sum[i] / span, float(report.q_bar[i])):
                fail(f"SU {i}: mean backlog differs")
    left = sum(len(fifo[i]) - head[i] for i in range(n))
    if left != report.undeparted:
        fail(f"undeparted packets {left} vs reported {report.undeparted}")
    if len(trace.arrivals) != len(departures) + left:
        fail("packet conservation violated")
    return ReplayResult(not bad, bad)


def _policy_choice(policy, rank, backlog, gamma, g, u, cfg, ln_b):
    live = [i for i, b in enumerate(backlog) if b > 0]
    if not live:
        return None
    if policy in ("doic", "static-priority"):
        return next(i for i in rank if backlog[i] > 0)
    if policy == "csma":
        return live[min(int(u * len(live)), len(live) - 1)]
    if policy == "cnc":
        best, best_w = None, -math.inf
        for i in live:
            p = min(cfg.i_inst / g[i], cfg.p_max)
            while p * g[i] > cfg.i_inst:
                p = math.nextafter(p, 0.0)
            w = backlog[i] * (math.log1p(p * gamma[i]) / ln_b)
            if w > best_w:
                best, best_w = i, w
        return best
    raise ValueError(f"no replay rule for policy {policy!r}")


# ------------------------------------------------------- priority search


def phi_value(
    order: Sequence[int],
    y: Sequence[float],
    moments: Sequence[ServiceMoments],
    V: float,
    aux: Sequence[float],
) -> float:
    """Frame objective ``sum (V - Y_i lam_i) r_i + sum Y_i lam_i W_i(order)``."""
    lam = [m.arrival_rate for m in moments]
    w = priority_delays(moments, order)
    first = math.fsum((V - yi * li) * ri for yi, li, ri in zip(y, lam, aux))
    return first + math.fsum(y[i] * lam[i] * w[i] for i in range(len(y)))


@dataclass(frozen=True)
class PriorityCheck:
    cmu_order: tuple[int, ...]
    best_order: tuple[int, ...]
    phi_cmu: float
    phi_best: float

    @property
    def gap(self) -> float:
        """Relative excess of the index-rule order over the true minimiser."""
        return (self.phi_cmu - self.phi_best) / abs(self.phi_best) if self.phi_best else 0.0


def exhaustive_priority_check(
    y: Sequence[float],
    moments: Sequence[ServiceMoments],
    V: float = 1.0,
    aux: Sequence[float] | None = None,
) -> PriorityCheck:
    """Compare the ``Y_i / E[s_i]`` ordering with the best of all ``N!`` lists."""
    n = len(y)
    if n > 7:
        raise ValueError("exhaustive search is limited to N <= 7")
    aux = [0.0] * n if aux is None else list(aux)
    cmu = tuple(sorted(range(n), key=lambda i: (-(y[i] / moments[i].mean_slots), i)))
    best, best_phi = cmu, phi_value(cmu, y, moments, V, aux)
    phi_cmu = best_phi
    for order in itertools.permutations(range(n)):
        val = phi_value(order, y, moments, V, aux)
        if val < best_phi - 1e-12 * abs(best_phi):
            best, best_phi = order, val
    return PriorityCheck(cmu, tuple(best), phi_cmu, best_phi)
