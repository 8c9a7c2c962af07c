"""Slot-level simulation of the uplink cell.

Per slot: arrivals at slot start, idle/busy classification, scheduling,
power, bit service, constraint audit, statistics. A frame is one idle period
followed by one busy period; it closes in the slot where the last buffered
packet departs, and the virtual-queue update runs at that point.

Two interchangeable back ends exist. ``python`` drives any
:class:`~doicsim.policy.Scheduler` through its hooks and can keep a full
per-slot trace; ``numba`` runs the shipped policies in compiled code.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .analytics import mean_service_time, rate_law
from .baselines import CncScheduler, CsmaScheduler, StaticPriorityScheduler
from .channel import ChannelDraw, LinkPair
from .config import SimConfig
from .doic import DoicScheduler
from .policy import FrameRecord, Scheduler, SlotDecision
from .power import PowerPolicy
from .queueing import EmptyQueueError, SuState, packet_delay, serve_bits
from .streams import ArrivalSource, ChannelSource

log = logging.getLogger(__name__)

HISTORY_ROWS = 4096


class AuditError(RuntimeError):
    """A slot violated the interference, power or single-transmitter constraint."""


def audit_slot(decision: SlotDecision | np.ndarray, draw: ChannelDraw, i_inst: float, p_max: float) -> bool:
    """True when the slot's powers respect every per-slot constraint."""
    if isinstance(decision, SlotDecision):
        if decision.su is None and decision.power != 0.0:
            return False
        powers = decision.powers(len(draw.g))
    else:
        powers = np.asarray(decision, dtype=float)
    if np.any(powers < 0) or np.any(powers > p_max):
        return False
    if np.count_nonzero(powers) > 1:
        return False
    return float(np.dot(powers, draw.g)) <= i_inst


def delay_statistics(delays: Sequence[Sequence[int]]) -> tuple[np.ndarray, float]:
    """Per-SU mean delay and their sum; SUs without packets give NaN."""
    w = np.array([math.fsum(d) / len(d) if len(d) else math.nan for d in delays])
    return w, float(np.sum(w))


@dataclass
class TraceLog:
    """Everything the replay oracle needs to rebuild a run from scratch."""

    arrivals: list[tuple[int, int]] = field(default_factory=list)
    slots: list[tuple[int, np.ndarray, np.ndarray, float, Optional[int], float, float]] = field(default_factory=list)
    frames: list[FrameRecord] = field(default_factory=list)
    y_after_frame: list[np.ndarray] = field(default_factory=list)
    departures: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class SimReport:
    policy: str
    seed: int
    horizon: int
    slots: int
    frames: int
    warmup_frames: int
    measure_start: int
    w_bar: np.ndarray
    packets: np.ndarray
    arrivals: np.ndarray
    arrivals_measured: np.ndarray
    departures: int
    undeparted: int
    q_bar: np.ndarray
    y_final: np.ndarray
    y_hist_frames: np.ndarray
    y_hist: np.ndarray
    frames_to_stability: Optional[int]
    audit_violations: int
    unstable: bool = False
    trace: Optional[TraceLog] = None
    config: Optional[SimConfig] = None

    @property
    def sum_w(self) -> float:
        return float(np.sum(self.w_bar))

    @property
    def audit_pass(self) -> bool:
        return self.audit_violations == 0

    @property
    def y_over_k_final(self) -> np.ndarray:
        if self.frames == 0:
            return np.full(self.y_final.shape, math.nan)
        return self.y_final / self.frames

    @property
    def measured_slots(self) -> int:
        return self.slots - self.measure_start if self.measure_start >= 0 else 0

    @property
    def lambda_hat(self) -> np.ndarray:
        m = self.measured_slots
        return self.arrivals_measured / m if m else np.full(self.arrivals.shape, math.nan)

    @property
    def littles_law_delay(self) -> np.ndarray:
        """``Q_bar / lambda_hat`` per SU."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.q_bar / self.lambda_hat


@functools.lru_cache(maxsize=256)
def _expected_service(link: LinkPair, policy: PowerPolicy, packet_bits: float, log_base: float, grid: int) -> float:
    return mean_service_time(rate_law(link.gamma, link.g, policy, grid, log_base), packet_bits)


def expected_service_times(cfg: SimConfig) -> tuple[float, ...]:
    """``E[s_i] = L / E[R_i]`` under interference-capped power, one per SU."""
    return tuple(
        _expected_service(link, cfg.power_policy, float(cfg.packet_bits), cfg.model_log_base, cfg.grid_size)
        for link in cfg.links
    )


def build_scheduler(cfg: SimConfig, policy: Optional[str] = None) -> Scheduler:
    name = policy or cfg.policy
    power = cfg.power_policy
    if name == "doic":
        return DoicScheduler(power, cfg.V, expected_service_times(cfg), cfg.arrival_rates, cfg.delay_bounds, cfg.log_base)
    if name == "csma":
        return CsmaScheduler(power, cfg.log_base)
    if name == "cnc":
        return CncScheduler(power, cfg.log_base)
    if name == "static-priority":
        return StaticPriorityScheduler(power, cfg.priority_order, cfg.log_base)
    raise ValueError(f"unknown policy {name!r}")


def run(
    cfg: SimConfig,
    scheduler: Optional[Scheduler] = None,
    backend: str = "auto",
    full_log: bool = False,
    strict_audit: bool = True,
) -> SimReport:
    """Simulate ``cfg.horizon`` slots.

    A custom ``scheduler`` or ``full_log=True`` forces the Python back end.
    With ``strict_audit`` any constraint violation raises :class:`AuditError`.
    """
    if backend not in ("auto", "python", "numba"):
        raise ValueError(f"unknown backend {backend!r}")
    use_python = backend == "python" or full_log or scheduler is not None
    if use_python:
        report = _run_python(cfg, scheduler or build_scheduler(cfg), full_log)
    else:
        report = _run_numba(cfg)
    if strict_audit and report.audit_violations:
        raise AuditError(f"{report.audit_violations} slot(s) violated the per-slot constraints")
    if report.unstable:
        log.warning("run stopped early at slot %d: a queue exceeded %d packets", report.slots, cfg.queue_cap)
    return report


def _run_python(cfg: SimConfig, scheduler: Scheduler, full_log: bool) -> SimReport:
    n = cfg.n_users
    L = float(cfg.packet_bits)
    states = [SuState(lam, d, L) for lam, d in zip(cfg.arrival_rates, cfg.delay_bounds)]
    sources = [iter(ArrivalSource(lam, cfg.seed, i)) for i, lam in enumerate(cfg.arrival_rates)]
    next_arrival = [next(s) for s in sources]
    channel = ChannelSource(cfg.links, cfg.seed)
    trace = TraceLog() if full_log else None

    arrivals = np.zeros(n, dtype=np.int64)
    arrivals_measured = np.zeros(n, dtype=np.int64)
    measured_delays: list[list[int]] = [[] for _ in range(n)]
    qarea = np.zeros(n)
    departures = 0
    violations = 0
    closed = 0
    y_frames: list[int] = []
    y_rows: list[np.ndarray] = []
    first_stable: Optional[int] = None
    measure_start = 0 if cfg.warmup_frames == 0 else -1
    unstable = False

    frame = FrameRecord(0, 0, delays=[[] for _ in range(n)])
    scheduler.on_frame_start(0, states)
    t = 0
    while t < cfg.horizon:
        measuring = frame.index >= cfg.warmup_frames
        for i in range(n):
            if next_arrival[i] == t:
                states[i].enqueue(t)
                next_arrival[i] = next(sources[i])
                arrivals[i] += 1
                if measuring:
                    arrivals_measured[i] += 1
                if trace is not None:
                    trace.arrivals.append((t, i))
        if not any(s.nonempty for s in states):
            frame.idle_len += 1
            t += 1
            continue

        frame.busy_len += 1
        if measuring:
            qarea += [len(s) for s in states]
        draw, u = channel.draw()
        decision = scheduler.on_slot(draw, states, u)
        if not audit_slot(decision, draw, cfg.i_inst, cfg.p_max):
            violations += 1
        if decision.su is not None:
            st = states[decision.su]
            if not st.nonempty:
                raise EmptyQueueError(f"{scheduler.name} scheduled empty SU {decision.su} in slot {t}")
            if serve_bits(st, decision.rate_bits, t):
                d = packet_delay(st.last_departed)
                frame.delays[decision.su].append(d)
                departures += 1
                if measuring:
                    measured_delays[decision.su].append(d)
                if trace is not None:
                    trace.departures.append((decision.su, st.last_departed.arrival_slot, t))
        if trace is not None:
            trace.slots.append((t, draw.gamma, draw.g, u, decision.su, decision.power, decision.rate_bits))

        if any(len(s) > cfg.queue_cap for s in states):
            unstable = True
            t += 1
            break

        if not any(s.nonempty for s in states):
            scheduler.on_frame_end(frame)
            closed += 1
            y = getattr(scheduler, "y", np.zeros(n))
            y_frames.append(closed)
            y_rows.append(np.array(y, dtype=float))
            if first_stable is None and float(np.max(y / closed)) < cfg.stability_threshold:
                first_stable = closed
            if trace is not None:
                trace.frames.append(frame)
                trace.y_after_frame.append(np.array(y, dtype=float))
            frame = FrameRecord(frame.index + 1, t + 1, delays=[[] for _ in range(n)])
            if frame.index == cfg.warmup_frames:
                measure_start = t + 1
            scheduler.on_frame_start(frame.index, states)
        t += 1

    if trace is not None and frame.length:
        trace.frames.append(frame)
    w_bar, _ = delay_statistics(measured_delays)
    slots = t
    span = slots - measure_start if measure_start >= 0 else 0
    return SimReport(
        policy=scheduler.name,
        seed=cfg.seed,
        horizon=cfg.horizon,
        slots=slots,
        frames=closed,
        warmup_frames=cfg.warmup_frames,
        measure_start=measure_start,
        w_bar=w_bar,
        packets=np.array([len(d) for d in measured_delays]),
        arrivals=arrivals,
        arrivals_measured=arrivals_measured,
        departures=departures,
        undeparted=int(sum(len(s) for s in states)),
        q_bar=qarea / span if span else np.full(n, math.nan),
        y_final=y_rows[-1] if y_rows else np.zeros(n),
        y_hist_frames=np.array(y_frames, dtype=np.int64),
        y_hist=np.array(y_rows).reshape(-1, n),
        frames_to_stability=first_stable,
        audit_violations=violations,
        unstable=unstable,
        trace=trace,
        config=cfg,
    )


def _run_numba(cfg: SimConfig) -> SimReport:
    n = cfg.n_users
    code = _kernel.POLICY_CODES[cfg.policy]
    es = np.array(expected_service_times(cfg) if cfg.policy == "doic" else (1.0,) * n)
    st = np.zeros(_kernel.N_STATE, dtype=np.int64)
    st[_kernel.MSTART] = 0 if cfg.warmup_frames == 0 else -1
    st[_kernel.FSTABLE] = -1
    st[_kernel.HSTRIDE] = 1
    cap = 1024
    qbuf = np.zeros((n, cap), dtype=np.int64)
    qhead = np.zeros(n, dtype=np.int64)
    qlen = np.zeros(n, dtype=np.int64)
    hol = np.zeros(n)
    y = np.zeros(n)
    order = np.array(cfg.priority_order if code == _kernel.STATIC else range(n), dtype=np.int64)
    fdsum = np.zeros(n)
    fdcnt = np.zeros(n, dtype=np.int64)
    dsum = np.zeros(n)
    dcnt = np.zeros(n, dtype=np.int64)
    qarea = np.zeros(n)
    arr_total = np.zeros(n, dtype=np.int64)
    arr_meas = np.zeros(n, dtype=np.int64)
    hist_y = np.zeros((HISTORY_ROWS, n))
    hist_k = np.zeros(HISTORY_ROWS, dtype=np.int64)

    sources = [ArrivalSource(lam, cfg.seed, i) for i, lam in enumerate(cfg.arrival_rates)]
    arr = np.stack([s.next_block() for s in sources])
    arr_ptr = np.zeros(n, dtype=np.int64)
    channel = ChannelSource(cfg.links, cfg.seed)
    gam, gg, uu = channel.next_block()

    lam = np.asarray(cfg.arrival_rates, dtype=float)
    bounds = np.asarray(cfg.delay_bounds, dtype=float)
    while True:
        status = _kernel.advance(
            st, qbuf, qhead, qlen, hol, y, order, fdsum, fdcnt,
            dsum, dcnt, qarea, arr_total, arr_meas, hist_y, hist_k,
            arr, arr_ptr, gam, gg, uu,
            code, lam, bounds, es, float(cfg.V), float(cfg.i_inst), float(cfg.p_max),
            float(cfg.log_base), float(cfg.packet_bits),
            int(cfg.horizon), int(cfg.warmup_frames), int(cfg.queue_cap), float(cfg.stability_threshold),
        )
        if status == _kernel.NEED_CHANNEL:
            gam, gg, uu = channel.next_block()
            st[_kernel.CH] = 0
        elif status == _kernel.NEED_ARRIVALS:
            i = int(st[_kernel.AUX])
            arr[i] = sources[i].next_block()
            arr_ptr[i] = 0
        elif status == _kernel.NEED_GROW:
            grown = np.zeros((n, 2 * cap), dtype=np.int64)
            for i in range(n):
                idx = (qhead[i] + np.arange(qlen[i])) % cap
                grown[i, : qlen[i]] = qbuf[i, idx]
            qbuf, cap = grown, 2 * cap
            qhead[:] = 0
        else:
            break

    slots = int(st[_kernel.T])
    measure_start = int(st[_kernel.MSTART])
    span = slots - measure_start if measure_start >= 0 else 0
    with np.errstate(invalid="ignore", divide="ignore"):
        w_bar = np.where(dcnt > 0, dsum / np.maximum(dcnt, 1), math.nan)
    hn = int(st[_kernel.HN])
    fs = int(st[_kernel.FSTABLE])
    return SimReport(
        policy=cfg.policy,
        seed=cfg.seed,
        horizon=cfg.horizon,
        slots=slots,
        frames=int(st[_kernel.CLOSED]),
        warmup_frames=cfg.warmup_frames,
        measure_start=measure_start,
        w_bar=w_bar,
        packets=dcnt.copy(),
        arrivals=arr_total.copy(),
        arrivals_measured=arr_meas.copy(),
        departures=int(st[_kernel.DEPS]),
        undeparted=int(qlen.sum()),
        q_bar=qarea / span if span else np.full(n, math.nan),
        y_final=y.copy(),
        y_hist_frames=hist_k[:hn].copy(),
        y_hist=hist_y[:hn].copy(),
        frames_to_stability=fs if fs >= 0 else None,
        audit_violations=int(st[_kernel.VIOL]),
        unstable=bool(st[_kernel.UNSTABLE]),
        config=cfg,
    )
