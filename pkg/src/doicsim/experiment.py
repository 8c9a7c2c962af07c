"""Sweep expansion, parallel execution and CSV output."""

from __future__ import annotations

import csv
import functools
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import engine
from .analytics import ServiceMoments, delay_targets_feasible, rate_law, service_moments, total_load
from .config import D5_LOW, DEFAULT_BOUND, SimConfig

WORKERS_ENV = "DOICSIM_WORKERS"

ROW_COLUMNS = (
    "policy", "d5", "sweep_var", "value", "replication", "seed", "su", "lambda",
    "W_bar", "sum_W", "Y_over_K_final", "packets", "frames", "undeparted", "audit_pass",
)
SUMMARY_COLUMNS = (
    "policy", "d5", "sweep_var", "value", "su", "lambda", "load", "feasible", "replications",
    "W_bar_mean", "W_bar_se", "sum_W_mean", "sum_W_se", "Y_over_K_mean", "packets_mean", "audit_pass",
)


@dataclass(frozen=True)
class Point:
    policy: str
    d5: float
    sweep_var: str
    value: float
    cfg: SimConfig


@dataclass(frozen=True)
class Job:
    point: int
    replication: int
    cfg: SimConfig


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


@functools.lru_cache(maxsize=64)
def _moments_cached(cfg: SimConfig) -> tuple[ServiceMoments, ...]:
    out = []
    for link, lam in zip(cfg.links, cfg.arrival_rates):
        law = rate_law(link.gamma, link.g, cfg.power_policy, cfg.grid_size, cfg.model_log_base)
        out.append(service_moments(law, cfg.packet_bits, lam))
    return tuple(out)


def moments_for(cfg: SimConfig) -> tuple[ServiceMoments, ...]:
    return _moments_cached(cfg.replace(sweep=type(cfg.sweep)(), seed=0, policy="doic", horizon=1))


def scale_to_load(cfg: SimConfig, load: float) -> SimConfig:
    """Scale every arrival rate by one factor so the total load hits ``load``."""
    current = math.fsum(lam * s for lam, s in zip(cfg.arrival_rates, engine.expected_service_times(cfg)))
    if current <= 0:
        raise ValueError("cannot scale a configuration with zero arrivals to a load")
    k = load / current
    return cfg.replace(arrival_rates=tuple(lam * k for lam in cfg.arrival_rates))


def with_d5(cfg: SimConfig, d5: float) -> SimConfig:
    return cfg.replace(delay_bounds=cfg.delay_bounds[:-1] + (float(d5),))


def expand(cfg: SimConfig) -> list[Point]:
    """Cartesian product policies x d5 values x sweep values, in a fixed order."""
    sw = cfg.sweep
    policies = sw.policies or (cfg.policy,)
    d5s = sw.d5_values or (cfg.delay_bounds[-1],)
    values = sw.values if sw.var != "none" and sw.values else (math.nan,)
    var = sw.var if sw.values else "none"
    points = []
    for policy in policies:
        for d5 in d5s:
            base = with_d5(cfg, d5).replace(policy=policy)
            for v in values:
                if var == "lambda":
                    pc = base.with_lambda(v)
                elif var == "load":
                    pc = scale_to_load(base, v)
                elif var == "V":
                    pc = base.replace(V=v)
                elif var == "d5":
                    pc = with_d5(base, v)
                else:
                    pc = base
                points.append(Point(policy, float(pc.delay_bounds[-1]), var, v, pc))
    return points


def run_job(job: Job) -> engine.SimReport:
    return engine.run(job.cfg, strict_audit=False)


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_points(points: Sequence[Point], replications: int, workers: int | None = None) -> list[list[engine.SimReport]]:
    """Reports indexed ``[point][replication]``; replication ``r`` uses seed ``cfg.seed + r``
    at every point so comparisons across points are paired."""
    jobs = [Job(p, r, pt.cfg.replace(seed=pt.cfg.seed + r)) for p, pt in enumerate(points) for r in range(replications)]
    workers = workers or _worker_count()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_job, jobs))
    else:
        reports = [run_job(j) for j in jobs]
    out: list[list[engine.SimReport]] = [[] for _ in points]
    for job, rep in zip(jobs, reports):
        out[job.point].append(rep)
    return out


def _se(xs: np.ndarray) -> float:
    xs = xs[~np.isnan(xs)]
    return float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else math.nan


def _nanmean(xs: np.ndarray) -> float:
    xs = xs[~np.isnan(xs)]
    return float(xs.mean()) if xs.size else math.nan


def result_rows(points: Sequence[Point], reports: Sequence[Sequence[engine.SimReport]]) -> list[list[str]]:
    rows = []
    for pt, reps in zip(points, reports):
        for r, rep in enumerate(reps):
            yk = rep.y_over_k_final
            for i in range(pt.cfg.n_users):
                rows.append([
                    pt.policy, _fmt(pt.d5), pt.sweep_var, _fmt(pt.value), _fmt(r), _fmt(rep.seed), _fmt(i + 1),
                    _fmt(pt.cfg.arrival_rates[i]), _fmt(rep.w_bar[i]), _fmt(rep.sum_w), _fmt(yk[i]),
                    _fmt(rep.packets[i]), _fmt(rep.frames), _fmt(rep.undeparted), _fmt(rep.audit_pass),
                ])
    return rows


def summary_rows(points: Sequence[Point], reports: Sequence[Sequence[engine.SimReport]]) -> list[list[str]]:
    rows = []
    for pt, reps in zip(points, reports):
        mom = moments_for(pt.cfg)
        load = total_load(mom)
        feasible = delay_targets_feasible(mom, pt.cfg.delay_bounds)
        sums = np.array([r.sum_w for r in reps])
        ok = all(r.audit_pass for r in reps)
        for i in range(pt.cfg.n_users):
            w = np.array([r.w_bar[i] for r in reps])
            rows.append([
                pt.policy, _fmt(pt.d5), pt.sweep_var, _fmt(pt.value), _fmt(i + 1), _fmt(pt.cfg.arrival_rates[i]),
                _fmt(load), _fmt(feasible), _fmt(len(reps)), _fmt(_nanmean(w)), _fmt(_se(w)),
                _fmt(_nanmean(sums)), _fmt(_se(sums)),
                _fmt(_nanmean(np.array([r.y_over_k_final[i] for r in reps]))),
                _fmt(float(np.mean([r.packets[i] for r in reps]))), _fmt(ok),
            ])
    return rows


def metadata_rows(cfg: SimConfig) -> list[list[str]]:
    """Key/value/provenance triples; ``assumed`` marks values chosen here
    because the reference parameter set leaves them open."""
    bounds = cfg.delay_bounds
    rows = [
        ["n_users", _fmt(cfg.n_users), "reference"],
        ["i_inst", _fmt(cfg.i_inst), "reference"],
        ["p_max", _fmt(cfg.p_max), "reference"],
        ["V", _fmt(cfg.V), "reference"],
        ["packet_bits", _fmt(cfg.packet_bits), "desk-scale" if cfg.packet_bits != 1000 else "reference"],
        ["horizon", _fmt(cfg.horizon), "run"],
        ["warmup_frames", _fmt(cfg.warmup_frames), "run"],
        ["seed", _fmt(cfg.seed), "run"],
        ["replications", _fmt(cfg.replications), "run"],
        ["log_base", _fmt(cfg.log_base), "reference"],
    ]
    for i, d in enumerate(bounds[:-1]):
        rows.append([f"d_{i + 1}", _fmt(d), "assumed" if d == DEFAULT_BOUND else "user"])
    rows.append([f"d_{len(bounds)}", _fmt(bounds[-1]), "reference" if bounds[-1] == 45 else "user"])
    for d5 in cfg.sweep.d5_values:
        rows.append(["d5_sweep_value", _fmt(d5), "assumed" if d5 == D5_LOW else "reference" if d5 == 45 else "user"])
    for i, lam in enumerate(cfg.arrival_rates):
        rows.append([f"base_lambda_{i + 1}", _fmt(lam), "user"])
    return rows


def _csv_bytes(header: Iterable[str], rows: Iterable[Sequence[str]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


@dataclass
class ExperimentResult:
    points: list[Point]
    reports: list[list[engine.SimReport]]
    files: dict[str, Path]

    @property
    def audit_pass(self) -> bool:
        return all(r.audit_pass for reps in self.reports for r in reps)


def run_experiment(cfg: SimConfig, out_dir: str | Path, workers: int | None = None) -> ExperimentResult:
    """Run every sweep point and write ``results.csv``, ``summary.csv`` and ``metadata.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = expand(cfg)
    reports = run_points(points, cfg.replications, workers)
    files = {
        "results": out / "results.csv",
        "summary": out / "summary.csv",
        "metadata": out / "metadata.csv",
    }
    files["results"].write_bytes(_csv_bytes(ROW_COLUMNS, result_rows(points, reports)))
    files["summary"].write_bytes(_csv_bytes(SUMMARY_COLUMNS, summary_rows(points, reports)))
    files["metadata"].write_bytes(_csv_bytes(("key", "value", "provenance"), metadata_rows(cfg)))
    return ExperimentResult(points, reports, files)
