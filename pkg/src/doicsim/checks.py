"""Oracle cross-checks behind ``doicsim verify`` and ``doicsim moments``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .analytics import (
    mean_service_time,
    priority_delays,
    rate_law,
    renewal_mean_service_time,
    second_moment_service_time,
    service_moments,
)
from .config import SimConfig
from .oracle import mc_service_moments, replay_verify

LOW_POWER_REL_SE = 0.01
PRIORITY_TOL = 0.10


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    low_power: bool = False


@dataclass(frozen=True)
class MomentRow:
    su: int
    mean_rate: float
    mean_ratio: float
    mean_renewal: float
    second: float
    mc_mean: float
    mc_mean_se: float
    mc_second: float
    mc_second_se: float

    @property
    def z_mean(self) -> float:
        return (self.mean_renewal - self.mc_mean) / self.mc_mean_se if self.mc_mean_se else math.inf

    @property
    def z_second(self) -> float:
        return (self.second - self.mc_second) / self.mc_second_se if self.mc_second_se else math.inf


def moment_table(cfg: SimConfig, samples: int = 100_000, seed: int = 2024) -> list[MomentRow]:
    """Analytic moments (model log base) against Monte Carlo (engine log base)."""
    rows = []
    for i, link in enumerate(cfg.links):
        law = rate_law(link.gamma, link.g, cfg.power_policy, cfg.grid_size, cfg.model_log_base)
        mc = mc_service_moments(link.gamma, link.g, cfg.power_policy, cfg.packet_bits, samples, seed + i, cfg.log_base)
        rows.append(MomentRow(
            i + 1, law.mean, mean_service_time(law, cfg.packet_bits),
            renewal_mean_service_time(law, cfg.packet_bits), second_moment_service_time(law, cfg.packet_bits),
            mc.mean, mc.se_mean, mc.second, mc.se_second,
        ))
    return rows


def check_service_moments(cfg: SimConfig, samples: int = 100_000, n_se: float = 3.0) -> CheckResult:
    rows = moment_table(cfg, samples)
    worst = max(max(abs(r.z_mean), abs(r.z_second)) for r in rows)
    rel_se = max(r.mc_second_se / r.mc_second for r in rows)
    low = rel_se > LOW_POWER_REL_SE
    detail = f"max |z| = {worst:.2f} over {len(rows)} SUs, MC rel. SE {rel_se:.2%}"
    if low:
        detail += " (low power: band is wide)"
    return CheckResult("service-time moments", worst <= n_se, detail, low)


def check_priority_delay(cfg: SimConfig, horizon: int | None = None, tol: float = PRIORITY_TOL) -> CheckResult:
    """Fixed-priority simulation against the preemptive-resume delay formula."""
    run_cfg = cfg.replace(policy="static-priority", horizon=horizon or max(cfg.horizon, 2_000_000))
    rep = engine.run(run_cfg, strict_audit=False)
    mom = []
    for link, lam in zip(cfg.links, rep.lambda_hat):
        law = rate_law(link.gamma, link.g, cfg.power_policy, cfg.grid_size, cfg.model_log_base)
        mom.append(service_moments(law, cfg.packet_bits, float(lam)))
    pred = priority_delays(mom, run_cfg.priority_order)
    with np.errstate(invalid="ignore"):
        err = np.abs(rep.w_bar - pred) / pred
    worst = float(np.nanmax(err)) if np.any(~np.isnan(err)) else math.nan
    return CheckResult(
        "priority delay formula",
        bool(np.all(err[~np.isnan(err)] <= tol)) and not math.isnan(worst),
        f"max rel. error {worst:.2%} (tol {tol:.0%})",
    )


def check_replay(cfg: SimConfig, horizon: int = 20_000) -> CheckResult:
    failures = []
    for policy in ("doic", "csma", "cnc", "static-priority"):
        rep = engine.run(cfg.replace(policy=policy, horizon=min(cfg.horizon, horizon), warmup_frames=min(cfg.warmup_frames, 5)), full_log=True, strict_audit=False)
        res = replay_verify(rep)
        if not res.passed:
            failures.append(f"{policy}: {res.mismatches[0]}")
    return CheckResult("trace replay", not failures, "; ".join(failures) or "4 policies replayed")


def check_audit(cfg: SimConfig) -> CheckResult:
    bad = {}
    for policy in ("doic", "csma", "cnc", "static-priority"):
        rep = engine.run(cfg.replace(policy=policy), strict_audit=False)
        if rep.audit_violations:
            bad[policy] = rep.audit_violations
    return CheckResult("per-slot constraints", not bad, str(bad) if bad else f"{cfg.horizon} slots x 4 policies, no violations")


def run_checks(cfg: SimConfig, samples: int = 100_000) -> list[CheckResult]:
    return [
        check_service_moments(cfg, samples),
        check_priority_delay(cfg),
        check_replay(cfg),
        check_audit(cfg),
    ]
