"""Command-line entry point: ``doicsim simulate | verify | moments``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import POLICIES, ConfigError, SimConfig, load_config, preset, reference_config

log = logging.getLogger("doicsim")


def _config(path: Optional[str]) -> SimConfig:
    return load_config(path) if path else reference_config()


def cmd_simulate(args: argparse.Namespace) -> int:
    from .experiment import run_experiment

    cfg = _config(args.config)
    if args.preset:
        cfg = preset(args.preset, cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.policy:
        cfg = cfg.replace(policy=args.policy, sweep=cfg.sweep.__class__(cfg.sweep.var, cfg.sweep.values, (), cfg.sweep.d5_values))
    result = run_experiment(cfg, args.out)
    for name, path in result.files.items():
        print(f"{name:9s} {path}")
    if not result.audit_pass:
        print("audit FAILED: at least one slot violated a per-slot constraint", file=sys.stderr)
        return 3
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .checks import run_checks

    results = run_checks(_config(args.config), args.samples)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def cmd_moments(args: argparse.Namespace) -> int:
    from .checks import moment_table

    cfg = _config(args.config)
    print(f"L = {cfg.packet_bits:g} bits, MC samples = {args.samples}")
    print(f"{'su':>3} {'E[R]':>9} {'L/E[R]':>9} {'E[s]':>9} {'MC E[s]':>16} {'E[s^2]':>11} {'MC E[s^2]':>20}")
    for r in moment_table(cfg, args.samples):
        print(
            f"{r.su:>3} {r.mean_rate:9.4f} {r.mean_ratio:9.4f} {r.mean_renewal:9.4f} "
            f"{r.mc_mean:9.4f}±{r.mc_mean_se:<6.4f} {r.second:11.3f} {r.mc_second:11.3f}±{r.mc_second_se:<8.3f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="doicsim", description="Delay-constrained underlay uplink scheduling simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configured sweep and write CSV tables")
    sim.add_argument("--config", help="TOML config (defaults to the built-in five-user system)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--preset", choices=("fig3", "fig4"))
    sim.add_argument("--seed", type=int)
    sim.add_argument("--policy", choices=POLICIES, help="override the policy (drops any policy sweep)")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run the oracle cross-checks")
    ver.add_argument("--config")
    ver.add_argument("--samples", type=int, default=100_000, help="Monte Carlo packets per SU")
    ver.set_defaults(func=cmd_verify)

    mom = sub.add_parser("moments", help="print service-time moments next to Monte Carlo estimates")
    mom.add_argument("--config")
    mom.add_argument("--samples", type=int, default=100_000)
    mom.set_defaults(func=cmd_moments)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
