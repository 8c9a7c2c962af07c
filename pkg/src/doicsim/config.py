"""Experiment description and its TOML file format.

Units: slots for time and delay bounds, bits for packet length, linear
dimensionless values for gains, powers and the interference cap.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .channel import GainDistribution, LinkPair
from .power import PowerPolicy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

POLICIES = ("doic", "csma", "cnc", "static-priority")
SWEEP_VARS = ("none", "lambda", "load", "V", "d5")

# Reference five-user system. DEFAULT_BOUND and D5_LOW are local choices, not published values
REF_N = 5
REF_I_INST = 20.0
REF_P_MAX = 100.0
REF_V = 100.0
REF_GAMMA_MEAN = 1.0
REF_G_MEAN = (0.1, 0.1, 0.1, 0.1, 0.4)
REF_D5 = 45.0
REF_PACKET_BITS = 1000
DEFAULT_BOUND = 100.0
D5_LOW = 25.0
DESK_PACKET_BITS = 100


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    var: str = "none"
    values: tuple[float, ...] = ()
    policies: tuple[str, ...] = ()
    d5_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if any(not d > 0 for d in self.d5_values):
            raise ConfigError("sweep.d5_values must be positive")
        if self.var not in SWEEP_VARS:
            raise ConfigError(f"sweep.var must be one of {SWEEP_VARS}, got {self.var!r}")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r} in sweep.policies")


@dataclass(frozen=True)
class SimConfig:
    arrival_rates: tuple[float, ...]
    delay_bounds: tuple[float, ...]
    links: tuple[LinkPair, ...]
    i_inst: float = REF_I_INST
    p_max: float = REF_P_MAX
    V: float = REF_V
    packet_bits: float = DESK_PACKET_BITS
    horizon: int = 1_000_000
    warmup_frames: int = 100
    seed: int = 0
    policy: str = "doic"
    log_base: float = 2.0
    analytics_log_base: Optional[float] = None
    static_order: tuple[int, ...] = ()
    queue_cap: int = 1_000_000
    grid_size: int = 512
    stability_threshold: float = 0.05
    replications: int = 1
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def __post_init__(self) -> None:
        n = len(self.arrival_rates)
        if n < 1:
            raise ConfigError("need at least one SU")
        if len(self.delay_bounds) != n or len(self.links) != n:
            raise ConfigError("arrival_rates, delay_bounds and links must have one entry per SU")
        if any(not 0.0 <= lam < 1.0 for lam in self.arrival_rates):
            raise ConfigError("arrival rates must lie in [0, 1)")
        if any(not d > 0 for d in self.delay_bounds):
            raise ConfigError("delay bounds must be positive")
        if self.horizon < 1 or self.replications < 1 or self.warmup_frames < 0:
            raise ConfigError("horizon and replications must be >= 1, warmup_frames >= 0")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not (self.V > 0 and self.packet_bits > 0 and self.i_inst > 0 and self.p_max > 0):
            raise ConfigError("V, packet_bits, i_inst and p_max must be positive")
        if self.log_base <= 1.0:
            raise ConfigError("log_base must exceed 1")
        if self.static_order and sorted(self.static_order) != list(range(n)):
            raise ConfigError("static_order must be a permutation of SU indices")

    @property
    def n_users(self) -> int:
        return len(self.arrival_rates)

    @property
    def power_policy(self) -> PowerPolicy:
        return PowerPolicy(self.p_max, self.i_inst)

    @property
    def priority_order(self) -> tuple[int, ...]:
        return self.static_order or tuple(range(self.n_users))

    @property
    def model_log_base(self) -> float:
        """Log base used by the analytics (normally the engine's)."""
        return self.analytics_log_base or self.log_base

    def replace(self, **changes: Any) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def with_lambda(self, lam: float) -> SimConfig:
        """Apply the ``lambda_i = i * lambda`` rule."""
        return self.replace(arrival_rates=tuple(lam * (i + 1) for i in range(self.n_users)))


def reference_links(n: int = REF_N, g_means: Sequence[float] = REF_G_MEAN) -> tuple[LinkPair, ...]:
    gam = GainDistribution.truncated_exponential(REF_GAMMA_MEAN)
    return tuple(LinkPair(gam, GainDistribution.truncated_exponential(g_means[i])) for i in range(n))


def reference_config(lam: float = 1e-3, **overrides: Any) -> SimConfig:
    """Reference five-user system with ``lambda_i = i * lam`` at desk-scale packet length."""
    bounds = (DEFAULT_BOUND,) * (REF_N - 1) + (REF_D5,)
    base = SimConfig(
        arrival_rates=tuple(lam * (i + 1) for i in range(REF_N)),
        delay_bounds=bounds,
        links=reference_links(),
    )
    return base.replace(**overrides) if overrides else base


def _dist_from_toml(entry: Any, where: str) -> GainDistribution:
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = entry.get("kind", "truncated-exponential")
    try:
        if kind == "truncated-exponential":
            return GainDistribution.truncated_exponential(entry["mean"], entry.get("max"))
        if kind == "constant":
            return GainDistribution.constant(entry["value"] if "value" in entry else entry["mean"])
        if kind == "discrete-table":
            return GainDistribution.table(list(zip(entry["support"], entry["probs"])))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _per_user(value: Any, n: int, where: str) -> list:
    if isinstance(value, list):
        if len(value) != n:
            raise ConfigError(f"{where}: expected {n} entries, got {len(value)}")
        return value
    return [value] * n


def config_from_dict(raw: dict[str, Any]) -> SimConfig:
    """Build a config from parsed TOML; unspecified keys take the reference defaults."""
    raw = dict(raw)
    users = dict(raw.pop("users", {}))
    sweep = dict(raw.pop("sweep", {}))
    n = int(users.pop("n", REF_N))

    if "lambdas" in users:
        rates = [float(x) for x in _per_user(users.pop("lambdas"), n, "users.lambdas")]
    else:
        lam = float(users.pop("lambda", 1e-3))
        rates = [lam * (i + 1) for i in range(n)]
    default_bounds = [DEFAULT_BOUND] * (n - 1) + [REF_D5]
    bounds = [float(x) for x in _per_user(users.pop("delay_bounds", default_bounds), n, "users.delay_bounds")]

    if "gamma" in users or "g" in users:
        g_default = [{"mean": m} for m in REF_G_MEAN] if n == REF_N else {"mean": 0.1}
        gam = _per_user(users.pop("gamma", {"mean": REF_GAMMA_MEAN}), n, "users.gamma")
        gg = _per_user(users.pop("g", g_default), n, "users.g")
        links = tuple(
            LinkPair(_dist_from_toml(a, f"users.gamma[{i}]"), _dist_from_toml(b, f"users.g[{i}]"))
            for i, (a, b) in enumerate(zip(gam, gg))
        )
    else:
        if n != REF_N:
            raise ConfigError("users.gamma / users.g are required when n differs from 5")
        links = reference_links()
    if users:
        raise ConfigError(f"unknown keys in [users]: {sorted(users)}")

    fields = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "static_order" in raw:
        raw["static_order"] = tuple(int(i) for i in raw["static_order"])
    try:
        sweep_spec = SweepSpec(
            str(sweep.pop("var", "none")),
            tuple(float(v) for v in sweep.pop("values", [])),
            tuple(str(p) for p in sweep.pop("policies", [])),
            tuple(float(v) for v in sweep.pop("d5_values", [])),
        )
        if sweep:
            raise ConfigError(f"unknown keys in [sweep]: {sorted(sweep)}")
        return SimConfig(
            arrival_rates=tuple(rates),
            delay_bounds=tuple(bounds),
            links=links,
            sweep=sweep_spec,
            **raw,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> SimConfig:
    """Parse a TOML config file; syntax errors carry line/column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


def preset(name: str, base: SimConfig | None = None) -> SimConfig:
    """Sweep presets for the per-SU delay (fig3) and policy comparison (fig4) experiments."""
    base = base or reference_config()
    loads = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    if name == "fig3":
        return base.replace(policy="doic", horizon=max(base.horizon, 20_000_000), sweep=SweepSpec("load", loads[:8], ("doic",), (D5_LOW, REF_D5)))
    if name == "fig4":
        return base.replace(horizon=max(base.horizon, 10_000_000), sweep=SweepSpec("load", loads, ("doic", "csma", "cnc")))
    raise ConfigError(f"unknown preset {name!r}")
