"""Frame-based delay-constrained scheduling for underlay cognitive-radio uplinks."""

from __future__ import annotations

from .config import SimConfig, load_config, reference_config
from .engine import SimReport, run

__all__ = ["SimConfig", "SimReport", "load_config", "run", "reference_config"]
__version__ = "0.1.0"
