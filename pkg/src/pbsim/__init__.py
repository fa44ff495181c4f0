"""Trace-driven simulator of a private cache hierarchy over an NVM last-level
cache fronted by SRAM page buffers."""

from .config import ConfigError, SimConfig, load_config, scheme_config
from .hierarchy import Hierarchy, simulate
from .metrics import EnergyModel, RunMetrics, finalize
from .workload import SynthParams, TraceError, TraceRecord, generate, load_trace

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "SimConfig", "load_config", "scheme_config",
    "Hierarchy", "simulate", "EnergyModel", "RunMetrics", "finalize",
    "SynthParams", "TraceError", "TraceRecord", "generate", "load_trace",
]
