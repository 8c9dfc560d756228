"""Device simulator for VKA kernels."""

from .engine import LaunchSchedule, SimConfig, SimMetrics, decode, launch
from .memory import Buffer, GlobalMemory, atomic_apply

__all__ = ["Buffer", "GlobalMemory", "LaunchSchedule", "SimConfig", "SimMetrics", "atomic_apply", "decode", "launch"]
