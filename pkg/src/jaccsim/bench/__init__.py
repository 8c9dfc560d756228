from .kernels import library
from .report import emit_report
from .suite import NAMES, SPECS, Report, interpret_graph, run_benchmark

__all__ = ["NAMES", "SPECS", "Report", "emit_report", "interpret_graph", "library", "run_benchmark"]
