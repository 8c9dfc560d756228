import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jaccsim.frontend import parse_kernel
from jaccsim.lower import lower_to_lir
from jaccsim.memory.schema import kernel_schemas
from jaccsim.passes.pipeline import DEFAULT_CONFIG, compile_kernel, prepare_hir
from jaccsim.sim import GlobalMemory, LaunchSchedule, SimConfig, launch

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ONE_D = "@jacc(iterationSpace=ONE_DIMENSION)\n"


def unit_of(src):
    return parse_kernel(src, "<test>")


def compiled(src, name=None, cfg=DEFAULT_CONFIG):
    u = unit_of(src)
    k = u.kernel(name) if name else u.kernels[0]
    return compile_kernel(k, u, cfg)


def lowered(src, name=None, cfg=DEFAULT_CONFIG):
    """LIR straight out of lowering, before any LIR pass."""
    u = unit_of(src)
    k = u.kernel(name) if name else u.kernels[0]
    prepared = prepare_hir(k, u, cfg)
    return lower_to_lir(prepared, kernel_schemas(prepared, u), u)


def run_program(program, global_size, group_size, arrays=None, scalars=None, seed=0, workers=1, wave_lanes=8192):
    """Launch on a fresh memory; returns (host copies of the buffers, metrics)."""
    mem = GlobalMemory()
    args, bufs = {}, {}
    for name, arr in (arrays or {}).items():
        from jaccsim.types import dtype_to_scalar

        b = mem.alloc(arr.nbytes, dtype_to_scalar(arr.dtype), len(arr))
        mem.write(b, arr)
        args[name] = b
        bufs[name] = (b, arr.dtype)
    args.update(scalars or {})
    m = launch(program, LaunchSchedule(global_size, group_size), args, mem, seed, SimConfig(workers=workers, wave_lanes=wave_lanes))
    out = {n: np.frombuffer(mem.read(b), dtype=dt).copy() for n, (b, dt) in bufs.items()}
    return out, m


@pytest.fixture
def vadd_src():
    return ONE_D + """kernel vadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
  for i in 0..len(c) {
    c[i] = a[i] + b[i];
  }
}
"""


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
