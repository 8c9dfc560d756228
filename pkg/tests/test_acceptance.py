"""End-to-end acceptance checks.

Each test prints one line, ``[PASS]`` or ``[FAIL]``, naming its criterion.
The lines are repeated in the pytest terminal summary. Run this file directly
with ``python3 tests/test_acceptance.py`` for just the eight lines.
"""

import io
import re
import time

import numpy as np
import pytest

from jaccsim.bench import NAMES, SPECS, run_benchmark
from jaccsim.bench.kernels import BENCHMARK_KERNELS, library
from jaccsim.bench.randgen import random_dag, random_inputs, random_kernel, random_launch
from jaccsim.bench.suite import (
    BenchCase,
    _copy,
    build_case,
    case_graph,
    case_outputs,
    interpret_graph,
    relative_error,
    simulate_kernel,
    within,
)
from jaccsim.cli import main
from jaccsim.errors import BoundsTrap
from jaccsim.objects import Record
from jaccsim.passes.pipeline import DEFAULT_CONFIG, TOGGLEABLE, compile_source
from jaccsim.runtime import GraphState, Runtime, Task, TaskGraph

from conftest import unit_of

RESULTS = []

# big enough for several waves per launch, small enough for 60 runs each
MEDIUM = {"vadd": 16384, "reduction": 16384, "histogram": 16384, "matmul": 32, "spmv": 174, "conv": 64, "blackscholes": 16384, "correlation": 256}
SMALL = {"vadd": 4096, "reduction": 4096, "histogram": 4096, "matmul": 16, "spmv": 64, "conv": 32, "blackscholes": 4096, "correlation": 128}


def verdict(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def _integer(name):
    case = build_case(name, SMALL[name])
    return case.integer


def _agree(name, got, want, integer):
    tol = SPECS[name].tolerance
    return all(within(got[k], want[k], tol, integer.get(k, False)) for k in want)


# -- 1 ----------------------------------------------------------------------------


def test_oracle_equivalence():
    t0 = time.perf_counter()
    bad = []
    for name in NAMES:
        r = run_benchmark(name)
        if not r.passed:
            bad.append(f"{name}: {'; '.join(r.failures)}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 60:
        bad.append(f"took {elapsed:.1f}s")
    verdict(1, "simulator equals interpreter on all 8 benchmarks at desk scale", not bad, "; ".join(bad) or f"{elapsed:.1f}s")


# -- 2 ----------------------------------------------------------------------------


def test_schedule_invariance():
    bad = []
    runs = 0
    for name in NAMES:
        integer = _integer(name)
        base = run_benchmark(name, MEDIUM[name], iterations=1, seed=0, workers=1, check_interpreter=False)
        for sched in range(20):
            for workers in (1, 2, 8):
                r = run_benchmark(name, MEDIUM[name], iterations=1, workers=workers, check_interpreter=False, schedule_seed=sched)
                runs += 1
                if not _agree(name, r.outputs, base.outputs, integer):
                    bad.append(f"{name} seed={sched} workers={workers}")
    verdict(2, "outputs invariant over 20 group-order seeds x workers {1,2,8}", not bad, ", ".join(bad[:5]) or f"{runs} runs")


# -- 3 ----------------------------------------------------------------------------


def _bench_outputs(name, passes):
    return run_benchmark(name, SMALL[name], iterations=1, passes=passes, check_interpreter=False).outputs


def test_pass_soundness():
    lib = library()
    bad = []
    for p in TOGGLEABLE:
        off_cfg = DEFAULT_CONFIG.without(p)
        for name in NAMES:
            on, off = _bench_outputs(name, DEFAULT_CONFIG), _bench_outputs(name, off_cfg)
            if not _agree(name, on, off, _integer(name)):
                bad.append(f"{p}: {name} output changed")
        for seed in range(100):
            u, kname = random_kernel(seed)
            args = random_inputs(seed)
            g, l = random_launch(seed)
            on = simulate_kernel(u, kname, args, g, l)
            off = simulate_kernel(u, kname, args, g, l, passes=off_cfg)
            if any(on[k].tobytes() != off[k].tobytes() for k in ("o", "p")):
                bad.append(f"{p}: random kernel {seed} output changed")
            if p in ("dce", "cse", "predicate"):
                n_on = compile_source(u, kname).lir.emitted_count()
                n_off = compile_source(u, kname, off_cfg).lir.emitted_count()
                if n_on > n_off:
                    bad.append(f"{p}: random kernel {seed} grew {n_off} -> {n_on}")
        if p in ("dce", "cse", "predicate"):
            for kname in BENCHMARK_KERNELS:
                n_on = compile_source(lib, kname).lir.emitted_count()
                n_off = compile_source(lib, kname, off_cfg).lir.emitted_count()
                if n_on > n_off:
                    bad.append(f"{p}: {kname} grew {n_off} -> {n_on}")
    with_pred = compile_source(lib, "conv2d").lir.cond_branch_count()
    without = compile_source(lib, "conv2d", DEFAULT_CONFIG.without("predicate")).lir.cond_branch_count()
    if without - with_pred < 1:
        bad.append(f"conv2d branches {without} -> {with_pred}")
    verdict(
        3,
        "8 pass toggles keep outputs; dce/cse/predicate never grow code; predication removes conv branches",
        not bad,
        "; ".join(bad[:5]) or f"conv2d branches {without} -> {with_pred}",
    )


# -- 4 ----------------------------------------------------------------------------

CHAIN = """buffer A f32 1024 init=iota
task scale dev=0 global=1024 group=128 args=A:readwrite,2.0
task scale dev=0 global=1024 group=128 args=A:readwrite,0.5
"""


def _cli(*argv):
    out = io.StringIO()
    assert main(list(argv), out) == 0
    return out.getvalue()


def _copies(dump, obj):
    lines = dump.splitlines()
    return (
        sum(1 for l in lines if re.match(rf"\d+: COPY_IN\b.*\b{obj}\b", l)),
        sum(1 for l in lines if re.match(rf"\d+: COPY_OUT\b.*\b{obj}\b", l)),
    )


def test_transfer_elimination(tmp_path):
    path = tmp_path / "chain.graph"
    path.write_text(CHAIN)
    naive = _copies(_cli("graph", str(path), "--dump-actions", "--no-optimize"), "A")
    opt = _copies(_cli("graph", str(path), "--dump-actions"), "A")
    bad = []
    if naive != (2, 2) or opt != (1, 1):
        bad.append(f"naive {naive}, optimized {opt}")
    multi = [n for n in NAMES if len(build_case(n, SMALL[n]).tasks) > 1]
    sizes = []
    for name in multi:
        default = run_benchmark(name, iterations=1, check_interpreter=False).bytes_moved
        full = run_benchmark(name, iterations=1, check_interpreter=False, full_transfers=True).bytes_moved
        sizes.append(f"{name} {default}<{full}")
        if not full > default:
            bad.append(f"{name}: full {full} <= default {default}")
    if not multi:
        bad.append("no multi-task benchmark")
    verdict(4, "chain keeps A resident (1+1 vs 2+2 copies); full transfers move more bytes", not bad, "; ".join(bad) or ", ".join(sizes))


# -- 5 ----------------------------------------------------------------------------


def _shift(full):
    u = library()
    off = Record.zeros("Offset", u.flattened_fields("Offset"), lo=-1.0, hi=1.0, bias=0.75, count=9)
    y = np.arange(256, dtype=np.float32)
    rt = Runtime(full_transfers=full)
    g = TaskGraph(rt)
    name = rt.register(off, "off")
    g.execute_task_on(Task(u, "shift", {"off": off, "y": y}, 256, 64))
    g.execute()
    return rt.log.bytes_for(name, "in"), y


def test_partial_serialization():
    fields = library().flattened_fields("Offset")
    tracked_in, y_tracked = _shift(False)
    full_in, y_full = _shift(True)
    ok = len(fields) == 4 and tracked_in == 4 and full_in > 4 and y_tracked.tobytes() == y_full.tobytes()
    verdict(5, "reading 1 of 4 fields moves 4 bytes in; full transfer gives identical outputs", ok, f"{len(fields)} fields, tracked {tracked_in} B, full {full_in} B")


# -- 6 ----------------------------------------------------------------------------

TRAPPING = """@jacc(iterationSpace=ONE_DIMENSION, exceptions=true)
kernel gather(@read a: f32[], @read idx: i32[], @write o: f32[]) {
  for i in 0..len(o) {
    o[i] = a[idx[i]];
  }
}
"""


def test_graph_atomicity():
    lib = library()
    u = unit_of(TRAPPING)
    x = np.arange(128, dtype=np.float32)
    idx = np.arange(128, dtype=np.int32)[::-1].copy()
    idx[77] = 128
    o = np.full(128, -3.0, np.float32)
    off = Record.zeros("Offset", lib.flattened_fields("Offset"), lo=0.0, hi=1.0, bias=2.0, count=1)
    g = TaskGraph(Runtime())
    g.execute_task_on(Task(lib, "scale", {"x": x, "alpha": 4.0}, 128))
    g.execute_task_on(Task(lib, "shift", {"off": off, "y": o}, 128))
    g.execute_task_on(Task(u, "gather", {"a": x, "idx": idx, "o": o}, 128, name="gather"))
    before = [x.tobytes(), idx.tobytes(), o.tobytes(), _copy(off)]
    message = ""
    try:
        g.execute()
    except BoundsTrap as e:
        message = str(e)
    same = [x.tobytes(), idx.tobytes(), o.tobytes()] == before[:3] and off == before[3]
    named = "[task 2 (gather)]" in message
    verdict(6, "trapping graph leaves host objects untouched and names the task", same and named and g.state is GraphState.FAILED, message or "no trap raised")


# -- 7 ----------------------------------------------------------------------------


def _fresh(case):
    return {k: _copy(v) for k, v in case.buffers.items()}


def test_serializability():
    bad = []
    for seed in range(50):
        case = random_dag(seed)
        assert 3 <= len(case.tasks) <= 8
        graph_case = BenchCase(case.name, _fresh(case), case.tasks, case.outputs)
        g = case_graph(graph_case, Runtime(devices=2))
        g.execute()
        got = case_outputs(graph_case, g)
        # one graph per task, in insertion order, on the same host buffers,
        # with every object moved whole both ways
        serial = _fresh(case)
        for t in case.tasks:
            single = BenchCase(case.name, serial, [t], case.outputs)
            case_graph(single, Runtime(devices=2, optimize=False, full_transfers=True)).execute()
        for k in case.outputs:
            if got[k].tobytes() != np.asarray(serial[k]).tobytes():
                bad.append(f"dag {seed}: {k}")
    verdict(7, "50 random task DAGs match one-by-one insertion-order execution", not bad, ", ".join(bad[:5]) or "50 DAGs")


# -- 8 ----------------------------------------------------------------------------


def test_fallback():
    lib = library()
    bad = []
    checked = []
    for name in NAMES:
        case = build_case(name, SMALL[name])
        integer = case.integer
        sim_case = BenchCase(case.name, _fresh(case), case.tasks, case.outputs)
        g = case_graph(sim_case, Runtime())
        g.execute()
        got = case_outputs(sim_case, g)
        interp_case = BenchCase(case.name, _fresh(case), case.tasks, case.outputs)
        g2 = case_graph(interp_case, Runtime())
        want = case_outputs(interp_case, g2, interpret_graph(g2))
        for t in case.tasks:
            if lib.kernel(t.kernel).jacc.iteration_space.name != "NONE":
                checked.append(t.kernel)
        for k in case.outputs:
            if not within(got[k], want[k], SPECS[name].tolerance, integer.get(k, False)):
                bad.append(f"{name}.{k} error {relative_error(got[k], want[k]):.3g}")
    ok = not bad and set(BENCHMARK_KERNELS) <= set(checked)
    verdict(8, "serial interpretation of every implicitly parallel kernel matches the simulator", ok, "; ".join(bad) or f"{len(set(checked))} kernels")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
