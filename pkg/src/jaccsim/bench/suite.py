"""The eight benchmarks: data builders, numpy references and the runner."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import InvalidArgument
from ..interp import HostEnv, interpret
from ..objects import Record
from ..passes.pipeline import DEFAULT_CONFIG, PassConfig
from ..runtime.graph import Runtime, Task, TaskGraph
from ..sim.engine import SimConfig, SimMetrics
from ..types import ArrayType
from .kernels import library
from .mtx import banded_csr, read_mtx


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    desk_size: int
    full_size: int
    unit: str  # what `size` counts
    tolerance: float  # relative, per element; 0 means bit-exact
    iterations: int = 3


SPECS = {
    s.name: s
    for s in (
        BenchmarkSpec("vadd", 65536, 16777216, "elements", 1e-5),
        BenchmarkSpec("reduction", 65536, 33554432, "elements", 1e-4),
        BenchmarkSpec("histogram", 65536, 16777216, "values", 0.0),
        BenchmarkSpec("matmul", 128, 1024, "matrix side", 1e-5),
        BenchmarkSpec("spmv", 174, 44609, "rows", 1e-5),
        BenchmarkSpec("conv", 256, 2048, "image side", 1e-5),
        BenchmarkSpec("blackscholes", 65536, 16777216, "options", 1e-5),
        BenchmarkSpec("correlation", 1024, 16384, "documents", 0.0),
    )
}
NAMES = tuple(SPECS)

CORRELATION_TERMS = 64
SPMV_HALF_BAND = 11
CONV_FILTER = 5
BS_RATE = 0.02
BS_VOL = 0.30


@dataclass
class TaskSpec:
    kernel: str
    args: dict  # param -> buffer name or scalar
    global_size: tuple
    group_size: Optional[tuple] = None
    device: int = 0


@dataclass
class BenchCase:
    """Host data plus the tasks of one benchmark graph."""

    name: str
    buffers: dict
    tasks: list
    outputs: tuple  # buffer names or "task#.field" receiver values compared by the oracles
    integer: dict = field(default_factory=dict)  # output -> bit-exact?
    reference: Optional[Callable] = None  # numpy oracle: buffers -> {output: expected}
    reference_tolerance: float = 1e-4


# -- builders -----------------------------------------------------------------


def _vadd(n, rng):
    a = rng.random(n, dtype=np.float32)
    b = rng.random(n, dtype=np.float32)
    c = np.zeros(n, np.float32)
    return BenchCase(
        "vadd",
        {"a": a, "b": b, "c": c},
        [TaskSpec("vadd", {"a": "a", "b": "b", "c": "c"}, (n,), (256,) if n % 256 == 0 else None)],
        ("c",),
        reference=lambda buf: {"c": buf["a"] + buf["b"]},
        reference_tolerance=0.0,
    )


def _reduction(n, rng):
    a = rng.random(n, dtype=np.float32)
    ai = rng.integers(-1000, 1000, n, dtype=np.int32)
    return BenchCase(
        "reduction",
        {"a": a, "ai": ai},
        [
            TaskSpec("reduce", {"a": "a"}, (n,)),
            TaskSpec("reduce_int", {"a": "ai"}, (n,)),
        ],
        ("0.result", "1.result"),
        integer={"1.result": True},
        reference=lambda buf: {
            "0.result": np.float32(np.sum(buf["a"], dtype=np.float64)),
            "1.result": np.int32(np.sum(buf["ai"], dtype=np.int64)),
        },
    )


def _histogram(n, rng):
    data = rng.integers(0, 256, n, dtype=np.int32)
    return BenchCase(
        "histogram",
        {"data": data},
        [TaskSpec("histogram", {"data": "data"}, (n,))],
        ("0.bins",),
        integer={"0.bins": True},
        reference=lambda buf: {"0.bins": np.bincount(buf["data"] & 255, minlength=256).astype(np.int32)},
        reference_tolerance=0.0,
    )


def _matmul(n, rng):
    a = rng.random(n * n, dtype=np.float32)
    b = rng.random(n * n, dtype=np.float32)
    c = np.zeros(n * n, np.float32)
    grp = (16, 16) if n % 16 == 0 else None
    return BenchCase(
        "matmul",
        {"a": a, "b": b, "c": c},
        [TaskSpec("matmul", {"a": "a", "b": "b", "c": "c", "n": n}, (n, n), grp)],
        ("c",),
        reference=lambda buf: {"c": (buf["a"].reshape(n, n).astype(np.float64) @ buf["b"].reshape(n, n)).ravel()},
    )


def _csr_matvec(rowptr, cols, vals, x):
    y = np.zeros(len(rowptr) - 1)
    for r in range(len(y)):
        lo, hi = rowptr[r], rowptr[r + 1]
        y[r] = np.dot(vals[lo:hi].astype(np.float64), x[cols[lo:hi]])
    return y


def _spmv(n, rng, matrix: Optional[str] = None):
    if matrix is not None:
        rowptr, cols, vals, shape = read_mtx(matrix)
        if shape[0] != shape[1]:
            raise InvalidArgument(f"{matrix}: SpMV chains y = A x twice and needs a square matrix, got {shape[0]}x{shape[1]}")
        n = shape[0]
    else:
        rowptr, cols, vals = banded_csr(n, SPMV_HALF_BAND, rng)
    x = rng.random(n, dtype=np.float32)
    y = np.zeros(n, np.float32)
    z = np.zeros(n, np.float32)
    glob = -(-n // 64) * 64
    mat = {"rowptr": "rowptr", "cols": "cols", "vals": "vals"}

    def ref(buf):
        y1 = _csr_matvec(buf["rowptr"], buf["cols"], buf["vals"], buf["x"].astype(np.float64))
        return {"y": y1, "z": _csr_matvec(buf["rowptr"], buf["cols"], buf["vals"], y1)}

    return BenchCase(
        "spmv",
        {"rowptr": rowptr, "cols": cols, "vals": vals, "x": x, "y": y, "z": z},
        [
            TaskSpec("spmv", {**mat, "x": "x", "y": "y"}, (glob,), (64,)),
            TaskSpec("spmv", {**mat, "x": "y", "y": "z"}, (glob,), (64,)),
        ],
        ("y", "z"),
        reference=ref,
    )


def conv_reference(img, filt, w, h, fw):
    r = fw // 2
    pad = np.zeros((h + 2 * r, w + 2 * r))
    pad[r : r + h, r : r + w] = img.reshape(h, w)
    out = np.zeros((h, w))
    f = filt.reshape(fw, fw)
    for fy in range(fw):
        for fx in range(fw):
            out += f[fy, fx] * pad[fy : fy + h, fx : fx + w]
    return out.ravel()


def _conv(n, rng):
    img = rng.random(n * n, dtype=np.float32)
    filt = rng.random(CONV_FILTER * CONV_FILTER, dtype=np.float32)
    filt /= filt.sum()
    out = np.zeros(n * n, np.float32)
    grp = (16, 16) if n % 16 == 0 else None
    return BenchCase(
        "conv",
        {"img": img, "filt": filt, "out": out},
        [TaskSpec("conv2d", {"img": "img", "filt": "filt", "out": "out", "w": n, "h": n, "fw": CONV_FILTER}, (n, n), grp)],
        ("out",),
        reference=lambda buf: {"out": conv_reference(buf["img"], buf["filt"], n, n, CONV_FILTER)},
    )


def black_scholes(s, k, t, r, v):
    """(call, put) in float64 with the exact normal CDF."""
    s, k, t = (np.asarray(z, dtype=np.float64) for z in (s, k, t))
    cdf = np.vectorize(lambda d: 0.5 * math.erfc(-d / math.sqrt(2.0)))
    d1 = (np.log(s / k) + (r + 0.5 * v * v) * t) / (v * np.sqrt(t))
    d2 = d1 - v * np.sqrt(t)
    disc = k * np.exp(-r * t)
    call = s * cdf(d1) - disc * cdf(d2)
    put = disc * cdf(-d2) - s * cdf(-d1)
    return call, put


def _blackscholes(n, rng):
    price = rng.uniform(5.0, 30.0, n).astype(np.float32)
    strike = rng.uniform(1.0, 100.0, n).astype(np.float32)
    years = rng.uniform(0.25, 10.0, n).astype(np.float32)

    def ref(buf):
        c, p = black_scholes(buf["price"], buf["strike"], buf["years"], BS_RATE, BS_VOL)
        return {"call": c, "put": p}

    return BenchCase(
        "blackscholes",
        {"price": price, "strike": strike, "years": years, "call": np.zeros(n, np.float32), "put": np.zeros(n, np.float32)},
        [
            TaskSpec(
                "blackscholes",
                {"price": "price", "strike": "strike", "years": "years", "call": "call", "put": "put", "rate": BS_RATE, "vol": BS_VOL},
                (n,),
            )
        ],
        ("call", "put"),
        reference=ref,
        reference_tolerance=1e-3,
    )


def correlation_reference(bits, terms, words):
    m = bits.reshape(terms, words).view(np.uint64)
    out = np.zeros((terms, terms), np.int64)
    for i in range(terms):
        both = m[i][None, :] & m
        out[i] = np.unpackbits(both.view(np.uint8), axis=1).sum(axis=1)
    return out.astype(np.int32).ravel()


def _correlation(docs, rng, terms=CORRELATION_TERMS):
    words = max(1, -(-docs // 64))
    raw = rng.integers(0, 256, terms * words * 8, dtype=np.uint8)
    # sparse-ish term occurrence: AND two random bytes
    raw &= rng.integers(0, 256, raw.size, dtype=np.uint8)
    bits = raw.view(np.int64).copy()
    if docs % 64:
        keep = np.int64((1 << (docs % 64)) - 1)
        bits.reshape(terms, words)[:, -1] &= keep
    grp = (16, 16) if terms % 16 == 0 else None
    return BenchCase(
        "correlation",
        {"bits": bits, "counts": np.zeros(terms * terms, np.int32)},
        [TaskSpec("correlation", {"bits": "bits", "counts": "counts", "terms": terms, "words": words}, (terms, terms), grp)],
        ("counts",),
        integer={"counts": True},
        reference=lambda buf: {"counts": correlation_reference(buf["bits"], terms, words)},
        reference_tolerance=0.0,
    )


BUILDERS = {
    "vadd": _vadd,
    "reduction": _reduction,
    "histogram": _histogram,
    "matmul": _matmul,
    "spmv": _spmv,
    "conv": _conv,
    "blackscholes": _blackscholes,
    "correlation": _correlation,
}


def build_case(name: str, size: Optional[int] = None, seed: int = 0, matrix: Optional[str] = None) -> BenchCase:
    if name not in SPECS:
        raise InvalidArgument(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}")
    n = SPECS[name].desk_size if size is None else int(size)
    if n <= 0:
        raise InvalidArgument("benchmark size must be positive")
    rng = np.random.default_rng(seed)
    if name == "spmv":
        return _spmv(n, rng, matrix)
    if matrix is not None:
        raise InvalidArgument("--matrix only applies to spmv")
    return BUILDERS[name](n, rng)


# -- graphs ---------------------------------------------------------------------


def case_graph(case: BenchCase, runtime: Runtime, unit=None) -> TaskGraph:
    """Register the case's buffers and add its tasks to a fresh graph."""
    unit = unit or library()
    for name, arr in case.buffers.items():
        runtime.register(arr, name)
    g = TaskGraph(runtime)
    for t in case.tasks:
        args = {p: (case.buffers[v] if isinstance(v, str) else v) for p, v in t.args.items()}
        g.execute_task_on(Task(unit, t.kernel, args, t.global_size, t.group_size, t.device), t.device)
    return g


def _copy(v):
    if isinstance(v, Record):
        return Record(v.type_name, {k: (x.copy() if isinstance(x, np.ndarray) else x) for k, x in v._values.items()})
    if isinstance(v, np.ndarray):
        return v.copy()
    return v


def interpret_graph(graph: TaskGraph, iterations: int = 1) -> dict:
    """Run the graph's tasks one by one in insertion order through the interpreter.

    Works on copies; returns {id(host object): final value} for every
    array and record the tasks touch.
    """
    state = {}

    def current(obj):
        key = id(obj)
        if key not in state:
            state[key] = _copy(obj)
        return state[key]

    for _ in range(iterations):
        for t in graph.tasks:
            k = t.hir
            bindings = {b.param: (current(b.value) if b.mode is not None else b.value) for b in t.bindings}
            fields = {}
            if t.receiver is not None:
                fields = dict(current(t.receiver)._values)
            env = interpret(k, HostEnv(bindings, fields), t.unit)
            for b in t.bindings:
                if b.mode is not None and b.mode.writes:
                    v = env.bindings[b.param]
                    if isinstance(v, Record):
                        state[id(b.value)] = Record(v.type_name, dict(v._values))
                    else:
                        state[id(b.value)] = np.asarray(v).copy()
            if t.receiver is not None:
                rec = current(t.receiver)
                for name in rec._values:
                    if name in env.fields:
                        rec._values[name] = env.fields[name]
    return state


def case_outputs(case: BenchCase, graph: TaskGraph, lookup=None) -> dict:
    """Output label -> numpy array, read from host objects or from `lookup` (id -> value)."""

    def value(obj):
        return obj if lookup is None else lookup.get(id(obj), obj)

    out = {}
    for label in case.outputs:
        if "." in label:
            idx, fname = label.split(".", 1)
            task = graph.tasks[int(idx)]
            rec = value(task.receiver)
            ty = next(f.type for f in task.hir.fields if f.name == fname)
            dt = (ty.elem if isinstance(ty, ArrayType) else ty).dtype
            out[label] = np.atleast_1d(np.asarray(rec.get(fname), dtype=dt))
        else:
            out[label] = np.atleast_1d(np.asarray(value(case.buffers[label])))
    return out


def max_error(got: np.ndarray, want: np.ndarray) -> float:
    """Largest absolute difference (0 for bit-identical integer data)."""
    if got.shape != want.shape:
        return math.inf
    if got.size == 0:
        return 0.0
    if got.dtype.kind in "iu" and want.dtype.kind in "iu":
        return float(np.max(np.abs(got.astype(np.int64) - want.astype(np.int64))))
    return float(np.max(np.abs(got.astype(np.float64) - want.astype(np.float64))))


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Largest per-element |got - want| / |want| (absolute where want is 0)."""
    if got.shape != want.shape:
        return math.inf
    g = got.astype(np.float64)
    w = want.astype(np.float64)
    if not np.all(np.isfinite(g) == np.isfinite(w)):
        return math.inf
    d = np.abs(g - w)
    scale = np.abs(w)
    rel = np.where(scale > 0, d / np.where(scale > 0, scale, 1.0), d)
    return float(np.max(rel)) if rel.size else 0.0


def scaled_error(got: np.ndarray, want: np.ndarray) -> float:
    """Largest |got - want| / (|want| + 1): relative for large values, absolute near zero."""
    if got.shape != want.shape:
        return math.inf
    d = np.abs(got.astype(np.float64) - want.astype(np.float64)) / (np.abs(want.astype(np.float64)) + 1.0)
    return float(np.nanmax(d)) if d.size and not np.isnan(d).any() else (0.0 if not d.size else math.inf)


def within(got: np.ndarray, want: np.ndarray, tolerance: float, exact: bool) -> bool:
    if exact or tolerance == 0.0:
        return got.shape == want.shape and got.dtype == want.dtype and got.tobytes() == want.tobytes()
    return relative_error(got, want) <= tolerance


def simulate_kernel(unit, kernel: str, args: dict, global_size, group_size=None, passes: PassConfig = DEFAULT_CONFIG, seed: int = 0, workers: int = 1) -> dict:
    """Run one kernel on copies of `args`; returns the copies (plus 'this', the receiver)."""
    work = {k: _copy(v) for k, v in args.items()}
    rt = Runtime(seed=seed, sim=SimConfig(workers=workers), passes=passes)
    t = Task(unit, kernel, work, global_size, group_size)
    g = TaskGraph(rt)
    g.execute_task_on(t)
    g.execute()
    if t.receiver is not None:
        work["this"] = t.receiver
    return work


def interpret_kernel(unit, kernel: str, args: dict) -> dict:
    """Serial interpretation of one kernel on copies of `args`, same shape as simulate_kernel."""
    k = unit.kernel(kernel)
    env = interpret(k, HostEnv({p: _copy(v) for p, v in args.items()}, {}), unit)
    out = dict(env.bindings)
    if k.receiver_fields:
        out["this"] = Record(k.name, {f.name: env.fields[f.name] for f in k.receiver_fields})
    return out


# -- running --------------------------------------------------------------------


@dataclass
class Report:
    name: str
    size: int
    iterations: int
    passed: bool
    max_error: float  # simulator vs interpreter
    reference_error: float  # simulator vs numpy reference, see scaled_error
    metrics: SimMetrics
    transfers: list  # Transfer records
    actions: str
    seconds: float
    failures: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    tasks: int = 1

    @property
    def instructions(self) -> int:
        return self.metrics.instructions_executed

    @property
    def transfer_count(self) -> int:
        return len(self.transfers)

    @property
    def bytes_moved(self) -> int:
        return sum(t.nbytes for t in self.transfers)


def run_benchmark(
    name: str,
    size: Optional[int] = None,
    iterations: Optional[int] = None,
    seed: int = 0,
    optimize_actions: bool = True,
    full_transfers: bool = False,
    matrix: Optional[str] = None,
    workers: int = 1,
    passes: PassConfig = DEFAULT_CONFIG,
    check_interpreter: bool = True,
    schedule_seed: Optional[int] = None,
) -> Report:
    """Build, execute `iterations` times, and compare against both oracles.

    `seed` draws the inputs; `schedule_seed` (default: `seed`) permutes the
    simulator's group order.
    """
    spec = SPECS.get(name)
    if spec is None:
        raise InvalidArgument(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}")
    iters = spec.iterations if iterations is None else int(iterations)
    if iters < 1:
        raise InvalidArgument("iterations must be at least 1")
    case = build_case(name, size, seed, matrix)
    inputs = {k: v.copy() for k, v in case.buffers.items()}
    rt = Runtime(
        devices=1 + max(t.device for t in case.tasks),
        seed=seed if schedule_seed is None else schedule_seed,
        sim=SimConfig(workers=workers),
        passes=passes,
        optimize=optimize_actions,
        full_transfers=full_transfers,
    )
    g = case_graph(case, rt)
    t0 = time.perf_counter()
    for _ in range(iters):
        g.execute()
    elapsed = time.perf_counter() - t0
    got = case_outputs(case, g)
    failures = []
    err = 0.0
    if check_interpreter:
        fresh = BenchCase(case.name, {k: v.copy() for k, v in inputs.items()}, case.tasks, case.outputs)
        g2 = case_graph(fresh, Runtime(passes=passes))
        want = case_outputs(fresh, g2, interpret_graph(g2, iters))
        for label in case.outputs:
            err = max(err, max_error(got[label], want[label]))
            if not within(got[label], want[label], spec.tolerance, case.integer.get(label, False)):
                failures.append(f"{label}: simulator differs from interpreter (relative error {relative_error(got[label], want[label]):.3g})")
    ref_err = 0.0
    if case.reference is not None:
        ref = case.reference(inputs)
        for label, expect in ref.items():
            e = np.atleast_1d(np.asarray(expect))
            r = scaled_error(got[label], e)
            ref_err = max(ref_err, r)
            ok = got[label].tobytes() == e.astype(got[label].dtype).tobytes() if case.reference_tolerance == 0.0 else r <= case.reference_tolerance
            if not ok:
                failures.append(f"{label}: differs from numpy reference (relative error {r:.3g})")
    return Report(
        name,
        SPECS[name].desk_size if size is None else int(size),
        iters,
        not failures,
        err,
        ref_err,
        rt.metrics,
        list(rt.log.entries),
        g.last_actions.dump() if g.last_actions else "",
        elapsed,
        failures,
        got,
        len(g.tasks),
    )
