import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from jaccsim.bench.randgen import random_dag, random_inputs, random_kernel, random_launch
from jaccsim.bench.suite import BenchCase, _copy, case_graph, case_outputs, interpret_kernel, simulate_kernel
from jaccsim.frontend import parse_kernel
from jaccsim.hirfmt import format_unit
from jaccsim.memory.manager import serialize, write_back
from jaccsim.memory.schema import build_schema
from jaccsim.objects import Record
from jaccsim.passes.pipeline import DEFAULT_CONFIG, TOGGLEABLE, compile_source
from jaccsim.runtime import Runtime
from jaccsim.types import F32, F64, I32, I64, ArrayType
from jaccsim.vka.assemble import assemble

from conftest import ONE_D, unit_of

seeds = st.integers(min_value=0, max_value=2**31 - 1)
i32s = st.integers(min_value=-(2**31), max_value=2**31 - 1)


def _same(x, y):
    return all(np.asarray(x[k]).tobytes() == np.asarray(y[k]).tobytes() for k in ("o", "p"))


@given(seeds)
def test_source_format_round_trips(seed):
    u, _ = random_kernel(seed)
    text = format_unit(u)
    assert parse_kernel(text, u.path) == u


@given(seeds)
def test_vka_text_round_trips(seed):
    u, name = random_kernel(seed)
    ck = compile_source(u, name)
    p = assemble(ck.vka)
    assert p.text() == ck.vka


@settings(max_examples=15)
@given(seeds, st.integers(0, 1000), st.sampled_from([1, 2, 8]))
def test_random_kernel_schedule_invariance(seed, sched_seed, workers):
    u, name = random_kernel(seed)
    args = random_inputs(seed)
    g, l = random_launch(seed)
    base = simulate_kernel(u, name, args, g, l, seed=0, workers=1)
    other = simulate_kernel(u, name, args, g, l, seed=sched_seed, workers=workers)
    assert _same(base, other)


@settings(max_examples=15)
@given(seeds)
def test_random_kernel_matches_interpreter(seed):
    u, name = random_kernel(seed)
    args = random_inputs(seed)
    g, l = random_launch(seed)
    assert _same(simulate_kernel(u, name, args, g, l), interpret_kernel(u, name, args))


@settings(max_examples=10)
@given(seeds, st.sampled_from(TOGGLEABLE))
def test_pass_toggle_keeps_outputs(seed, pass_name):
    u, name = random_kernel(seed)
    args = random_inputs(seed)
    g, l = random_launch(seed)
    on = simulate_kernel(u, name, args, g, l)
    off = simulate_kernel(u, name, args, g, l, passes=DEFAULT_CONFIG.without(pass_name))
    assert _same(on, off)


@given(st.sampled_from(["ADD", "OR", "XOR", "AND"]), st.lists(i32s, min_size=1, max_size=64), seeds)
def test_integer_atomic_fold(op, values, seed):
    u = unit_of(ONE_D + f"kernel f(@read x: i32[]) {{ @atomic(op={op}) field acc: i32; for i in 0..len(x) {{ acc = x[i]; }} }}")
    x = np.array(values, np.int32)
    ufunc = {"ADD": np.add, "OR": np.bitwise_or, "XOR": np.bitwise_xor, "AND": np.bitwise_and}[op]
    init = np.int32(-1 if op == "AND" else 0)
    with np.errstate(over="ignore"):
        want = ufunc.reduce(x, dtype=np.int32, initial=init)
    got = simulate_kernel(u, "f", {"x": x}, len(x), 1, seed=seed)["this"]._values["acc"]
    assert np.int32(got) == want


field_types = st.sampled_from([I32, I64, F32, F64, ArrayType(F32, 3), ArrayType(I64, 2)])


@given(st.lists(field_types, min_size=0, max_size=8))
def test_schema_layout_is_aligned_and_disjoint(types):
    s = build_schema("R", [(f"f{i}", t) for i, t in enumerate(types)])
    end = 0
    for e in s.entries:
        assert e.offset % e.elem.size == 0
        assert e.offset >= end
        end = e.offset + e.size
    assert s.total_size >= end
    if s.entries:
        assert s.total_size % max(e.elem.size for e in s.entries) == 0


@given(st.lists(field_types, min_size=1, max_size=6), st.data())
def test_record_serialization_round_trips(types, data):
    fields = [(f"f{i}", t) for i, t in enumerate(types)]
    s = build_schema("R", fields)
    vals = {}
    for name, t in fields:
        elem = t.elem if isinstance(t, ArrayType) else t
        if elem.is_int:
            gen = st.integers(-(2 ** (8 * elem.size - 1)), 2 ** (8 * elem.size - 1) - 1)
        else:
            gen = st.floats(allow_nan=False, width=8 * elem.size)
        vals[name] = data.draw(st.lists(gen, min_size=t.length, max_size=t.length) if isinstance(t, ArrayType) else gen)
    rec = Record.zeros("R", fields, **vals)
    names = [n for n, _ in fields]
    back = write_back(serialize(rec, s, names), s, Record.zeros("R", fields), names)
    assert back == rec


def _run_case(case, **kw):
    fresh = BenchCase(case.name, {k: _copy(v) for k, v in case.buffers.items()}, case.tasks, case.outputs)
    rt = Runtime(devices=2, **kw)
    g = case_graph(fresh, rt)
    g.execute()
    return case_outputs(fresh, g), rt.log.total_bytes()


@settings(max_examples=20)
@given(seeds)
def test_random_dag_transfer_elimination_is_transparent(seed):
    case = random_dag(seed)
    opt, opt_bytes = _run_case(case)
    naive, naive_bytes = _run_case(case, optimize=False)
    full, full_bytes = _run_case(case, full_transfers=True)
    for k in case.outputs:
        assert opt[k].tobytes() == naive[k].tobytes() == full[k].tobytes()
    assert opt_bytes <= naive_bytes <= full_bytes
