import numpy as np
import pytest

from jaccsim.bench.suite import simulate_kernel
from jaccsim.errors import BarrierDivergenceTrap, InvalidArgument, MemoryFault
from jaccsim.sim import GlobalMemory, LaunchSchedule, SimMetrics
from jaccsim.sim.memory import atomic_apply
from jaccsim.types import F32, I32

from conftest import ONE_D, compiled, run_program, unit_of

INT_REDUCE = ONE_D + "kernel r(@read a: i32[]) { @atomic(op=ADD) field total: i32; for i in 0..len(a) { total = a[i]; } }"


@pytest.mark.parametrize("seed", [0, 1, 7, 1234])
@pytest.mark.parametrize("workers", [1, 4])
def test_integer_reduction_is_exact(seed, workers):
    u = unit_of(INT_REDUCE)
    out = simulate_kernel(u, "r", {"a": np.arange(1, 1025, dtype=np.int32)}, 256, 64, seed=seed, workers=workers)
    assert int(out["this"]._values["total"]) == 524800


def test_concurrent_atomic_adds():
    u = unit_of(INT_REDUCE)
    out = simulate_kernel(u, "r", {"a": np.ones(1024, dtype=np.int32)}, 1024, 128)
    assert int(out["this"]._values["total"]) == 1024


NEIGHBOR = ONE_D + """kernel nb(@read a: f32[], @write o: f32[]) {
  @shared field s: f32[64];
  for i in 0..len(a) {
    let t = thread_id(0);
    s[t] = a[i];
    barrier();
    o[i] = s[(t + 1) % group_size(0)];
  }
}"""


def test_shared_memory_neighbor_exchange():
    ck = compiled(NEIGHBOR)
    a = np.arange(256, dtype=np.float32)
    outs, m = run_program(ck.program, (256,), (64,), {"a": a, "o": np.zeros(256, np.float32)})
    want = a.reshape(4, 64)[:, (np.arange(64) + 1) % 64].ravel()
    assert np.array_equal(outs["o"], want)
    assert m.barriers_executed == 4


def test_unsynchronized_write_has_several_outcomes():
    ck = compiled(ONE_D + "kernel w(@read a: i32[], @write o: i32[]) { for i in 0..len(a) { o[0] = group_id(0); } }")
    seen = set()
    for seed in range(20):
        outs, _ = run_program(ck.program, (64,), (8,), {"a": np.zeros(64, np.int32), "o": np.zeros(1, np.int32)}, seed=seed, wave_lanes=8)
        seen.add(int(outs["o"][0]))
    assert len(seen) >= 2
    assert seen <= set(range(8))


def test_atomic_apply_add_and_xor():
    r = np.zeros(8, np.uint8)
    assert atomic_apply(r, "add", 4, 5, I32) == 0
    assert atomic_apply(r, "xor", 4, 3, I32) == 5
    assert r.view(np.int32).tolist() == [0, 6]
    f = np.zeros(4, np.uint8)
    atomic_apply(f, "add", 0, 1.5, F32)
    assert f.view(np.float32)[0] == 1.5


@pytest.mark.parametrize(
    "args, needle",
    [
        (("mul", 0, 1, I32), "unknown atomic op"),
        (("add", 2, 1, I32), "misaligned"),
        (("add", 8, 1, I32), "out of bounds"),
        (("xor", 0, 1, F32), "add and sub only"),
    ],
)
def test_atomic_apply_rejects(args, needle):
    with pytest.raises(InvalidArgument, match=needle):
        atomic_apply(np.zeros(8, np.uint8), *args)


def test_empty_kernel_counts_one_return_per_thread():
    ck = compiled("@jacc(iterationSpace=NONE)\nkernel e(@read a: f32[]) { }")
    _, m = run_program(ck.program, (64,), (32,), {"a": np.zeros(4, np.float32)})
    assert m.instructions_executed == 64
    assert m.global_loads == m.global_stores == m.barriers_executed == 0


def test_counters_read_and_reset():
    m = SimMetrics(instructions_executed=9, global_loads=3, group_schedule_seed=5)
    assert m.read_counter("instructionsExecuted") == 9
    assert m.read_counter("global_loads") == 3
    with pytest.raises(KeyError):
        m.read_counter("flops")
    m.reset_counters()
    assert m.instructions_executed == 0 and m.global_loads == 0
    assert m.group_schedule_seed == 5


def test_vadd_memory_traffic(vadd_src):
    ck = compiled(vadd_src)
    n = 1000
    a = np.arange(n, dtype=np.float32)
    outs, m = run_program(ck.program, (256,), (64,), {"a": a, "b": a, "c": np.zeros(n, np.float32)})
    assert np.array_equal(outs["c"], 2 * a)
    assert m.global_loads == 2 * n
    assert m.global_stores == n


def test_divergent_barrier_traps():
    ck = compiled(ONE_D + "kernel b(@read a: f32[], @write o: f32[]) { @shared field s: f32[4]; for i in 0..len(o) { if (a[i] > 0.0) { barrier(); } o[i] = 1.0; } }")
    with pytest.raises(BarrierDivergenceTrap, match="kernel 'b'"):
        run_program(ck.program, (8,), (8,), {"a": np.array([1, -1] * 4, np.float32), "o": np.zeros(8, np.float32)})
    outs, m = run_program(ck.program, (8,), (8,), {"a": np.ones(8, np.float32), "o": np.zeros(8, np.float32)})
    assert m.barriers_executed == 1
    assert np.all(outs["o"] == 1)


@pytest.mark.parametrize(
    "g, l, needle",
    [
        ((40,), (16,), "does not divide"),
        ((0,), (1,), "positive"),
        ((8, 8, 8, 8), (1,), "1 to 3 dimensions"),
        ((2048,), (2048,), "exceeds the limit"),
    ],
)
def test_schedule_validation(g, l, needle):
    with pytest.raises(InvalidArgument, match=needle):
        LaunchSchedule(g, l)


def test_schedule_pads_dimensions():
    s = LaunchSchedule((64, 4), (16, 2))
    assert s.global_size == (64, 4, 1)
    assert s.group_counts == (4, 2, 1)
    assert s.n_groups == 8 and s.group_threads == 32 and s.total_threads == 256


def test_missing_and_extra_arguments(vadd_src):
    from jaccsim.sim import SimConfig, launch

    ck = compiled(vadd_src)
    mem = GlobalMemory()
    with pytest.raises(InvalidArgument, match="missing argument"):
        launch(ck.program, LaunchSchedule(8, 8), {}, mem, 0, SimConfig())
    b = mem.alloc(32, F32, 8)
    with pytest.raises(InvalidArgument, match="no parameter 'zz'"):
        launch(ck.program, LaunchSchedule(8, 8), {"a": b, "b": b, "c": b, "zz": 1}, mem, 0, SimConfig())


def test_unchecked_out_of_range_access_faults():
    ck = compiled(ONE_D + "kernel g(@read a: f32[], @read idx: i32[], @write o: f32[]) { for i in 0..len(o) { o[i] = a[idx[i]]; } }")
    idx = np.full(8, 1 << 20, dtype=np.int32)
    with pytest.raises(MemoryFault):
        run_program(ck.program, (8,), (8,), {"a": np.ones(8, np.float32), "idx": idx, "o": np.zeros(8, np.float32)})
