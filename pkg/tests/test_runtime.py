import numpy as np
import pytest

from jaccsim.bench.kernels import library
from jaccsim.errors import BoundsTrap, InvalidArgument, ObjectLockedError, RuntimeStateError
from jaccsim.objects import Record
from jaccsim.runtime import ActionKind, GraphState, Runtime, Task, TaskGraph, run_task

from conftest import unit_of

CHECKED = "@jacc(iterationSpace=ONE_DIMENSION, exceptions=true)\n"


def _graph(**kw):
    return TaskGraph(Runtime(**kw))


def test_task_ids_are_insertion_order():
    u = library()
    g = _graph()
    x = np.ones(8, np.float32)
    assert g.execute_task_on(Task(u, "scale", {"x": x, "alpha": 2.0}, 8)) == 0
    assert g.execute_task_on(Task(u, "scale", {"x": x, "alpha": 3.0}, 8)) == 1
    assert len(g) == 2
    with pytest.raises(InvalidArgument, match="unknown device 3"):
        g.execute_task_on(Task(u, "scale", {"x": x, "alpha": 1.0}, 8), device=3)


@pytest.mark.parametrize(
    "args, needle",
    [
        ({"x": np.ones(4, np.float32)}, "missing argument 'alpha'"),
        ({"x": np.ones(4, np.float32), "alpha": 1.0, "beta": 2.0}, "no parameter 'beta'"),
        ({"x": np.ones(4, np.float64), "alpha": 1.0}, "element type"),
        ({"x": np.ones((2, 2), np.float32), "alpha": 1.0}, "1-D array"),
    ],
)
def test_task_argument_checks(args, needle):
    with pytest.raises(InvalidArgument, match=needle):
        Task(library(), "scale", args, 4)


def test_dependency_kinds():
    u = library()
    a, b, c = (np.zeros(8, np.float32) for _ in range(3))
    g = _graph()
    g.execute_task_on(Task(u, "fill", {"y": a, "v": 1.0}, 8))  # 0 writes a
    g.execute_task_on(Task(u, "copy", {"x": a, "y": b}, 8))  # 1 reads a: flow on 0
    g.execute_task_on(Task(u, "fill", {"y": a, "v": 2.0}, 8))  # 2 writes a: anti on 1, output on 0
    g.execute_task_on(Task(u, "fill", {"y": c, "v": 3.0}, 8))  # 3 independent
    assert g.infer_dependencies() == {(0, 1), (0, 2), (1, 2)}


def _vadd_graph(optimize=True):
    u = library()
    a, b, c = np.ones(8, np.float32), np.ones(8, np.float32), np.zeros(8, np.float32)
    g = _graph(optimize=optimize)
    for n, o in zip("abc", (a, b, c)):
        g.runtime.register(o, n)
    g.execute_task_on(Task(u, "vadd", {"a": a, "b": b, "c": c}, 8))
    return g, c


def test_naive_lowering_counts():
    g, _ = _vadd_graph()
    plan = g.plan(optimize=False)
    counts = {k: plan.count(k) for k in ActionKind}
    assert counts == {ActionKind.COMPILE: 1, ActionKind.COPY_IN: 2, ActionKind.EXECUTE: 1, ActionKind.COPY_OUT: 1, ActionKind.SYNC: 1}
    assert plan.actions[-1].kind is ActionKind.SYNC
    plan.validate()


def test_merged_copy_in():
    g, _ = _vadd_graph()
    plan = g.plan()
    plan.validate()
    (ci,) = [a for a in plan.actions if a.kind is ActionKind.COPY_IN]
    assert ci.objects() == ("a", "b")


def test_empty_graph_is_just_sync():
    g = _graph()
    assert [a.kind for a in g.plan().actions] == [ActionKind.SYNC]
    assert g.execute() is GraphState.DONE


def _chain(optimize):
    u = library()
    a = np.arange(1024, dtype=np.float32)
    g = _graph(optimize=optimize)
    g.runtime.register(a, "A")
    g.execute_task_on(Task(u, "scale", {"x": a, "alpha": 2.0}, 256))
    g.execute_task_on(Task(u, "scale", {"x": a, "alpha": 0.5}, 256))
    return g, a


def test_chain_keeps_array_on_device():
    naive, _ = _chain(False)
    p = naive.plan()
    assert (p.count(ActionKind.COPY_IN, "A"), p.count(ActionKind.COPY_OUT, "A")) == (2, 2)
    g, a = _chain(True)
    p = g.plan()
    assert (p.count(ActionKind.COPY_IN, "A"), p.count(ActionKind.COPY_OUT, "A")) == (1, 1)
    g.execute()
    assert np.array_equal(a, np.arange(1024, dtype=np.float32))
    assert g.runtime.log.lines() == ["A in 4096", "A out 4096"]


def test_compile_is_hoisted_ahead_of_copies():
    g, _ = _chain(True)
    kinds = [a.kind for a in g.plan().actions]
    assert kinds.index(ActionKind.COMPILE) < kinds.index(ActionKind.COPY_IN)


def test_atomic_reduction_task():
    u = library()
    data = np.ones(4096, np.float32)
    g = run_task(Task(u, "reduce", {"a": data}, 4096, 256))
    t = g.tasks[0]
    assert g.state is GraphState.DONE
    assert float(t.receiver.result) == 4096.0
    assert g.runtime.metrics.shared_atomics == 4096
    assert g.runtime.metrics.global_atomics == 16


TRAPPING = CHECKED + "kernel g(@read a: f32[], @read idx: i32[], @write o: f32[]) { for i in 0..len(o) { o[i] = a[idx[i]]; } }"


def _trapping_graph():
    lib = library()
    u = unit_of(TRAPPING)
    x = np.arange(64, dtype=np.float32)
    idx = np.arange(64, dtype=np.int32)
    idx[40] = 1000
    o = np.full(64, 7.0, np.float32)
    g = _graph()
    g.execute_task_on(Task(lib, "scale", {"x": x, "alpha": 3.0}, 64))
    g.execute_task_on(Task(u, "g", {"a": x, "idx": idx, "o": o}, 64, name="gather"))
    return g, x, idx, o


def test_trap_rolls_back_every_object():
    g, x, idx, o = _trapping_graph()
    before = [v.copy() for v in (x, idx, o)]
    with pytest.raises(BoundsTrap, match=r"\[task 1 \(gather\)\]"):
        g.execute()
    assert g.state is GraphState.FAILED
    for was, now in zip(before, (x, idx, o)):
        assert was.tobytes() == now.tobytes()
        assert now.flags.writeable
    with pytest.raises(RuntimeStateError, match="failed"):
        g.execute()
    with pytest.raises(RuntimeStateError):
        g.execute_task_on(Task(library(), "scale", {"x": x, "alpha": 1.0}, 64))


def test_done_graph_re_executes():
    g, a = _chain(True)
    a[:] = 1.0
    g.runtime.notify_modified(a)
    g.execute()
    g.execute()
    assert np.all(a == 1.0)
    u = library()
    x = np.ones(16, np.float32)
    g2 = _graph()
    g2.execute_task_on(Task(u, "scale", {"x": x, "alpha": 2.0}, 16))
    g2.execute()
    g2.execute()
    assert np.all(x == 4.0)


def test_objects_locked_while_executing(monkeypatch):
    u = library()
    off = Record.zeros("Offset", u.flattened_fields("Offset"), bias=1.0)
    y = np.zeros(16, np.float32)
    g = _graph()
    g.execute_task_on(Task(u, "shift", {"off": off, "y": y}, 16))
    seen = []
    real = TaskGraph._run

    def probe(self, ag):
        with pytest.raises(ObjectLockedError):
            off.bias = 5.0
        with pytest.raises(ValueError):
            y[0] = 9.0
        seen.append(True)
        return real(self, ag)

    monkeypatch.setattr(TaskGraph, "_run", probe)
    g.execute()
    assert seen == [True]
    assert np.all(y == 1.0)
    off.bias = 2.0
    y[0] = 0.0


def test_record_field_transfer_is_partial():
    u = library()
    off = Record.zeros("Offset", u.flattened_fields("Offset"), lo=1.0, hi=2.0, bias=0.25, count=3)
    y = np.zeros(32, np.float32)
    g = _graph()
    off_name = g.runtime.register(off, "off")
    g.execute_task_on(Task(u, "shift", {"off": off, "y": y}, 32))
    g.execute()
    assert g.runtime.log.bytes_for(off_name, "in") == 4
    assert g.runtime.log.bytes_for(off_name, "out") == 0
    assert np.all(y == 0.25)
    assert (off.lo, off.hi, off.count) == (1.0, 2.0, 3)


def test_two_devices_move_data_between_them():
    u = library()
    a = np.arange(32, dtype=np.float32)
    b = np.zeros(32, np.float32)
    g = _graph(devices=2)
    g.execute_task_on(Task(u, "scale", {"x": a, "alpha": 2.0}, 32, device=0))
    g.execute_task_on(Task(u, "copy", {"x": a, "y": b}, 32, device=1))
    g.execute()
    assert np.array_equal(b, 2 * np.arange(32, dtype=np.float32))
    assert np.array_equal(a, b)


def test_set_device_remaps():
    g, _ = _chain(True)
    with pytest.raises(InvalidArgument):
        g.set_device(0, 4)
    g.set_device(1, 0)
    assert g.tasks[1].device == 0
    assert g.runtime.launches == 0
