import numpy as np
import pytest

from jaccsim.bench.kernels import library
from jaccsim.errors import ParseError
from jaccsim.runtime import ActionKind, GraphState, Runtime, build_graph, parse_taskgraph
from jaccsim.types import Mode

CHAIN = """
# producer then consumer
buffer A f32 256 init=iota
buffer B f32 256
task fill dev=1 global=256 group=64 args=A:write,1.5
task copy dev=1 global=256 group=64 args=A:read,B:write
"""


def test_two_task_chain():
    spec = parse_taskgraph(CHAIN, library())
    assert len(spec.tasks) == 2
    assert [t.device for t in spec.tasks] == [1, 1]
    assert spec.tasks[0].args == (("A", Mode.WRITE), 1.5)
    assert spec.tasks[1].args == (("A", Mode.READ), ("B", Mode.WRITE))
    assert spec.buffer("A").init == "iota"


def test_reduction_schedule_fields():
    spec = parse_taskgraph("buffer data f32 4096 init=rand:3\ntask reduce global=4096 group=256 args=data:read\n")
    (t,) = spec.tasks
    assert t.global_size == (4096,)
    assert t.group_size == (256,)
    assert t.device == 0


def test_empty_spec_is_a_noop():
    spec = parse_taskgraph("# nothing here\n\n")
    assert spec.tasks == [] and spec.buffers == []
    g, bufs = build_graph(spec, library())
    plan = g.plan()
    assert [a.kind for a in plan.actions] == [ActionKind.SYNC]
    assert g.execute() is GraphState.DONE
    assert len(g.runtime.log) == 0


@pytest.mark.parametrize(
    "text, needle",
    [
        ("task nosuch global=4 args=\n", "undeclared kernel"),
        ("buffer A f32 8\ntask copy global=8 group=0 args=A:read,A:write\n", "positive"),
        ("buffer A f32 8\ntask copy global=-8 args=A:read,A:write\n", "positive"),
        ("buffer A f32 8\ntask copy group=8 args=A:read,A:write\n", "global"),
        ("buffer A f99 8\n", "unknown buffer type"),
        ("buffer A f32 8 init=ones\n", "bad initializer"),
        ("buffer A f32 8\nbuffer A f32 8\n", "declared twice"),
        ("buffer A f32 8\ntask copy global=8 args=A:read,C:write\n", "undeclared buffer"),
        ("buffer A f32 8\ntask copy global=8 args=A:sideways\n", "unknown access mode"),
        ("frobnicate\n", "unknown directive"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(ParseError, match=needle) as ei:
        parse_taskgraph(text, library())
    assert ei.value.line >= 1


def test_build_runs_chain():
    spec = parse_taskgraph(CHAIN)
    g, bufs = build_graph(spec, library())
    assert len(g.runtime.memories) == 2
    g.execute()
    want = 1.5 + np.arange(256, dtype=np.float32)
    assert np.array_equal(bufs["A"], want)
    assert np.array_equal(bufs["B"], want)


def test_mode_must_match_kernel():
    spec = parse_taskgraph("buffer A f32 8\nbuffer B f32 8\ntask copy global=8 args=A:write,B:write\n")
    with pytest.raises(Exception, match="declared read"):
        build_graph(spec, library())


def test_file_initializer_reads_little_endian(tmp_path):
    data = np.arange(8, dtype="<i4") * 3
    data.tofile(tmp_path / "d.bin")
    spec = parse_taskgraph("buffer D i32 8 init=file:d.bin\n")
    g, bufs = build_graph(spec, library(), Runtime(), str(tmp_path))
    assert np.array_equal(bufs["D"], data)
    bad = parse_taskgraph("buffer D i32 9 init=file:d.bin\n")
    with pytest.raises(ParseError, match="holds 8 elements"):
        build_graph(bad, library(), Runtime(), str(tmp_path))
