import numpy as np
import pytest

from jaccsim.bench.kernels import BENCHMARK_KERNELS, POOL_KERNELS, library
from jaccsim.errors import AssemblyError
from jaccsim.passes.pipeline import compile_source
from jaccsim.vka.assemble import assemble

from conftest import compiled, run_program

HEAD = ".version 1.0\n.kernel k\n"


@pytest.mark.parametrize("name", BENCHMARK_KERNELS + POOL_KERNELS)
def test_text_round_trip(name):
    ck = compile_source(library(), name)
    p = assemble(ck.vka)
    assert p.text() == ck.vka
    assert assemble(p.text()).lir == p.lir
    assert p.kernel_name == name
    assert p.instruction_count() == ck.lir.instr_count()


@pytest.mark.parametrize(
    "text, line, needle",
    [
        ("", 1, "no kernel entry"),
        (".version 1.0\n", 1, "no kernel entry"),
        (HEAD + "{\n  atom.shared.mul.f32 [0], 0f3F800000;\n  ret;\n}\n", 4, "unknown opcode 'atom.shared.mul.f32'"),
        (HEAD + ".reg .s32 %r<1>\n{\n  add.s32 %r1, %r2, 1;\n  ret;\n}\n", 5, "undeclared register '%r2'"),
        (HEAD + "{\n  bra $L9;\n}\n", 4, r"undefined label '\$L9'"),
        (HEAD + ".reg .f32 %f<1>\n{\n  mov.f32 %f1, 0f3F80;\n  ret;\n}\n", 5, "not a .f32 immediate"),
    ],
)
def test_assembly_errors(text, line, needle):
    with pytest.raises(AssemblyError, match=needle) as ei:
        assemble(text)
    assert ei.value.line == line


def test_hand_written_module_runs():
    text = """.version 1.0
.kernel twice
.param .buffer .s32 a
.reg .s32 %r<3>
.reg .s64 %rd<1>
.reg .pred %p<1>
{
    ld.param.s64 %rd1, [a];
    ld.param.s32 %r1, [a.len];
    mov.s32 %r2, %gid.x;
    setp.ge.s32 %p1, %r2, %r1;
    @%p1 bra $L7;
    ld.global.s32 %r3, [%rd1 + %r2*4];
    shl.s32 %r3, %r3, 1;
    st.global.s32 [%rd1 + %r2*4], %r3;
$L7:
    ret;
}
"""
    p = assemble(text)
    outs, m = run_program(p, (48,), (16,), {"a": np.arange(37, dtype=np.int32)})
    assert np.array_equal(outs["a"], 2 * np.arange(37, dtype=np.int32))
    assert m.instructions_executed > 0


def test_assembled_text_executes_like_compiled(vadd_src):
    ck = compiled(vadd_src)
    a = np.arange(100, dtype=np.float32)
    b = np.full(100, 0.5, dtype=np.float32)
    arrays = {"a": a, "b": b, "c": np.zeros(100, np.float32)}
    x, _ = run_program(ck.program, (128,), (32,), arrays)
    y, _ = run_program(assemble(ck.vka), (128,), (32,), arrays)
    assert np.array_equal(x["c"], a + b)
    assert np.array_equal(x["c"], y["c"])
