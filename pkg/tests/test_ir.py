import pytest

from jaccsim.errors import CompileError, InternalCompilerError
from jaccsim.lir import BOOL, Block, Branch, Imm, Instr, KernelLIR, Reg, Ret, format_lir, verify
from jaccsim.typecheck import validate_hir
from jaccsim.types import F32, I32

from conftest import ONE_D, compiled, lowered, unit_of

NONE = "@jacc(iterationSpace=NONE)\n"

REDUCE = ONE_D + """kernel reduce(@read a: f32[]) {
  @atomic(op=ADD) field result: f32;
  for i in 0..len(a) { result = a[i]; }
}"""


def test_valid_kernel_has_no_diagnostics(vadd_src):
    u = unit_of(vadd_src)
    assert validate_hir(u.kernels[0], u) == []


@pytest.mark.parametrize(
    "body, needle",
    [
        ("for i in 0..len(o) { o[i] = q; }", "undeclared identifier 'q'"),
        ("for i in 0..len(o) { i = 3; }", "induction variable 'i'"),
        ("for i in 0..len(o) { o[i] = nope(1.0); }", "unresolved callee 'nope'"),
        ("for i in 0..len(o) { o[i] = o[i] + 1.0; }", "read of write-only parameter"),
    ],
)
def test_validation_diagnostics(body, needle):
    u = unit_of(ONE_D + "kernel k(@write o: f32[]) { " + body + " }")
    diags = validate_hir(u.kernels[0], u)
    assert any(needle in str(d) for d in diags), diags


def test_invalid_kernel_refuses_to_compile():
    with pytest.raises(CompileError, match="kernel 'k' is invalid"):
        compiled(ONE_D + "kernel k(@write o: f32[]) { for i in 0..len(o) { o[i] = q; } }")


def test_atomic_reduction_lowers_to_shared_then_global_atomics():
    l = lowered(REDUCE)
    verify(l)
    ins = list(l.instructions())
    atoms = [(i.space, i.attr) for i in ins if i.op == "atom"]
    assert ("shared", "add") in atoms and ("global", "add") in atoms
    # the receiver field is never the target of a plain store
    assert not [i for i in ins if i.op == "st"]
    assert any(i.op == "barrier" for i in ins)
    assert l.atominit == (("this", 0, F32, 0.0, 1),)


def test_record_field_offset():
    l = lowered("type T { x: f32; y: i32; z: f64; }\n" + NONE + "kernel k(@write t: T) { t.z = 2.0; }")
    (st,) = [i for i in l.instructions() if i.op == "st"]
    assert st.addr.offset == 8
    assert l.params[0].kind == "object" and l.params[0].size == 16


def test_empty_body_lowers_to_bare_return():
    l = lowered(NONE + "kernel e(@read a: f32[]) { }")
    verify(l)
    assert l.instr_count() == 0
    assert l.emitted_count() == 1


def test_one_dimensional_without_loop_is_rejected():
    with pytest.raises(CompileError, match="no loop nest"):
        lowered(ONE_D + "kernel e(@read a: f32[]) { }")


def _blocks(*blocks):
    return KernelLIR("t", (), tuple(blocks))


def test_verify_rejects_use_before_def():
    r = Reg(1, I32)
    l = _blocks(Block(0, (Instr("add", I32, Reg(2, I32), (r, Imm(1, I32))),), Ret()))
    with pytest.raises(InternalCompilerError, match="before definition"):
        verify(l)


def test_verify_rejects_missing_target_and_bad_predicate():
    with pytest.raises(InternalCompilerError, match="missing"):
        verify(_blocks(Block(0, (), Branch(Imm(True, BOOL), 1, 2))))
    r = Reg(1, I32)
    bad = _blocks(
        Block(0, (Instr("mov", I32, r, (Imm(0, I32),)),), Branch(r, 1, 1)),
        Block(1, (), Ret()),
    )
    with pytest.raises(InternalCompilerError, match="non-predicate"):
        verify(bad)


def test_verify_rejects_type_conflict():
    l = _blocks(Block(0, (Instr("mov", I32, Reg(1, I32), (Imm(0, I32),)), Instr("mov", F32, Reg(1, F32), (Imm(0.0, F32),))), Ret()))
    with pytest.raises(InternalCompilerError, match="types"):
        verify(l)


def test_format_is_assembly_text():
    text = format_lir(lowered(REDUCE))
    assert text.startswith(".version 1.0\n.kernel reduce\n")
    assert "atom.shared.add.f32 [0]" in text
    assert text.rstrip().endswith("}")


def test_float_immediates_compare_by_bits():
    assert Imm(0.0, F32) != Imm(-0.0, F32)
    assert Imm(1.5, F32) == Imm(1.5, F32)
    assert len({Imm(0.0, F32), Imm(-0.0, F32), Imm(0.0, F32)}) == 2
