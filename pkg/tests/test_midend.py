import numpy as np
import pytest

from jaccsim.bench.kernels import BENCHMARK_KERNELS, library
from jaccsim.bench.suite import interpret_kernel, simulate_kernel
from jaccsim.errors import BoundsTrap, CompileError
from jaccsim.hir import For, iter_stmts
from jaccsim.hirfmt import format_kernel
from jaccsim.lir import Block, Imm, Instr, KernelLIR, Reg, Ret, Trap, verify
from jaccsim.lower import lower_to_lir
from jaccsim.memory.schema import kernel_schemas
from jaccsim.passes.bridge import isa_bridge
from jaccsim.passes.inline import inline_calls
from jaccsim.passes.optimize import copy_propagate, dce, dominators, fold, licm, natural_loops
from jaccsim.passes.parallelize import parallelize_first_loop_nest
from jaccsim.passes.pipeline import DEFAULT_CONFIG, PassConfig, dump_after, optimize_lir, prepare_hir
from jaccsim.passes.scalar_replace import scalar_replace_allocations
from jaccsim.types import BOOL, F32

from conftest import ONE_D, compiled, lowered, unit_of

CHECKED = "@jacc(iterationSpace=ONE_DIMENSION, exceptions=true)\n"


def test_parallelize_one_dimension():
    u = unit_of(ONE_D + "kernel k(@read a: f32[], @write c: f32[]) { for i in 0..len(c) { c[i] = a[i]; } }")
    text = format_kernel(parallelize_first_loop_nest(u.kernels[0]))
    assert "for i in global_id(0)..len(c) step global_size(0)" in text


def test_parallelize_two_dimensions_maps_outer_to_dim0():
    u = unit_of("@jacc(iterationSpace=TWO_DIMENSION)\nkernel m(@write c: f32[], n: i32) { for i in 0..n { for j in 0..n { c[i*n+j] = 1.0; } } }")
    text = format_kernel(parallelize_first_loop_nest(u.kernels[0]))
    assert "for i in global_id(0)..n step global_size(0)" in text
    assert "for j in global_id(1)..n step global_size(1)" in text


def test_parallelize_none_leaves_kernel_alone():
    u = unit_of("@jacc(iterationSpace=NONE)\nkernel m(@write c: f32[], n: i32) { for i in 0..n { c[i] = 1.0; } }")
    k = u.kernels[0]
    assert parallelize_first_loop_nest(k) == k


def test_inline_replaces_call():
    u = unit_of("func square(x: f32) -> f32 { return x * x; }\n" + ONE_D + "kernel k(@read a: f32[], @write o: f32[]) { for i in 0..len(o) { o[i] = square(a[i]); } }")
    k = inline_calls(u.kernels[0], u)
    text = format_kernel(k)
    assert "square(" not in text
    assert "*" in text


def test_unresolved_callee():
    u = unit_of(ONE_D + "kernel k(@write o: f32[]) { for i in 0..len(o) { o[i] = nope(1.0); } }")
    with pytest.raises(CompileError, match="unresolved callee 'nope'"):
        inline_calls(u.kernels[0], u)


def test_recursion_hits_depth_limit():
    src = "func f(x: i32) -> i32 { return f(x); }\n" + ONE_D + "kernel r(@write o: i32[]) { for i in 0..len(o) { o[i] = f(i); } }"
    with pytest.raises(CompileError, match="inline depth limit 8 exceeded"):
        compiled(src)
    with pytest.raises(CompileError, match="depth limit 2"):
        compiled(src, cfg=PassConfig(inline_depth_limit=2))


def test_scalar_replacement_flattens_locals():
    u = unit_of("type P { x: f32; y: f32; }\n" + ONE_D + "kernel s(@write o: f32[]) { for i in 0..len(o) { let p = new P(1.0, 2.0); o[i] = p.x + p.y; } }")
    text = format_kernel(scalar_replace_allocations(u.kernels[0], u))
    assert "new" not in text
    assert "let p__x: f32 = 1.0;" in text and "p__x + p__y" in text


def test_allocation_with_array_field_is_rejected():
    u = unit_of("type Q { v: f32[4]; }\n" + ONE_D + "kernel s(@write o: f32[]) { for i in 0..len(o) { let q = new Q(); o[i] = 1.0; } }")
    with pytest.raises(CompileError, match="dynamic object allocation is not supported"):
        scalar_replace_allocations(u.kernels[0], u)


GATHER = "kernel g(@read a: f32[], @read idx: i32[], @write o: f32[]) { for i in 0..len(o) { o[i] = a[idx[i]]; } }"


def _traps(ck):
    return sum(isinstance(b.term, Trap) for b in ck.lir.blocks)


def test_exception_checks_toggle():
    assert _traps(compiled(CHECKED + GATHER)) >= 1
    assert _traps(compiled(ONE_D + GATHER)) == 0
    assert _traps(compiled(CHECKED + GATHER, cfg=DEFAULT_CONFIG.without("exceptions"))) == 0


def test_bounds_trap_matches_interpreter():
    u = unit_of(CHECKED + GATHER)
    args = dict(a=np.ones(8, np.float32), idx=np.array([0, 1, 2, 8, 0, 0, 0, 0], np.int32), o=np.zeros(8, np.float32))
    with pytest.raises(BoundsTrap, match="kernel 'g'"):
        simulate_kernel(u, "g", args, 8)
    with pytest.raises(BoundsTrap, match="index 8 out of bounds"):
        interpret_kernel(u, "g", args)


FOLDME = ONE_D + "kernel k(@write c: f32[], @read n: i32) { for i in 0..len(c) { let t = n * 4; let x = 2 * 8 + 1; c[i] = f32(t + x); } }"


def test_fold_evaluates_constants():
    l = fold(copy_propagate(fold(lowered(FOLDME))))
    verify(l)
    imms = {s.value for ins in l.instructions() for s in ins.srcs if isinstance(s, Imm)}
    assert 17 in imms
    assert not any(ins.op == "mul" and all(isinstance(s, Imm) for s in ins.srcs) for ins in l.instructions())


def test_licm_hoists_invariant_multiply():
    l = lowered(FOLDME)

    def mul_in_loop(l):
        loops = natural_loops(l, dominators(l))
        body = set().union(*(b for _, b in loops))
        return any(ins.op == "mul" and Imm(4, ins.ty) in ins.srcs for b in l.blocks if b.label in body for ins in b.instrs)

    assert mul_in_loop(l)
    h = licm(l)
    verify(h)
    assert not mul_in_loop(h)


def test_dce_removes_unused_work():
    src = ONE_D + "kernel k(@read a: f32[], @write c: f32[]) { for i in 0..len(c) { let dead = a[i] * 3.0; c[i] = a[i]; } }"
    l = lowered(src)
    d = dce(l)
    verify(d)
    assert d.instr_count() < l.instr_count()
    assert not any(ins.op == "mul" for ins in d.instructions())


DIAMOND = ONE_D + "kernel d(@read a: f32[], @write o: f32[]) { for i in 0..len(o) { let v = a[i]; let r = 0.0; if (v > 0.0) { r = v * 2.0; } else { r = v - 1.0; } o[i] = r; } }"


def test_predication_turns_diamond_into_select():
    on = compiled(DIAMOND)
    off = compiled(DIAMOND, cfg=DEFAULT_CONFIG.without("predicate"))
    assert on.lir.cond_branch_count() == off.lir.cond_branch_count() - 1
    assert any(ins.op == "selp" for ins in on.lir.instructions())
    assert on.lir.emitted_count() < off.lir.emitted_count()
    a = np.linspace(-2, 2, 64, dtype=np.float32)
    u = unit_of(DIAMOND)
    got = simulate_kernel(u, "d", {"a": a, "o": np.zeros(64, np.float32)}, 64)["o"]
    assert np.array_equal(got, np.where(a > 0, a * 2, a - 1).astype(np.float32))


def test_barrier_arm_is_not_predicated():
    src = ONE_D + "kernel b(@read a: f32[], @write o: f32[]) { @shared field s: f32[4]; for i in 0..len(o) { if (a[i] > 0.0) { barrier(); } o[i] = 1.0; } }"
    ck = compiled(src)
    assert ck.lir.cond_branch_count() == compiled(src, cfg=DEFAULT_CONFIG.without("predicate")).lir.cond_branch_count()
    assert "barrier.group" in ck.vka


def test_bridge_materializes_intrinsic_immediate():
    r = Reg(1, F32)
    l = KernelLIR("t", (), (Block(0, (Instr("sin", F32, r, (Imm(0.5, F32),)),), Ret()),))
    b = isa_bridge(l)
    verify(b)
    mov, sin = b.blocks[0].instrs
    assert mov.op == "mov" and mov.srcs == (Imm(0.5, F32),)
    assert sin.srcs == (mov.dst,)


def test_bridge_drops_false_guard():
    r = Reg(1, F32)
    l = KernelLIR("t", (), (Block(0, (Instr("mov", F32, r, (Imm(1.0, F32),), guard=(Imm(False, BOOL), False)),), Ret()),))
    assert isa_bridge(l).blocks[0].instrs == ()


@pytest.mark.parametrize("name", BENCHMARK_KERNELS)
def test_optimizer_reaches_fixed_point(name):
    u = library()
    k = prepare_hir(u.kernel(name), u)
    once, _ = optimize_lir(lower_to_lir(k, kernel_schemas(k, u), u))
    twice, rounds = optimize_lir(once)
    assert twice == once
    assert rounds == 1


def test_dump_after_rejects_unknown_pass():
    with pytest.raises(ValueError, match="unknown pass"):
        dump_after(library(), "vadd", "vectorize")
    with pytest.raises(ValueError, match="disabled"):
        dump_after(library(), "vadd", "cse", DEFAULT_CONFIG.without("cse"))


def test_parallelized_loop_count_preserved():
    k = library().kernel("matmul")
    p = parallelize_first_loop_nest(k)
    assert sum(isinstance(s, For) for s in iter_stmts(p.body)) == sum(isinstance(s, For) for s in iter_stmts(k.body))
