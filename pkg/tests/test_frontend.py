import pytest

from jaccsim.bench.kernels import SOURCE
from jaccsim.errors import ParseError
from jaccsim.frontend import parse_kernel, tokenize
from jaccsim.hir import Assign, For, iter_stmts
from jaccsim.hirfmt import format_unit
from jaccsim.types import AtomicOp, IterationSpace, Mode, Space

from conftest import ONE_D


def test_vector_add_shape(vadd_src):
    u = parse_kernel(vadd_src)
    (k,) = u.kernels
    loops = [s for s in iter_stmts(k.body) if isinstance(s, For)]
    assigns = [s for s in iter_stmts(k.body) if isinstance(s, Assign)]
    assert len(loops) == 1
    assert not any(isinstance(s, For) for s in iter_stmts(loops[0].body))
    assert len(assigns) == 1
    assert [p.mode for p in k.params] == [Mode.READ, Mode.READ, Mode.WRITE]
    assert k.jacc.iteration_space is IterationSpace.ONE_DIMENSION


def test_atomic_field_annotation():
    u = parse_kernel(ONE_D + """kernel reduce(@read a: f32[]) {
  @atomic(op=ADD) field result: f32;
  for i in 0..len(a) { result = a[i]; }
}""")
    k = u.kernels[0]
    assert k.annotations.per_field["result"] == (AtomicOp.ADD, Space.GLOBAL)
    assert k.field("result").atomic is AtomicOp.ADD


def test_field_spaces_and_cachable():
    u = parse_kernel(ONE_D + """kernel k(@read(cachable=true) a: f32[]) {
  @shared field s: f32[16];
  @private field p: i32;
  @constant field c: f32;
  for i in 0..len(a) { p = i; }
}""")
    k = u.kernels[0]
    assert k.field("s").space is Space.SHARED
    assert k.field("p").space is Space.PRIVATE
    assert k.field("c").space is Space.CONSTANT
    assert k.param("a").cachable
    assert [f.name for f in k.receiver_fields] == ["c"]


@pytest.mark.parametrize(
    "src, needle",
    [
        ("@jacc(iterationSpace=FOUR)\nkernel k(@read a: f32[]) { }", "unknown annotation value"),
        ("kernel k(@read a: f32[]) { }", "lacks a @jacc annotation"),
        (ONE_D + "kernel k(@atomic(op=ADD) a: f32[]) { }", "not allowed on parameter"),
        (ONE_D + "kernel k(@read a: f32[], @read a: f32[]) { }", "duplicate parameter"),
        (ONE_D + "kernel k(@read a: f32[]) { @foo field x: f32; }", "unknown annotation @foo"),
        (ONE_D + "kernel k(@read a: f32[]) { @atomic(op=ADD) @shared field x: f32; }", "at most one of"),
        (ONE_D + "kernel k(@read a: f32[]) { @atomic(op=MUL) field x: f32; }", "unknown annotation value"),
        ("type A : B { x: f32; }\ntype B : A { y: f32; }\n" + ONE_D + "kernel k(@read a: A) { }", "cyclic inheritance"),
        (ONE_D + "kernel k(@read a: f32[]) { }\n" + ONE_D + "kernel k(@read a: f32[]) { }", "duplicate kernel"),
    ],
)
def test_rejections(src, needle):
    with pytest.raises(ParseError, match=needle):
        parse_kernel(src)


def test_syntax_error_carries_position_and_expected_set():
    with pytest.raises(ParseError) as ei:
        parse_kernel(ONE_D + "kernel k(@write a: f32[]) {\n  for i in 0..len(a) { a[i] = 1.0 }\n}")
    e = ei.value
    assert (e.line, e.col) == (3, 35)
    assert e.expected == ["';'"]
    assert str(e).startswith("3:35:")


def test_tokenizer_tracks_lines():
    toks = tokenize("let x = 1;\n  y += 2.5f;")
    y = next(t for t in toks if t.text == "y")
    assert (y.line, y.col) == (2, 3)
    assert [t.kind for t in toks if t.text in ("1", "2.5f")] == ["int", "float"]


def test_benchmark_library_round_trips():
    u = parse_kernel(SOURCE)
    text = format_unit(u)
    again = parse_kernel(text)
    assert again == u
    assert format_unit(again) == text


def test_inheritance_flattens_super_first():
    u = parse_kernel("type P { x: f32; y: f32; }\ntype Q : P { z: f32; }\n" + ONE_D + "kernel k(@read q: Q, @write o: f32[]) { for i in 0..len(o) { o[i] = q.z; } }")
    assert [n for n, _ in u.flattened_fields("Q")] == ["x", "y", "z"]
