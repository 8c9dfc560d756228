"""Structured high-level IR (HIR) of annotated kernels.

HIR keeps loop nests explicit so the parallelizer can rewrite induction
schedules. Nodes are frozen dataclasses; passes build new trees with
`dataclasses.replace`. Source positions never take part in equality, so a
parse -> format -> parse round trip compares equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .types import (
    ArrayType,
    AtomicOp,
    IterationSpace,
    Mode,
    ScalarType,
    Space,
    StructType,
    Type,
)


@dataclass(frozen=True)
class Pos:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NOPOS = Pos()


def _pos():
    return field(default=NOPOS, compare=False, repr=False)


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: Union[int, float, bool]
    type: ScalarType
    pos: Pos = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Unary:
    op: str  # '-', '!', '~'
    operand: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Index:
    base: "Expr"
    index: "Expr"
    checked: bool = False
    pos: Pos = _pos()


@dataclass(frozen=True)
class FieldRef:
    obj: "Expr"
    name: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class MethodCall:
    obj: "Expr"
    name: str
    args: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class Cast:
    type: ScalarType
    operand: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class New:
    type_name: str
    args: tuple
    pos: Pos = _pos()


Expr = Union[Const, Var, Unary, Binary, Index, FieldRef, Call, MethodCall, Cast, New]

# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    stmts: tuple = ()
    pos: Pos = _pos()


@dataclass(frozen=True)
class Let:
    name: str
    type: Optional[Type]
    init: Expr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Assign:
    target: Expr
    value: Expr
    op: Optional[str] = None  # compound operator, e.g. '+' for '+='
    pos: Pos = _pos()


@dataclass(frozen=True)
class For:
    var: str
    lo: Expr
    hi: Expr
    step: Optional[Expr]
    body: Block
    pos: Pos = _pos()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Block
    orelse: Optional[Block] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Return:
    value: Optional[Expr] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class Barrier:
    pos: Pos = _pos()


Stmt = Union[Block, Let, Assign, For, If, ExprStmt, Return, Barrier]

# -- declarations ------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    type: Type
    mode: Optional[Mode] = None
    cachable: bool = False
    pos: Pos = _pos()


@dataclass(frozen=True)
class FieldDecl:
    name: str
    type: Type
    space: Space = Space.GLOBAL
    atomic: Optional[AtomicOp] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class JaccSpec:
    iteration_space: IterationSpace = IterationSpace.NONE
    exceptions: bool = False


@dataclass(frozen=True)
class KernelHIR:
    name: str
    params: tuple
    fields: tuple
    body: Block
    jacc: JaccSpec
    pos: Pos = _pos()

    def param(self, name: str) -> Optional[Param]:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def field(self, name: str) -> Optional[FieldDecl]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    @property
    def receiver_fields(self) -> tuple:
        """Fields that live in the host-visible receiver object."""
        return tuple(f for f in self.fields if f.space in (Space.GLOBAL, Space.CONSTANT))

    @property
    def receiver_type(self) -> str:
        return self.name

    @property
    def annotations(self) -> "AnnotationSet":
        return AnnotationSet(
            jacc=self.jacc,
            per_field={f.name: (f.atomic, f.space) for f in self.fields},
            per_param={p.name: (p.mode, p.cachable) for p in self.params},
        )


@dataclass(frozen=True)
class AnnotationSet:
    jacc: JaccSpec
    per_field: dict
    per_param: dict


@dataclass(frozen=True)
class FuncDecl:
    name: str
    params: tuple
    ret: Optional[Type]
    body: Block
    owner: Optional[str] = None  # composite type for methods
    pos: Pos = _pos()


@dataclass(frozen=True)
class CompositeTypeDecl:
    name: str
    super_type: Optional[str]
    fields: tuple  # ((name, type), ...)
    methods: tuple = ()
    pos: Pos = _pos()


@dataclass(frozen=True)
class SourceUnit:
    path: str
    text: str = field(compare=False, repr=False)
    kernels: tuple = ()
    type_decls: tuple = ()
    funcs: tuple = ()

    def kernel(self, name: str) -> KernelHIR:
        for k in self.kernels:
            if k.name == name:
                return k
        raise KeyError(f"no kernel named {name!r}")

    def type_decl(self, name: str) -> Optional[CompositeTypeDecl]:
        for t in self.type_decls:
            if t.name == name:
                return t
        return None

    def func(self, name: str) -> Optional[FuncDecl]:
        for f in self.funcs:
            if f.name == name:
                return f
        return None

    def replace_kernel(self, kernel: KernelHIR) -> "SourceUnit":
        ks = tuple(kernel if k.name == kernel.name else k for k in self.kernels)
        return SourceUnit(self.path, self.text, ks, self.type_decls, self.funcs)

    def flattened_fields(self, type_name: str) -> list:
        """Fields of `type_name` with the super chain's fields first."""
        chain = []
        seen = set()
        name = type_name
        while name is not None:
            if name in seen:
                raise ValueError(f"cyclic inheritance through {name!r}")
            seen.add(name)
            decl = self.type_decl(name)
            if decl is None:
                raise KeyError(f"undeclared composite type {name!r}")
            chain.append(decl)
            name = decl.super_type
        out = []
        for decl in reversed(chain):
            out.extend(decl.fields)
        return out

    def resolve_method(self, type_name: str, method: str) -> Optional[FuncDecl]:
        name = type_name
        seen = set()
        while name is not None and name not in seen:
            seen.add(name)
            decl = self.type_decl(name)
            if decl is None:
                return None
            for m in decl.methods:
                if m.name == method:
                    return m
            name = decl.super_type
        return None


# -- builtins ----------------------------------------------------------------

THREAD_BUILTINS = ("thread_id", "group_id", "group_size", "global_id", "global_size")
INTRINSICS_UNARY_FLOAT = ("sin", "cos", "sqrt", "exp", "log")
INTRINSICS = INTRINSICS_UNARY_FLOAT + ("pow", "popc", "abs", "min", "max")
CAST_NAMES = ("i32", "i64", "f32", "f64")
BUILTIN_CALLS = THREAD_BUILTINS + INTRINSICS + ("len",)


# -- traversal helpers ---------------------------------------------------------


def iter_exprs(e):
    """Yield `e` and every sub-expression, pre-order."""
    yield e
    if isinstance(e, Unary):
        yield from iter_exprs(e.operand)
    elif isinstance(e, Binary):
        yield from iter_exprs(e.left)
        yield from iter_exprs(e.right)
    elif isinstance(e, Index):
        yield from iter_exprs(e.base)
        yield from iter_exprs(e.index)
    elif isinstance(e, FieldRef):
        yield from iter_exprs(e.obj)
    elif isinstance(e, (Call, New)):
        for a in e.args:
            yield from iter_exprs(a)
    elif isinstance(e, MethodCall):
        yield from iter_exprs(e.obj)
        for a in e.args:
            yield from iter_exprs(a)
    elif isinstance(e, Cast):
        yield from iter_exprs(e.operand)


def stmt_exprs(s):
    """Top-level expressions directly owned by statement `s`."""
    if isinstance(s, Let):
        return [s.init]
    if isinstance(s, Assign):
        return [s.target, s.value]
    if isinstance(s, For):
        return [s.lo, s.hi] + ([s.step] if s.step is not None else [])
    if isinstance(s, If):
        return [s.cond]
    if isinstance(s, ExprStmt):
        return [s.expr]
    if isinstance(s, Return):
        return [s.value] if s.value is not None else []
    return []


def iter_stmts(s):
    """Yield `s` and all nested statements, pre-order."""
    yield s
    if isinstance(s, Block):
        for c in s.stmts:
            yield from iter_stmts(c)
    elif isinstance(s, For):
        yield from iter_stmts(s.body)
    elif isinstance(s, If):
        yield from iter_stmts(s.then)
        if s.orelse is not None:
            yield from iter_stmts(s.orelse)


def all_exprs(body):
    for s in iter_stmts(body):
        for e in stmt_exprs(s):
            yield from iter_exprs(e)


def map_expr(e, fn):
    """Rebuild `e` bottom-up, applying `fn` to each rebuilt node."""
    if isinstance(e, Unary):
        e = Unary(e.op, map_expr(e.operand, fn), e.pos)
    elif isinstance(e, Binary):
        e = Binary(e.op, map_expr(e.left, fn), map_expr(e.right, fn), e.pos)
    elif isinstance(e, Index):
        e = Index(map_expr(e.base, fn), map_expr(e.index, fn), e.checked, e.pos)
    elif isinstance(e, FieldRef):
        e = FieldRef(map_expr(e.obj, fn), e.name, e.pos)
    elif isinstance(e, Call):
        e = Call(e.name, tuple(map_expr(a, fn) for a in e.args), e.pos)
    elif isinstance(e, New):
        e = New(e.type_name, tuple(map_expr(a, fn) for a in e.args), e.pos)
    elif isinstance(e, MethodCall):
        e = MethodCall(map_expr(e.obj, fn), e.name, tuple(map_expr(a, fn) for a in e.args), e.pos)
    elif isinstance(e, Cast):
        e = Cast(e.type, map_expr(e.operand, fn), e.pos)
    return fn(e)


def map_stmt_exprs(s, fn):
    """Apply `map_expr(., fn)` to every expression in statement tree `s`."""
    m = lambda e: map_expr(e, fn)  # noqa: E731
    if isinstance(s, Block):
        return Block(tuple(map_stmt_exprs(c, fn) for c in s.stmts), s.pos)
    if isinstance(s, Let):
        return Let(s.name, s.type, m(s.init), s.pos)
    if isinstance(s, Assign):
        return Assign(m(s.target), m(s.value), s.op, s.pos)
    if isinstance(s, For):
        return For(
            s.var,
            m(s.lo),
            m(s.hi),
            None if s.step is None else m(s.step),
            map_stmt_exprs(s.body, fn),
            s.pos,
        )
    if isinstance(s, If):
        return If(
            m(s.cond),
            map_stmt_exprs(s.then, fn),
            None if s.orelse is None else map_stmt_exprs(s.orelse, fn),
            s.pos,
        )
    if isinstance(s, ExprStmt):
        return ExprStmt(m(s.expr), s.pos)
    if isinstance(s, Return):
        return Return(None if s.value is None else m(s.value), s.pos)
    return s


def find_first_loop(body: Block) -> Optional[For]:
    for s in body.stmts:
        if isinstance(s, For):
            return s
    return None


def children(e) -> list:
    """Direct sub-expressions of `e`."""
    if isinstance(e, (Unary, Cast)):
        return [e.operand]
    if isinstance(e, Binary):
        return [e.left, e.right]
    if isinstance(e, Index):
        return [e.base, e.index]
    if isinstance(e, FieldRef):
        return [e.obj]
    if isinstance(e, (Call, New)):
        return list(e.args)
    if isinstance(e, MethodCall):
        return [e.obj] + list(e.args)
    return []


def map_own_exprs(s, fn):
    """Like `map_stmt_exprs` but leaves nested statement bodies alone."""
    if isinstance(s, For):
        return For(
            s.var,
            map_expr(s.lo, fn),
            map_expr(s.hi, fn),
            None if s.step is None else map_expr(s.step, fn),
            s.body,
            s.pos,
        )
    if isinstance(s, If):
        return If(map_expr(s.cond, fn), s.then, s.orelse, s.pos)
    if isinstance(s, Block):
        return s
    return map_stmt_exprs(s, fn)
