"""Name resolution, expression typing and HIR validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import CompileError
from .hir import (
    INTRINSICS_UNARY_FLOAT,
    THREAD_BUILTINS,
    Assign,
    Barrier,
    Binary,
    Block,
    Call,
    Cast,
    Const,
    ExprStmt,
    FieldRef,
    For,
    FuncDecl,
    If,
    Index,
    KernelHIR,
    Let,
    MethodCall,
    New,
    Pos,
    Return,
    SourceUnit,
    Unary,
    Var,
    iter_exprs,
    iter_stmts,
)
from .types import (
    BOOL,
    COMPOUND_TO_ATOMIC,
    F32,
    I32,
    ArrayType,
    AtomicOp,
    Mode,
    ScalarType,
    Space,
    StructType,
    promote,
    widens_to,
)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    pos: Pos

    def __str__(self) -> str:
        return f"{self.pos}: {self.message}"


@dataclass
class Symbol:
    kind: str  # 'param', 'field', 'local', 'loop', 'this'
    type: object
    decl: object = None


class _TypeFailure(Exception):
    pass


class TypeEnv:
    """Scoped symbol table for one kernel or function body."""

    def __init__(self, unit: Optional[SourceUnit], kernel: Optional[KernelHIR] = None, func: Optional[FuncDecl] = None):
        self.unit = unit
        self.kernel = kernel
        self.func = func
        self.scopes = [{}]
        if kernel is not None:
            for f in kernel.fields:
                self.scopes[0][f.name] = Symbol("field", f.type, f)
            for p in kernel.params:
                self.scopes[0][p.name] = Symbol("param", p.type, p)
            self.scopes[0]["this"] = Symbol("this", StructType(kernel.name))
        if func is not None:
            for p in func.params:
                self.scopes[0][p.name] = Symbol("param", p.type, p)
            if func.owner is not None:
                self.scopes[0]["this"] = Symbol("this", StructType(func.owner))
        self.diags: list = []

    def push(self):
        self.scopes.append({})

    def pop(self):
        self.scopes.pop()

    def declare(self, name: str, sym: Symbol):
        self.scopes[-1][name] = sym

    def lookup(self, name: str) -> Optional[Symbol]:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def is_locally_declared(self, name: str) -> bool:
        sym = self.lookup(name)
        return sym is not None and sym.kind in ("local", "loop")

    def diag(self, message: str, pos: Pos):
        self.diags.append(Diagnostic(message, pos))
        raise _TypeFailure(message)

    # -- field resolution -------------------------------------------------------

    def struct_fields(self, type_name: str) -> dict:
        if self.kernel is not None and type_name == self.kernel.name:
            return {f.name: f.type for f in self.kernel.fields}
        if self.unit is None or self.unit.type_decl(type_name) is None:
            raise KeyError(type_name)
        return dict(self.unit.flattened_fields(type_name))

    def field_type(self, struct: StructType, name: str, pos: Pos):
        try:
            fields = self.struct_fields(struct.name)
        except KeyError:
            self.diag(f"undeclared composite type {struct.name!r}", pos)
        if name not in fields:
            self.diag(f"type {struct.name!r} has no field {name!r}", pos)
        return fields[name]

    # -- typing -----------------------------------------------------------------

    def type_of(self, e):
        """Type of `e`; raises CompileError if the expression is ill-typed."""
        try:
            return self._type(e)
        except _TypeFailure:
            d = self.diags[-1]
            raise CompileError(str(d), [d]) from None

    def try_type(self, e):
        try:
            return self._type(e)
        except _TypeFailure:
            return None

    def _type(self, e):
        if isinstance(e, Const):
            return e.type
        if isinstance(e, Var):
            sym = self.lookup(e.name)
            if sym is None:
                self.diag(f"undeclared identifier {e.name!r}", e.pos)
            return sym.type
        if isinstance(e, Unary):
            t = self._type(e.operand)
            if e.op == "-" and isinstance(t, ScalarType) and t.is_numeric:
                return t
            if e.op == "!" and t == BOOL:
                return BOOL
            if e.op == "~" and isinstance(t, ScalarType) and t.is_int:
                return t
            self.diag(f"operator {e.op!r} cannot be applied to {t}", e.pos)
        if isinstance(e, Binary):
            return self._binary(e)
        if isinstance(e, Index):
            bt = self._type(e.base)
            it = self._type(e.index)
            if not isinstance(bt, ArrayType):
                self.diag("indexing a value that is not an array", e.pos)
            if not (isinstance(it, ScalarType) and it.is_int):
                self.diag(f"array index must be an integer, got {it}", e.pos)
            return bt.elem
        if isinstance(e, FieldRef):
            ot = self._type(e.obj)
            if not isinstance(ot, StructType):
                self.diag(f"field access .{e.name} on non-composite value of type {ot}", e.pos)
            return self.field_type(ot, e.name, e.pos)
        if isinstance(e, Cast):
            t = self._type(e.operand)
            if not (isinstance(t, ScalarType) and t.is_numeric):
                self.diag(f"cannot cast {t} to {e.type}", e.pos)
            return e.type
        if isinstance(e, New):
            if self.unit is None or self.unit.type_decl(e.type_name) is None:
                self.diag(f"undeclared composite type {e.type_name!r}", e.pos)
            flat = self.unit.flattened_fields(e.type_name)
            if len(e.args) > len(flat):
                self.diag(f"too many constructor arguments for {e.type_name}", e.pos)
            for a, (fname, fty) in zip(e.args, flat):
                at = self._type(a)
                if not widens_to(at, fty):
                    self.diag(f"constructor argument for {e.type_name}.{fname}: cannot convert {at} to {fty}", a.pos)
            return StructType(e.type_name)
        if isinstance(e, Call):
            return self._call(e)
        if isinstance(e, MethodCall):
            ot = self._type(e.obj)
            if not isinstance(ot, StructType):
                self.diag(f"method call .{e.name}() on non-composite value", e.pos)
            m = self.unit.resolve_method(ot.name, e.name) if self.unit else None
            if m is None:
                self.diag(f"unresolved callee {ot.name}.{e.name}", e.pos)
            self._check_args(m, e.args, e.pos)
            return m.ret
        self.diag(f"unsupported expression {type(e).__name__}", getattr(e, "pos", Pos()))

    def _check_args(self, f: FuncDecl, args, pos):
        if len(args) != len(f.params):
            self.diag(f"{f.name} expects {len(f.params)} arguments, got {len(args)}", pos)
        for a, p in zip(args, f.params):
            at = self._type(a)
            if not widens_to(at, p.type):
                self.diag(f"argument {p.name!r} of {f.name}: cannot convert {at} to {p.type}", a.pos)

    def _call(self, e: Call):
        name, args = e.name, e.args
        if name in THREAD_BUILTINS:
            if len(args) != 1 or not isinstance(args[0], Const) or args[0].type != I32 or not 0 <= args[0].value <= 2:
                self.diag(f"{name}() takes a literal dimension 0, 1 or 2", e.pos)
            return I32
        if name == "len":
            if len(args) != 1:
                self.diag("len() takes one argument", e.pos)
            t = self._type(args[0])
            if not isinstance(t, ArrayType):
                self.diag("len() of a non-array value", e.pos)
            return I32
        if name in INTRINSICS_UNARY_FLOAT:
            if len(args) != 1:
                self.diag(f"{name}() takes one argument", e.pos)
            t = self._type(args[0])
            if not (isinstance(t, ScalarType) and t.is_numeric):
                self.diag(f"{name}() of non-numeric {t}", e.pos)
            return t if t.is_float else F32
        if name == "pow":
            if len(args) != 2:
                self.diag("pow() takes two arguments", e.pos)
            a, b = (self._type(x) for x in args)
            if not all(isinstance(t, ScalarType) and t.is_numeric for t in (a, b)):
                self.diag("pow() of non-numeric values", e.pos)
            t = promote(a, b)
            return t if t.is_float else F32
        if name == "popc":
            if len(args) != 1:
                self.diag("popc() takes one argument", e.pos)
            t = self._type(args[0])
            if not (isinstance(t, ScalarType) and t.is_int):
                self.diag("popc() needs an integer argument", e.pos)
            return I32
        if name == "abs":
            if len(args) != 1:
                self.diag("abs() takes one argument", e.pos)
            t = self._type(args[0])
            if not (isinstance(t, ScalarType) and t.is_numeric):
                self.diag("abs() of non-numeric value", e.pos)
            return t
        if name in ("min", "max"):
            if len(args) != 2:
                self.diag(f"{name}() takes two arguments", e.pos)
            a, b = (self._type(x) for x in args)
            if not all(isinstance(t, ScalarType) and t.is_numeric for t in (a, b)):
                self.diag(f"{name}() of non-numeric values", e.pos)
            return promote(a, b)
        f = self.unit.func(name) if self.unit else None
        if f is None:
            self.diag(f"unresolved callee {name!r}", e.pos)
        self._check_args(f, args, e.pos)
        return f.ret

    def _binary(self, e: Binary):
        lt = self._type(e.left)
        rt = self._type(e.right)
        op = e.op
        if not isinstance(lt, ScalarType) or not isinstance(rt, ScalarType):
            self.diag(f"operator {op!r} on non-scalar operands", e.pos)
        if op in ("&&", "||"):
            if lt != BOOL or rt != BOOL:
                self.diag(f"operator {op!r} needs bool operands", e.pos)
            return BOOL
        if op in ("==", "!="):
            if lt == BOOL and rt == BOOL:
                return BOOL
            if lt.is_numeric and rt.is_numeric:
                return BOOL
            self.diag(f"cannot compare {lt} with {rt}", e.pos)
        if op in ("<", "<=", ">", ">="):
            if lt.is_numeric and rt.is_numeric:
                return BOOL
            self.diag(f"cannot order {lt} and {rt}", e.pos)
        if op in ("&", "|", "^"):
            if lt == BOOL and rt == BOOL:
                return BOOL
            if lt.is_int and rt.is_int:
                return promote(lt, rt)
            self.diag(f"operator {op!r} needs integer or bool operands", e.pos)
        if op in ("<<", ">>"):
            if lt.is_int and rt.is_int:
                return lt
            self.diag(f"operator {op!r} needs integer operands", e.pos)
        if lt.is_numeric and rt.is_numeric:
            return promote(lt, rt)
        self.diag(f"operator {op!r} cannot be applied to {lt} and {rt}", e.pos)


def atomic_op_for(field, compound: Optional[str]) -> Optional[AtomicOp]:
    """Effective atomic combining op for an assignment to an @atomic field."""
    op = field.atomic
    if op is None:
        return None
    if op is AtomicOp.NONE:
        return COMPOUND_TO_ATOMIC.get(compound) if compound else None
    return op


def effective_atomic_op(k: KernelHIR, f) -> AtomicOp:
    """Combining op of @atomic field `f`, inferred from its compound writes if not explicit."""
    if f.atomic is not AtomicOp.NONE:
        return f.atomic
    for s in iter_stmts(k.body):
        if isinstance(s, Assign) and s.op is not None:
            t = s.target.base if isinstance(s.target, Index) else s.target
            if isinstance(t, (Var, FieldRef)) and t.name == f.name:
                return atomic_op_for(f, s.op)
    return AtomicOp.ADD


class _Validator:
    def __init__(self, kernel: KernelHIR, unit: Optional[SourceUnit]):
        self.k = kernel
        self.env = TypeEnv(unit, kernel=kernel)
        self.loop_vars: list = []

    def run(self) -> list:
        k = self.k
        for f in k.fields:
            if f.atomic is not None:
                elem = f.type.elem if isinstance(f.type, ArrayType) else f.type
                if elem.name not in ("i32", "f32"):
                    self.env.diags.append(Diagnostic(f"@atomic field {f.name!r} must be i32 or f32", f.pos))
                elif elem.name == "f32" and f.atomic not in (AtomicOp.ADD, AtomicOp.SUB, AtomicOp.NONE):
                    self.env.diags.append(Diagnostic(f"@atomic field {f.name!r}: f32 supports only ADD/SUB", f.pos))
        self.block(k.body, new_scope=False)
        return list(self.env.diags)

    def block(self, b: Block, new_scope: bool = True):
        if new_scope:
            self.env.push()
        for s in b.stmts:
            self.stmt(s)
        if new_scope:
            self.env.pop()

    def read(self, e, allow_new: bool = False):
        """Type-check `e` as an rvalue and flag reads of write-only data."""
        t = self.env.try_type(e)
        for sub in iter_exprs(e):
            self._check_read_access(sub)
        self._check_allocations(e, allow_new)
        return t

    def _check_allocations(self, e, allowed: bool):
        # `new` may initialise a local, feed a call argument or be a receiver;
        # anything else would let the object escape
        if isinstance(e, New):
            if not allowed:
                self.env.diags.append(Diagnostic("dynamic object allocation is not supported", e.pos))
            for a in e.args:
                self._check_allocations(a, False)
        elif isinstance(e, (Call, MethodCall)):
            if isinstance(e, MethodCall):
                self._check_allocations(e.obj, True)
            for a in e.args:
                self._check_allocations(a, True)
        elif isinstance(e, Unary):
            self._check_allocations(e.operand, False)
        elif isinstance(e, Binary):
            self._check_allocations(e.left, False)
            self._check_allocations(e.right, False)
        elif isinstance(e, Index):
            self._check_allocations(e.base, False)
            self._check_allocations(e.index, False)
        elif isinstance(e, FieldRef):
            self._check_allocations(e.obj, False)
        elif isinstance(e, Cast):
            self._check_allocations(e.operand, False)

    def _root_param(self, e):
        while isinstance(e, (Index, FieldRef)):
            if isinstance(e, Index):
                e = e.base
            else:
                e = e.obj
        if isinstance(e, Var):
            sym = self.env.lookup(e.name)
            if sym is not None and sym.kind == "param":
                return sym.decl
        return None

    def _check_read_access(self, e):
        if isinstance(e, (Var, FieldRef)):
            f = self._field_of_target(e)
            if f is not None and f.atomic is not None:
                self.env.diags.append(Diagnostic(f"@atomic field {f.name!r} cannot be read by the kernel", e.pos))
        if isinstance(e, (Index, FieldRef)):
            p = self._root_param(e)
            if p is not None and p.mode is Mode.WRITE:
                self.env.diags.append(Diagnostic(f"read of write-only parameter {p.name!r}", e.pos))

    def _field_of_target(self, target):
        """FieldDecl when `target` names a kernel field (bare, via this, or indexed)."""
        e = target.base if isinstance(target, Index) else target
        if isinstance(e, Var):
            sym = self.env.lookup(e.name)
            if sym is not None and sym.kind == "field":
                return sym.decl
        if isinstance(e, FieldRef) and isinstance(e.obj, Var) and e.obj.name == "this":
            return self.k.field(e.name)
        return None

    def stmt(self, s):
        env = self.env
        if isinstance(s, Block):
            self.block(s)
        elif isinstance(s, Let):
            if env.lookup(s.name) is not None and env.lookup(s.name).kind in ("local", "loop", "param", "field"):
                env.diags.append(Diagnostic(f"duplicate declaration of {s.name!r}", s.pos))
            t = self.read(s.init, allow_new=True)
            ty = s.type if s.type is not None else t
            if s.type is not None and t is not None and not widens_to(t, s.type):
                env.diags.append(Diagnostic(f"cannot initialise {s.name!r} of type {s.type} with {t}", s.pos))
            if isinstance(ty, ArrayType):
                env.diags.append(Diagnostic(f"local {s.name!r}: array-typed locals are not supported", s.pos))
            if isinstance(ty, StructType) and not isinstance(s.init, New):
                env.diags.append(Diagnostic(f"composite local {s.name!r} must be initialised with new", s.pos))
            env.declare(s.name, Symbol("local", ty, s))
        elif isinstance(s, Assign):
            self.assign(s)
        elif isinstance(s, For):
            types = [self.read(x) for x in (s.lo, s.hi) + ((s.step,) if s.step is not None else ())]
            for t, x in zip(types, (s.lo, s.hi, s.step)):
                if t is not None and not (isinstance(t, ScalarType) and t.is_int):
                    env.diags.append(Diagnostic(f"loop bound must be an integer, got {t}", x.pos))
            lt = types[0] if isinstance(types[0], ScalarType) and types[0].is_int else I32
            if isinstance(types[1], ScalarType) and types[1].is_int:
                lt = promote(lt, types[1])
            if env.lookup(s.var) is not None and env.lookup(s.var).kind in ("local", "loop", "param", "field"):
                env.diags.append(Diagnostic(f"duplicate declaration of {s.var!r}", s.pos))
            env.push()
            env.declare(s.var, Symbol("loop", lt, s))
            self.loop_vars.append(s.var)
            self.block(s.body, new_scope=False)
            self.loop_vars.pop()
            env.pop()
        elif isinstance(s, If):
            t = self.read(s.cond)
            if t is not None and t != BOOL:
                env.diags.append(Diagnostic(f"if condition must be bool, got {t}", s.cond.pos))
            self.block(s.then)
            if s.orelse is not None:
                self.block(s.orelse)
        elif isinstance(s, ExprStmt):
            self.read(s.expr)
        elif isinstance(s, Return):
            if s.value is not None:
                env.diags.append(Diagnostic("kernels cannot return a value", s.pos))
        elif isinstance(s, Barrier):
            pass
        else:
            env.diags.append(Diagnostic(f"unsupported statement {type(s).__name__}", getattr(s, "pos", Pos())))

    def assign(self, s: Assign):
        env = self.env
        target = s.target
        vt = self.read(s.value)
        field = self._field_of_target(target)
        atomic = field is not None and field.atomic is not None
        if isinstance(target, Index):
            self.read(target.index)
            if s.op is not None and not atomic:
                self.read(target)
            tt = env.try_type(target)
        elif isinstance(target, FieldRef):
            if not isinstance(target.obj, Var):
                self.read(target.obj)
            if s.op is not None and not atomic:
                self.read(target)
            tt = env.try_type(target)
        else:
            sym = env.lookup(target.name)
            if sym is None:
                env.diags.append(Diagnostic(f"undeclared identifier {target.name!r}", target.pos))
                return
            if sym.kind == "loop" and target.name in self.loop_vars:
                env.diags.append(Diagnostic(f"assignment to induction variable {target.name!r} inside its loop", s.pos))
            if sym.kind == "field" and sym.decl.atomic is not None and isinstance(sym.type, ScalarType):
                pass
            elif sym.kind == "this" or isinstance(sym.type, (ArrayType, StructType)):
                env.diags.append(Diagnostic(f"cannot assign to {target.name!r} of type {sym.type}", s.pos))
                return
            tt = sym.type
        if tt is None or vt is None:
            return
        if s.op is not None:
            probe = Binary(s.op, Const(0, tt) if tt != BOOL else Const(False, BOOL), Const(0, vt) if vt != BOOL else Const(False, BOOL))
            rt = env.try_type(probe)
            if rt is None:
                env.diags[-1] = Diagnostic(f"compound assignment {s.op}= cannot combine {tt} with {vt}", s.pos)
                return
            vt = rt
        if field is not None:
            if field.space is Space.CONSTANT:
                env.diags.append(Diagnostic(f"store to constant field {field.name!r}", s.pos))
            if field.atomic is not None:
                op = atomic_op_for(field, s.op)
                if op is None:
                    env.diags.append(Diagnostic(f"cannot infer atomic operation for field {field.name!r}", s.pos))
                elif s.op is not None and field.atomic is not AtomicOp.NONE and COMPOUND_TO_ATOMIC.get(s.op) is not field.atomic:
                    env.diags.append(
                        Diagnostic(f"{s.op}= does not match the @atomic op {field.atomic.name} of {field.name!r}", s.pos)
                    )
                vt = env.try_type(s.value)
                if vt is not None and not widens_to(vt, tt):
                    env.diags.append(Diagnostic(f"cannot assign {vt} to {field.name!r} of type {tt}", s.pos))
                return
        else:
            p = self._root_param(target)
            if p is not None and p.mode is Mode.READ:
                env.diags.append(Diagnostic(f"write to read-only parameter {p.name!r}", s.pos))
        if not widens_to(vt, tt):
            env.diags.append(Diagnostic(f"cannot assign {vt} to target of type {tt}", s.pos))


def validate_hir(k: KernelHIR, unit: Optional[SourceUnit] = None) -> list:
    """All invariant violations in `k`, each with a source position."""
    return _Validator(k, unit).run()


def check_kernel(k: KernelHIR, unit: Optional[SourceUnit] = None):
    diags = validate_hir(k, unit)
    if diags:
        raise CompileError(f"kernel {k.name!r} is invalid: " + "; ".join(str(d) for d in diags), diags)
