"""Serial reference interpreter for kernel HIR.

The kernel (and every user function it reaches) is translated to Python
source once and cached. Integer values are Python ints wrapped to their
width after each operation; f32/f64 values are numpy scalars so rounding
matches the device. Every array access is bounds-checked. Thread builtins
describe a single thread, barriers are no-ops, and the loop schedule is the
one written in the source: parallelization is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BoundsTrap, CompileError, KernelTrap
from .hir import (
    INTRINSICS_UNARY_FLOAT,
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
    Return,
    SourceUnit,
    Unary,
    Var,
)
from .objects import Record
from .typecheck import Symbol, TypeEnv, atomic_op_for, check_kernel, effective_atomic_op
from .types import BOOL, F32, F64, I32, I64, ArrayType, AtomicOp, ScalarType, Space, StructType, promote


@dataclass
class HostEnv:
    """Argument bindings plus receiver field values for one kernel run."""

    bindings: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)


# -- runtime helpers used by generated code -----------------------------------

_M32 = 0xFFFFFFFF
_M64 = 0xFFFFFFFFFFFFFFFF


def _w32(x):
    return ((x + 0x80000000) & _M32) - 0x80000000


def _w64(x):
    return ((x + 0x8000000000000000) & _M64) - 0x8000000000000000


def _idiv(a, b):
    if b == 0:
        return 0
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _irem(a, b):
    if b == 0:
        return 0
    r = abs(a) % abs(b)
    return r if a >= 0 else -r


def _f2i(x, lo, hi):
    if x != x:
        return 0
    if x >= hi:
        return hi
    if x <= lo:
        return lo
    return int(x)


def _f2i32(x):
    return _f2i(float(x), -(2**31), 2**31 - 1)


def _f2i64(x):
    # i64 max is not representable as a double; compare against 2**63
    f = float(x)
    if f != f:
        return 0
    if f >= 9.223372036854775807e18:
        return 2**63 - 1
    if f <= -9.223372036854775808e18:
        return -(2**63)
    return int(f)


def _popc(x, mask):
    return bin(x & mask).count("1")


_IDENTITY = {AtomicOp.ADD: 0, AtomicOp.SUB: 0, AtomicOp.OR: 0, AtomicOp.XOR: 0, AtomicOp.AND: -1}


def atomic_identity(op: AtomicOp, ty: ScalarType):
    v = _IDENTITY.get(op, 0)
    return ty.dtype.type(v)


class _Trap(Exception):
    pass


# -- translation --------------------------------------------------------------


class _Emitter:
    def __init__(self, unit: Optional[SourceUnit], kernel: KernelHIR):
        self.unit = unit
        self.kernel = kernel
        self.consts: dict = {}
        self.lines: list = []
        self.funcs_done: set = set()
        self.func_queue: list = []
        self.tmp = 0

    # names
    def const(self, value, ty: ScalarType) -> str:
        if ty in (I32, I64):
            return str(int(value))
        if ty == BOOL:
            return "True" if value else "False"
        key = (ty.name, np.asarray(value, dtype=ty.dtype).tobytes())
        if key not in self.consts:
            self.consts[key] = (f"_k{len(self.consts)}", ty.dtype.type(value))
        return self.consts[key][0]

    def fresh(self) -> str:
        self.tmp += 1
        return f"_t{self.tmp}"

    @staticmethod
    def conv(code: str, src, dst) -> str:
        if src == dst or not isinstance(src, ScalarType):
            return code
        if dst == I32:
            if src == I64:
                return f"_w32({code})"
            return f"_f2i32({code})"
        if dst == I64:
            if src == I32:
                return code
            return f"_f2i64({code})"
        if dst == F32:
            return f"_f32({code})"
        if dst == F64:
            return f"_f64({code})"
        return code

    # expressions
    def expr(self, e, env: TypeEnv):
        """Return (python_code, type)."""
        if isinstance(e, Const):
            return self.const(e.value, e.type), e.type
        if isinstance(e, Var):
            sym = env.lookup(e.name)
            if sym.kind == "field":
                return self.field_code(sym.decl), sym.type
            if sym.kind == "this":
                return "_this", sym.type
            return f"v_{e.name}", sym.type
        if isinstance(e, Unary):
            c, t = self.expr(e.operand, env)
            if e.op == "!":
                return f"(not {c})", BOOL
            if e.op == "~":
                return f"(~{c})", t
            if t == I32:
                return f"_w32(-{c})", t
            if t == I64:
                return f"_w64(-{c})", t
            return f"(-{c})", t
        if isinstance(e, Binary):
            return self.binary(e, env)
        if isinstance(e, Index):
            base, bt = self.expr(e.base, env)
            idx, _ = self.expr(e.index, env)
            load = f"{base}[_ck({idx}, {base})]"
            if bt.elem.is_int:
                return f"int({load})", bt.elem
            if bt.elem == BOOL:
                return f"bool({load})", BOOL
            return load, bt.elem
        if isinstance(e, FieldRef):
            if isinstance(e.obj, Var) and e.obj.name == "this" and env.kernel is not None:
                f = self.kernel.field(e.name)
                return self.field_code(f), f.type
            obj, ot = self.expr(e.obj, env)
            ty = env.field_type(ot, e.name, e.pos)
            return f"{obj}[{e.name!r}]", ty
        if isinstance(e, Cast):
            c, t = self.expr(e.operand, env)
            return self.conv(c, t, e.type), e.type
        if isinstance(e, New):
            flat = self.unit.flattened_fields(e.type_name)
            items = []
            for i, (fname, fty) in enumerate(flat):
                if i < len(e.args):
                    c, t = self.expr(e.args[i], env)
                    items.append(f"{fname!r}: {self.conv(c, t, fty)}")
                elif isinstance(fty, ArrayType):
                    items.append(f"{fname!r}: _zeros({fty.length}, {fty.elem.name!r})")
                else:
                    items.append(f"{fname!r}: {self.const(0, fty)}")
            return "{" + ", ".join(items) + "}", StructType(e.type_name)
        if isinstance(e, Call):
            return self.call(e, env)
        if isinstance(e, MethodCall):
            obj, ot = self.expr(e.obj, env)
            m = self.unit.resolve_method(ot.name, e.name)
            args = [obj] + [self.arg(a, p.type, env) for a, p in zip(e.args, m.params)]
            return f"{self.func_name(m)}({', '.join(args)})", m.ret
        raise CompileError(f"interpreter cannot evaluate {type(e).__name__}")

    def field_code(self, f) -> str:
        if isinstance(f.type, ArrayType):
            return f"F_{f.name}"
        return f"_F[{f.name!r}]"

    def arg(self, a, ty, env) -> str:
        c, t = self.expr(a, env)
        return self.conv(c, t, ty)

    def func_name(self, f: FuncDecl) -> str:
        name = f"m_{f.owner}_{f.name}" if f.owner else f"fn_{f.name}"
        if name not in self.funcs_done:
            self.funcs_done.add(name)
            self.func_queue.append((name, f))
        return name

    def call(self, e: Call, env):
        n, args = e.name, e.args
        if n in ("global_id", "thread_id", "group_id"):
            return "0", I32
        if n in ("global_size", "group_size"):
            return "1", I32
        if n == "len":
            c, _ = self.expr(args[0], env)
            return f"len({c})", I32
        if n in INTRINSICS_UNARY_FLOAT:
            c, t = self.expr(args[0], env)
            rt = t if t.is_float else F32
            return f"_np.{n}({self.conv(c, t, rt)})", rt
        if n == "pow":
            (a, at), (b, bt) = self.expr(args[0], env), self.expr(args[1], env)
            p = promote(at, bt)
            rt = p if p.is_float else F32
            return f"_np.power({self.conv(a, at, rt)}, {self.conv(b, bt, rt)})", rt
        if n == "popc":
            c, t = self.expr(args[0], env)
            return f"_popc({c}, {_M32 if t == I32 else _M64})", I32
        if n == "abs":
            c, t = self.expr(args[0], env)
            if t == I32:
                return f"_w32(abs({c}))", t
            if t == I64:
                return f"_w64(abs({c}))", t
            return f"_np.abs({c})", t
        if n in ("min", "max"):
            (a, at), (b, bt) = self.expr(args[0], env), self.expr(args[1], env)
            p = promote(at, bt)
            a, b = self.conv(a, at, p), self.conv(b, bt, p)
            if p.is_int:
                return f"{n}({a}, {b})", p
            fn = "minimum" if n == "min" else "maximum"
            return f"_np.{fn}({a}, {b})", p
        f = self.unit.func(n)
        cargs = [self.arg(a, p.type, env) for a, p in zip(args, f.params)]
        return f"{self.func_name(f)}({', '.join(cargs)})", f.ret

    def binary(self, e: Binary, env):
        return self.binary_codes(e.op, self.expr(e.left, env), self.expr(e.right, env))

    def binary_codes(self, op: str, left, right):
        (a, at), (b, bt) = left, right
        if op == "&&":
            return f"({a} and {b})", BOOL
        if op == "||":
            return f"({a} or {b})", BOOL
        if at == BOOL and bt == BOOL:
            if op in ("==", "!="):
                return f"({a} {op} {b})", BOOL
            return f"bool({a} {op} {b})", BOOL
        if op in ("<<", ">>"):
            mask = 31 if at == I32 else 63
            if op == "<<":
                wrap = "_w32" if at == I32 else "_w64"
                return f"{wrap}({a} << ({b} & {mask}))", at
            return f"({a} >> ({b} & {mask}))", at
        p = promote(at, bt)
        a, b = self.conv(a, at, p), self.conv(b, bt, p)
        if op in ("==", "!=", "<", "<=", ">", ">="):
            return f"bool({a} {op} {b})", BOOL
        if p.is_int:
            wrap = "_w32" if p == I32 else "_w64"
            if op in ("+", "-", "*"):
                return f"{wrap}({a} {op} {b})", p
            if op == "/":
                return f"{wrap}(_idiv({a}, {b}))", p
            if op == "%":
                return f"_irem({a}, {b})", p
            return f"({a} {op} {b})", p
        if op == "%":
            return f"_np.fmod({a}, {b})", p
        return f"({a} {op} {b})", p

    # statements
    def emit(self, line: str, depth: int):
        self.lines.append("    " * depth + line)

    def block(self, b: Block, env: TypeEnv, depth: int, scope: bool = True):
        start = len(self.lines)
        if scope:
            env.push()
        for s in b.stmts:
            self.stmt(s, env, depth)
        if scope:
            env.pop()
        if len(self.lines) == start:
            self.emit("pass", depth)

    def stmt(self, s, env: TypeEnv, depth: int):
        if isinstance(s, Block):
            self.block(s, env, depth)
        elif isinstance(s, Let):
            c, t = self.expr(s.init, env)
            ty = s.type or t
            self.emit(f"v_{s.name} = {self.conv(c, t, ty)}", depth)
            env.declare(s.name, Symbol("local", ty, s))
        elif isinstance(s, Assign):
            self.assign(s, env, depth)
        elif isinstance(s, For):
            lo, lt = self.expr(s.lo, env)
            hi, ht = self.expr(s.hi, env)
            vt = promote(lt, ht)
            step = "1"
            if s.step is not None:
                sc, st = self.expr(s.step, env)
                step = self.conv(sc, st, vt)
            st_name = self.fresh()
            self.emit(f"{st_name} = {step}", depth)
            self.emit(f"if {st_name} <= 0: raise _Trap('loop step must be positive')", depth)
            self.emit(f"for v_{s.var} in range({self.conv(lo, lt, vt)}, {self.conv(hi, ht, vt)}, {st_name}):", depth)
            env.push()
            env.declare(s.var, Symbol("loop", vt, s))
            self.block(s.body, env, depth + 1, scope=False)
            env.pop()
        elif isinstance(s, If):
            c, _ = self.expr(s.cond, env)
            self.emit(f"if {c}:", depth)
            self.block(s.then, env, depth + 1)
            if s.orelse is not None:
                self.emit("else:", depth)
                self.block(s.orelse, env, depth + 1)
        elif isinstance(s, ExprStmt):
            c, _ = self.expr(s.expr, env)
            self.emit(c, depth)
        elif isinstance(s, Return):
            if s.value is None:
                self.emit("return", depth)
            else:
                c, t = self.expr(s.value, env)
                ret = env.func.ret if env.func is not None else t
                self.emit(f"return {self.conv(c, t, ret)}", depth)
        elif isinstance(s, Barrier):
            self.emit("pass", depth)
        else:
            raise CompileError(f"interpreter cannot run {type(s).__name__}")

    def _target_field(self, target, env):
        e = target.base if isinstance(target, Index) else target
        if isinstance(e, Var):
            sym = env.lookup(e.name)
            if sym is not None and sym.kind == "field":
                return sym.decl
        if isinstance(e, FieldRef) and isinstance(e.obj, Var) and e.obj.name == "this" and env.kernel is not None:
            return self.kernel.field(e.name)
        return None

    def assign(self, s: Assign, env, depth):
        target = s.target
        vc, vt = self.expr(s.value, env)
        f = self._target_field(target, env) if env.kernel is not None else None
        if isinstance(target, Index):
            base, bt = self.expr(target.base, env)
            idx, _ = self.expr(target.index, env)
            slot = self.fresh()
            self.emit(f"{slot} = _ck({idx}, {base})", depth)
            ref = f"{base}[{slot}]"
            tt = bt.elem
            cur = f"int({ref})" if tt.is_int else ref
        elif isinstance(target, FieldRef):
            ref, tt = self.expr(target, env)
            cur = ref
        else:
            ref, tt = self.expr(target, env)
            cur = ref
        if f is not None and f.atomic is not None:
            op = atomic_op_for(f, s.op)
            value = self.conv(vc, vt, tt)
            if op is AtomicOp.ADD:
                new = f"{cur} + {value}"
            elif op is AtomicOp.SUB:
                new = f"{cur} - {value}"
            else:
                new = f"{cur} {'&' if op is AtomicOp.AND else '|' if op is AtomicOp.OR else '^'} {value}"
            if tt == I32:
                new = f"_w32({new})"
            self.emit(f"{ref} = {new}", depth)
            return
        if s.op is None:
            self.emit(f"{ref} = {self.conv(vc, vt, tt)}", depth)
            return
        code, rt = self.binary_codes(s.op, (cur, tt), (vc, vt))
        self.emit(f"{ref} = {self.conv(code, rt, tt)}", depth)

    # driver
    def kernel_source(self) -> str:
        k = self.kernel
        env = TypeEnv(self.unit, kernel=k)
        self.emit("def _kernel(_B, _F, _L):", 0)
        for p in k.params:
            self.emit(f"v_{p.name} = _B[{p.name!r}]", 1)
        self.emit("_this = _F", 1)
        for f in k.fields:
            if isinstance(f.type, ArrayType):
                self.emit(f"F_{f.name} = _L[{f.name!r}]", 1)
        self.block(k.body, env, 1, scope=False)
        while self.func_queue:
            name, f = self.func_queue.pop()
            self.function_source(name, f)
        return "\n".join(self.lines) + "\n"

    def function_source(self, name: str, f: FuncDecl):
        fenv = TypeEnv(self.unit, func=f)
        params = (["_this"] if f.owner else []) + [f"v_{p.name}" for p in f.params]
        self.emit("", 0)
        self.emit(f"def {name}({', '.join(params)}):", 0)
        self.block(f.body, fenv, 1, scope=False)


_CACHE: dict = {}


def compile_kernel(k: KernelHIR, unit: Optional[SourceUnit] = None):
    """Translate `k` to a Python callable `(bindings, fields, locals)`."""
    key = (k, unit.type_decls if unit else (), unit.funcs if unit else ())
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    check_kernel(k, unit)
    em = _Emitter(unit, k)
    src = em.kernel_source()
    ns = {
        "_np": np,
        "_f32": np.float32,
        "_f64": np.float64,
        "_w32": _w32,
        "_w64": _w64,
        "_idiv": _idiv,
        "_irem": _irem,
        "_f2i32": _f2i32,
        "_f2i64": _f2i64,
        "_popc": _popc,
        "_Trap": _Trap,
        "_zeros": lambda n, t: np.zeros(n, dtype=ScalarType(t).dtype),
        "_ck": _bounds_checker(k.name),
    }
    for name, value in em.consts.values():
        ns[name] = value
    exec(compile(src, f"<kernel {k.name}>", "exec"), ns)
    fn = ns["_kernel"]
    fn.source = src
    _CACHE[key] = fn
    return fn


def _bounds_checker(kernel_name: str):
    def _ck(i, arr):
        if 0 <= i < len(arr):
            return i
        raise BoundsTrap(kernel_name, 0, f"index {i} out of bounds for length {len(arr)}")

    return _ck


def _scalar_value(v, ty: ScalarType):
    if ty.is_int:
        iv = int(v)
        return _w32(iv) if ty == I32 else _w64(iv)
    if ty == BOOL:
        return bool(v)
    return ty.dtype.type(v)


def _record_to_dict(obj, unit, type_name):
    vals = obj._values if isinstance(obj, Record) else obj
    out = {}
    for name, ty in unit.flattened_fields(type_name):
        v = vals.get(name, 0)
        if isinstance(ty, ArrayType):
            out[name] = np.array(v, dtype=ty.elem.dtype).copy()
        else:
            out[name] = _scalar_value(v, ty)
    return out


def interpret(k: KernelHIR, env: HostEnv, unit: Optional[SourceUnit] = None) -> HostEnv:
    """Run `k` serially on copies of `env`'s data and return the final state."""
    fn = compile_kernel(k, unit)
    bindings = {}
    for p in k.params:
        if p.name not in env.bindings:
            raise KeyError(f"missing binding for parameter {p.name!r}")
        v = env.bindings[p.name]
        if isinstance(p.type, ArrayType):
            bindings[p.name] = np.array(v, dtype=p.type.elem.dtype).copy()
        elif isinstance(p.type, StructType):
            bindings[p.name] = _record_to_dict(v, unit, p.type.name)
        else:
            bindings[p.name] = _scalar_value(v, p.type)
    fields, local_arrays = {}, {}
    for f in k.fields:
        v = env.fields.get(f.name, 0) if f.space in (Space.GLOBAL, Space.CONSTANT) else 0
        if f.atomic is not None:
            elem = f.type.elem if isinstance(f.type, ArrayType) else f.type
            v = atomic_identity(effective_atomic_op(k, f), elem)
        if isinstance(f.type, ArrayType):
            arr = np.zeros(f.type.length, dtype=f.type.elem.dtype)
            if f.space in (Space.GLOBAL, Space.CONSTANT) or f.atomic is not None:
                arr[...] = v
            local_arrays[f.name] = arr
            fields[f.name] = arr
        else:
            fields[f.name] = _scalar_value(v, f.type)
    with np.errstate(all="ignore"):
        try:
            fn(bindings, fields, local_arrays)
        except _Trap as exc:
            raise KernelTrap(k.name, 0, str(exc)) from None
        except RecursionError:
            raise KernelTrap(k.name, 0, "call depth exceeded") from None
    out_b = dict(env.bindings)
    for p in k.params:
        v = bindings[p.name]
        if isinstance(p.type, StructType):
            src = env.bindings[p.name]
            rec = Record(p.type.name, dict(v)) if isinstance(src, Record) else dict(v)
            out_b[p.name] = rec
        elif isinstance(p.type, ArrayType):
            out_b[p.name] = v
    out_f = dict(env.fields)
    for f in k.receiver_fields:
        out_f[f.name] = fields[f.name]
    for f in k.fields:
        if f.atomic is not None:
            out_f[f.name] = fields[f.name]
    return HostEnv(out_b, out_f)
