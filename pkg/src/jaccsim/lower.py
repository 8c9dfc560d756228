"""Lower fully prepared HIR (parallelized, inlined, scalar-replaced) to LIR."""

from __future__ import annotations

from typing import Optional

from .errors import CompileError
from .hir import (
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
    iter_exprs,
)
from .interp import atomic_identity
from .lir import Addr, Branch, Imm, Instr, Jump, KernelLIR, ParamInfo, Reg, Ret, Trap
from .lir import Block as LBlock
from .memory.schema import kernel_schemas, layout
from .typecheck import atomic_op_for, effective_atomic_op
from .types import BOOL, F32, I32, I64, ArrayType, AtomicOp, ScalarType, Space, StructType, promote

ARITH = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "rem", "&": "and", "|": "or", "^": "xor", "<<": "shl", ">>": "shr"}
CMP = {"==": "eq", "!=": "ne", "<": "lt", "<=": "le", ">": "gt", ">=": "ge"}
SREG = {"thread_id": "tid", "group_id": "ctaid", "group_size": "ntid", "global_id": "gid", "global_size": "nthreads"}


class _Lowerer:
    def __init__(self, k: KernelHIR, unit: Optional[SourceUnit], schemas: dict):
        self.k = k
        self.unit = unit
        self.schemas = schemas
        self.nreg = 0
        self.nlabel = 0
        self.blocks: dict = {}
        self.layout: list = []
        self.cur: Optional[int] = None
        self.prologue: list = []
        self.param_regs: dict = {}
        self.scopes: list = [{}]
        self.trap_label: Optional[int] = None

        self.fields = {f.name: f for f in k.fields}
        if k.name not in schemas:
            raise CompileError(f"missing schema for receiver type {k.name!r}")
        self.recv_schema = schemas[k.name]
        shared = [(f.name, f.type) for f in k.fields if f.space is Space.SHARED]
        self.staged = [f for f in k.fields if f.atomic is not None and isinstance(f.type, ScalarType)]
        shared += [(f"__atomic_{f.name}", f.type) for f in self.staged]
        self.shared_off, self.shared_size = layout(shared)
        self.local_off, self.local_size = layout([(f.name, f.type) for f in k.fields if f.space is Space.PRIVATE])

    # -- plumbing --------------------------------------------------------------

    def reg(self, ty: ScalarType) -> Reg:
        self.nreg += 1
        return Reg(self.nreg, ty)

    def new_label(self) -> int:
        lab = self.nlabel
        self.nlabel += 1
        self.blocks[lab] = [[], None]
        return lab

    def start(self, lab: int):
        self.cur = lab
        self.layout.append(lab)

    def emit(self, ins: Instr):
        self.blocks[self.cur][0].append(ins)
        return ins.dst

    def terminate(self, term):
        if self.blocks[self.cur][1] is None:
            self.blocks[self.cur][1] = term

    def op(self, op: str, ty, srcs, **kw) -> Reg:
        dst = self.reg(ty if op not in ("setp",) else BOOL)
        self.emit(Instr(op, ty, dst, tuple(srcs), **kw))
        return dst

    def var(self, name: str):
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def declare(self, name: str, reg: Reg):
        self.scopes[-1][name] = reg

    def param(self, name: str, ty: ScalarType) -> Reg:
        if name not in self.param_regs:
            self.nreg += 1
            r = Reg(self.nreg, ty)
            self.prologue.append(Instr("ldparam", ty, r, (), attr=name))
            self.param_regs[name] = r
        return self.param_regs[name]

    def this(self) -> Reg:
        return self.param("this", I64)

    def conv(self, v, src: ScalarType, dst: ScalarType):
        if src == dst:
            return v
        if src == BOOL or dst == BOOL:
            raise CompileError(f"cannot convert {src} to {dst}")
        return self.op("cvt", dst, [v], attr=src.name)

    def trap(self) -> int:
        if self.trap_label is None:
            self.trap_label = self.new_label()
            self.blocks[self.trap_label][1] = Trap("bounds")
        return self.trap_label

    # -- memory references -----------------------------------------------------

    def field_ref(self, f):
        """(space, base, offset) for kernel field `f`."""
        if f.space is Space.SHARED:
            return "shared", None, self.shared_off[f.name]
        if f.space is Space.PRIVATE:
            return "local", None, self.local_off[f.name]
        off = self.recv_schema.offset_of(f.name)
        if f.space is Space.CONSTANT:
            return "const", None, off
        return "global", self.this(), off

    def lvalue(self, e):
        """Describe a memory location: (space, addr, elem_type, field_or_None, cache)."""
        if isinstance(e, Index):
            base = e.base
            idx, it = self.expr(e.index)
            f, space, breg, off, length, cache = self._array_base(base)
            elem = f.type.elem if f is not None else self._array_type(base).elem
            if e.checked:
                self.bounds_check(idx, it, length)
            return space, Addr(breg, idx, elem.size, off), elem, f, cache
        f = self._scalar_field(e)
        if f is not None:
            space, breg, off = self.field_ref(f)
            return space, Addr(breg, None, 1, off), f.type, f, None
        if isinstance(e, FieldRef):
            obj = e.obj
            if isinstance(obj, Var):
                p = self.k.param(obj.name)
                if p is not None and isinstance(p.type, StructType):
                    sch = self._schema(p.type.name)
                    ent = sch.entry(e.name)
                    return "global", Addr(self.param(p.name, I64), None, 1, ent.offset), ent.type, None, None
        raise CompileError(f"unsupported memory reference {type(e).__name__} at {getattr(e, 'pos', '?')}")

    def _schema(self, tname: str):
        if tname not in self.schemas:
            raise CompileError(f"missing schema for composite type {tname!r}")
        return self.schemas[tname]

    def _scalar_field(self, e):
        if isinstance(e, Var) and self.var(e.name) is None and self.k.param(e.name) is None:
            return self.fields.get(e.name)
        if isinstance(e, FieldRef) and isinstance(e.obj, Var) and e.obj.name == "this":
            return self.fields.get(e.name)
        return None

    def _array_type(self, base):
        if isinstance(base, Var):
            p = self.k.param(base.name)
            if p is not None:
                return p.type
        f = self._scalar_field(base)
        if f is not None:
            return f.type
        if isinstance(base, FieldRef) and isinstance(base.obj, Var):
            p = self.k.param(base.obj.name)
            if p is not None and isinstance(p.type, StructType):
                return self._schema(p.type.name).entry(base.name).type
        raise CompileError("indexing an expression that is not an array")

    def _array_base(self, base):
        """(field, space, base_reg, offset, length_operand, cache) for an array expression."""
        f = self._scalar_field(base)
        if f is not None:
            space, breg, off = self.field_ref(f)
            return f, space, breg, off, Imm(f.type.length, I32), None
        if isinstance(base, Var):
            p = self.k.param(base.name)
            if p is not None and isinstance(p.type, ArrayType):
                breg = self.param(p.name, I64)
                return None, "global", breg, 0, self.param(p.name + ".len", I32), ("nc" if p.cachable else None)
        if isinstance(base, FieldRef) and isinstance(base.obj, Var):
            p = self.k.param(base.obj.name)
            if p is not None and isinstance(p.type, StructType):
                ent = self._schema(p.type.name).entry(base.name)
                return None, "global", self.param(p.name, I64), ent.offset, Imm(ent.type.length, I32), None
        raise CompileError("indexing an expression that is not an array")

    def bounds_check(self, idx, it: ScalarType, length):
        if it == I64 and isinstance(length, Reg):
            length = self.conv(length, I32, I64)
        elif it == I64:
            length = Imm(length.value, I64)
        lo = self.op("setp", it, [idx, Imm(0, it)], attr="lt")
        hi = self.op("setp", it, [idx, length], attr="ge")
        bad = self.op("or", BOOL, [lo, hi])
        ok = self.new_label()
        self.terminate(Branch(bad, self.trap(), ok))
        self.start(ok)

    # -- expressions -----------------------------------------------------------

    def expr(self, e):
        """Lower `e`; returns (operand, type)."""
        if isinstance(e, Const):
            v = e.value
            if e.type == BOOL:
                v = bool(v)
            elif e.type.is_int:
                v = int(v)
            else:
                v = float(e.type.dtype.type(v))
            return Imm(v, e.type), e.type
        if isinstance(e, Var):
            r = self.var(e.name)
            if r is not None:
                return r, r.ty
            p = self.k.param(e.name)
            if p is not None:
                if isinstance(p.type, ScalarType):
                    return self.param(p.name, p.type), p.type
                raise CompileError(f"parameter {p.name!r} of type {p.type} used as a value")
            f = self.fields.get(e.name)
            if f is not None and isinstance(f.type, ScalarType):
                return self.load(e)
            raise CompileError(f"undeclared identifier {e.name!r}")
        if isinstance(e, (Index, FieldRef)):
            return self.load(e)
        if isinstance(e, Unary):
            v, t = self.expr(e.operand)
            if e.op == "!":
                return self.op("not", BOOL, [v]), BOOL
            if e.op == "~":
                return self.op("not", t, [v]), t
            return self.op("neg", t, [v]), t
        if isinstance(e, Binary):
            return self.binary(e)
        if isinstance(e, Cast):
            v, t = self.expr(e.operand)
            return self.conv(v, t, e.type), e.type
        if isinstance(e, Call):
            return self.call(e)
        if isinstance(e, (MethodCall, New)):
            raise CompileError(f"{type(e).__name__} survived inlining/scalar replacement at {e.pos}")
        raise CompileError(f"cannot lower expression {type(e).__name__}")

    def load(self, e):
        space, addr, ty, f, cache = self.lvalue(e)
        if not isinstance(ty, ScalarType):
            raise CompileError("array value used where a scalar is expected")
        return self.op("ld", ty, [], addr=addr, space=space, attr=cache), ty

    def binary(self, e: Binary):
        op = e.op
        if op in ("&&", "||"):
            return self.logical(e)
        a, at = self.expr(e.left)
        b, bt = self.expr(e.right)
        if at == BOOL and bt == BOOL:
            if op == "==":
                x = self.op("xor", BOOL, [a, b])
                return self.op("not", BOOL, [x]), BOOL
            if op == "!=":
                return self.op("xor", BOOL, [a, b]), BOOL
            return self.op(ARITH[op], BOOL, [a, b]), BOOL
        if op in ("<<", ">>"):
            if bt != at:
                b = self.conv(b, bt, at)
            return self.op(ARITH[op], at, [a, b]), at
        p = promote(at, bt)
        a, b = self.conv(a, at, p), self.conv(b, bt, p)
        if op in CMP:
            return self.op("setp", p, [a, b], attr=CMP[op]), BOOL
        return self.op(ARITH[op], p, [a, b]), p

    def logical(self, e: Binary):
        a, _ = self.expr(e.left)
        if not any(isinstance(x, (Index, FieldRef)) or (isinstance(x, Var) and self._scalar_field(x)) for x in iter_exprs(e.right)):
            b, _ = self.expr(e.right)
            return self.op("and" if e.op == "&&" else "or", BOOL, [a, b]), BOOL
        res = self.reg(BOOL)
        self.emit(Instr("mov", BOOL, res, (a,)))
        rhs, join = self.new_label(), self.new_label()
        if e.op == "&&":
            self.terminate(Branch(res, rhs, join))
        else:
            self.terminate(Branch(res, join, rhs))
        self.start(rhs)
        b, _ = self.expr(e.right)
        self.emit(Instr("mov", BOOL, res, (b,)))
        self.terminate(Jump(join))
        self.start(join)
        return res, BOOL

    def call(self, e: Call):
        n = e.name
        if n in SREG:
            return self.op("sreg", I32, [], attr=(SREG[n], e.args[0].value)), I32
        if n == "len":
            arg = e.args[0]
            _, _, _, _, length, _ = self._array_base(arg)
            return length, I32
        if n in ("sin", "cos", "sqrt", "exp", "log"):
            v, t = self.expr(e.args[0])
            rt = t if t.is_float else F32
            return self.op(n, rt, [self.conv(v, t, rt)]), rt
        if n == "pow":
            (a, at), (b, bt) = self.expr(e.args[0]), self.expr(e.args[1])
            p = promote(at, bt)
            rt = p if p.is_float else F32
            return self.op("pow", rt, [self.conv(a, at, rt), self.conv(b, bt, rt)]), rt
        if n == "popc":
            v, t = self.expr(e.args[0])
            return self.op("popc", I32, [v], attr=t.name), I32
        if n == "abs":
            v, t = self.expr(e.args[0])
            return self.op("abs", t, [v]), t
        if n in ("min", "max"):
            (a, at), (b, bt) = self.expr(e.args[0]), self.expr(e.args[1])
            p = promote(at, bt)
            return self.op(n, p, [self.conv(a, at, p), self.conv(b, bt, p)]), p
        raise CompileError(f"unresolved callee {n!r} survived inlining")

    # -- statements ------------------------------------------------------------

    def block(self, b: Block):
        self.scopes.append({})
        for s in b.stmts:
            self.stmt(s)
        self.scopes.pop()

    def stmt(self, s):
        if self.blocks[self.cur][1] is not None:
            # code after a return: keep it in an unreachable block
            self.start(self.new_label())
        if isinstance(s, Block):
            self.block(s)
        elif isinstance(s, Let):
            v, t = self.expr(s.init)
            ty = s.type or t
            if not isinstance(ty, ScalarType):
                raise CompileError(f"local {s.name!r} of type {ty} cannot live in a register")
            r = self.reg(ty)
            self.emit(Instr("mov", ty, r, (self.conv(v, t, ty),)))
            self.declare(s.name, r)
        elif isinstance(s, Assign):
            self.assign(s)
        elif isinstance(s, For):
            self.loop(s)
        elif isinstance(s, If):
            c, _ = self.expr(s.cond)
            then, join = self.new_label(), self.new_label()
            other = self.new_label() if s.orelse is not None else join
            self.terminate(Branch(c, then, other))
            self.start(then)
            self.block(s.then)
            self.terminate(Jump(join))
            if s.orelse is not None:
                self.start(other)
                self.block(s.orelse)
                self.terminate(Jump(join))
            self.start(join)
        elif isinstance(s, ExprStmt):
            if not isinstance(s.expr, Call):
                raise CompileError("expression statement survived inlining")
        elif isinstance(s, Return):
            if s.value is not None:
                raise CompileError("kernels cannot return a value")
            self.terminate(Jump(self.exit_label))
        elif isinstance(s, Barrier):
            self.emit(Instr("barrier"))
        else:
            raise CompileError(f"cannot lower statement {type(s).__name__}")

    def loop(self, s: For):
        lo, lt = self.expr(s.lo)
        hi, ht = self.expr(s.hi)
        vt = promote(lt, ht)
        i = self.reg(vt)
        self.emit(Instr("mov", vt, i, (self.conv(lo, lt, vt),)))
        h = self.reg(vt)
        self.emit(Instr("mov", vt, h, (self.conv(hi, ht, vt),)))
        if s.step is None:
            step = Imm(1, vt)
        else:
            sv, st = self.expr(s.step)
            step = self.reg(vt)
            self.emit(Instr("mov", vt, step, (self.conv(sv, st, vt),)))
        header, body, latch, exit_ = (self.new_label() for _ in range(4))
        self.terminate(Jump(header))
        self.start(header)
        p = self.op("setp", vt, [i, h], attr="lt")
        self.terminate(Branch(p, body, exit_))
        self.start(body)
        self.scopes.append({s.var: i})
        self.block(s.body)
        self.scopes.pop()
        self.terminate(Jump(latch))
        self.start(latch)
        self.emit(Instr("add", vt, i, (i, step)))
        self.terminate(Jump(header))
        self.start(exit_)

    def assign(self, s: Assign):
        target = s.target
        if isinstance(target, Var):
            r = self.var(target.name)
            if r is not None:
                v, t = self.expr(s.value)
                if s.op is not None:
                    v, t = self._combine(s.op, (r, r.ty), (v, t))
                self.emit(Instr("mov", r.ty, r, (self.conv(v, t, r.ty),)))
                return
            p = self.k.param(target.name)
            if p is not None and isinstance(p.type, ScalarType):
                r = self.param(p.name, p.type)
                v, t = self.expr(s.value)
                if s.op is not None:
                    v, t = self._combine(s.op, (r, r.ty), (v, t))
                self.emit(Instr("mov", r.ty, r, (self.conv(v, t, r.ty),)))
                return
        space, addr, ty, f, _ = self.lvalue(target)
        v, t = self.expr(s.value)
        if f is not None and f.atomic is not None:
            op = atomic_op_for(f, s.op)
            v = self.conv(v, t, ty)
            if isinstance(f.type, ScalarType):
                slot = self.shared_off[f"__atomic_{f.name}"]
                self.emit(Instr("atom", ty, None, (v,), Addr(None, None, 1, slot), "shared", op.value))
            else:
                self.emit(Instr("atom", ty, None, (v,), addr, space, op.value))
            return
        if space == "const":
            raise CompileError(f"store to constant field {f.name!r}")
        if s.op is not None:
            cur = self.op("ld", ty, [], addr=addr, space=space)
            v, t = self._combine(s.op, (cur, ty), (v, t))
        self.emit(Instr("st", ty, None, (self.conv(v, t, ty),), addr, space))

    def _combine(self, op, left, right):
        (a, at), (b, bt) = left, right
        if op in ("<<", ">>"):
            return self.op(ARITH[op], at, [a, self.conv(b, bt, at)]), at
        p = promote(at, bt) if at != BOOL else BOOL
        if p != BOOL:
            a, b = self.conv(a, at, p), self.conv(b, bt, p)
        return self.op(ARITH[op], p, [a, b]), p

    # -- driver ----------------------------------------------------------------

    def group_leader(self) -> Reg:
        t = [self.op("sreg", I32, [], attr=("tid", d)) for d in range(3)]
        x = self.op("or", I32, [t[0], t[1]])
        x = self.op("or", I32, [x, t[2]])
        return self.op("setp", I32, [x, Imm(0, I32)], attr="eq")

    def run(self) -> KernelLIR:
        k = self.k
        entry = self.new_label()
        self.exit_label = self.new_label()
        self.start(entry)
        and_slots = [f for f in self.staged if effective_atomic_op(k, f) is AtomicOp.AND]
        if and_slots:
            lead = self.group_leader()
            for f in and_slots:
                slot = self.shared_off[f"__atomic_{f.name}"]
                self.emit(Instr("st", f.type, None, (Imm(-1, f.type),), Addr(None, None, 1, slot), "shared", guard=(lead, False)))
            self.emit(Instr("barrier"))
        self.block(k.body)
        self.terminate(Jump(self.exit_label))
        self.start(self.exit_label)
        if self.staged:
            self.emit(Instr("barrier"))
            lead = self.group_leader()
            for f in self.staged:
                slot = self.shared_off[f"__atomic_{f.name}"]
                v = self.reg(f.type)
                self.emit(Instr("ld", f.type, v, (), Addr(None, None, 1, slot), "shared", guard=(lead, False)))
                op = effective_atomic_op(k, f)
                gop = "add" if op in (AtomicOp.ADD, AtomicOp.SUB) else op.value
                off = self.recv_schema.offset_of(f.name)
                self.emit(Instr("atom", f.type, None, (v,), Addr(self.this(), None, 1, off), "global", gop, guard=(lead, False)))
        self.terminate(Ret())

        # assemble blocks in layout order, exit and trap last
        order = [lab for lab in self.layout if lab not in (self.exit_label,)]
        order.append(self.exit_label)
        if self.trap_label is not None:
            order.append(self.trap_label)
        seen, blocks = set(), []
        for lab in order:
            if lab in seen:
                continue
            seen.add(lab)
            instrs, term = self.blocks[lab]
            if lab == entry:
                instrs = self.prologue + instrs
            blocks.append(LBlock(lab, tuple(instrs), term if term is not None else Ret()))

        params = []
        if self.recv_schema.entries:
            params.append(ParamInfo("this", "object", None, self.recv_schema.total_size))
        for p in k.params:
            if isinstance(p.type, ArrayType):
                params.append(ParamInfo(p.name, "buffer", p.type.elem))
            elif isinstance(p.type, StructType):
                params.append(ParamInfo(p.name, "object", None, self._schema(p.type.name).total_size))
            else:
                params.append(ParamInfo(p.name, "scalar", p.type))
        atominit = []
        for f in k.fields:
            if f.atomic is not None:
                elem = f.type.elem if isinstance(f.type, ArrayType) else f.type
                op = effective_atomic_op(k, f)
                count = f.type.length if isinstance(f.type, ArrayType) else 1
                val = atomic_identity(op, elem)
                atominit.append(("this", self.recv_schema.offset_of(f.name), elem, val.item(), count))
        has_const = any(f.space is Space.CONSTANT for f in k.fields)
        return KernelLIR(
            k.name,
            tuple(params),
            tuple(blocks),
            shared_size=self.shared_size,
            local_size=self.local_size,
            atominit=tuple(atominit),
            constimage="this" if has_const else None,
            const_size=self.recv_schema.total_size if has_const else 0,
        )


def lower_to_lir(k: KernelHIR, schemas: Optional[dict] = None, unit: Optional[SourceUnit] = None) -> KernelLIR:
    if schemas is None:
        schemas = kernel_schemas(k, unit)
    return _Lowerer(k, unit, schemas).run()
