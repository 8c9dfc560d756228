"""Inline every user-level function and method call.

Calls are lifted out of expressions into statements, preserving left-to-right
evaluation and short-circuiting. Callee locals are renamed apart, parameters
become fresh locals (composite and array arguments are substituted by name so
they keep reference semantics), `this` becomes the receiver, and `return`
statements are rewritten into assignments of a result local.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from ..errors import CompileError
from ..hir import (
    BUILTIN_CALLS,
    Assign,
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
    iter_stmts,
    iter_exprs,
    map_own_exprs,
)
from ..typecheck import Symbol, TypeEnv
from ..types import BOOL, ArrayType, ScalarType, StructType, promote

DEFAULT_DEPTH_LIMIT = 8


def _zero(ty):
    if ty == BOOL:
        return Const(False, BOOL)
    return Const(0.0 if ty.is_float else 0, ty)


def _has_call(e) -> bool:
    for sub in iter_exprs(e):
        if isinstance(sub, MethodCall):
            return True
        if isinstance(sub, Call) and sub.name not in BUILTIN_CALLS:
            return True
    return False


def _trivial(e) -> bool:
    return isinstance(e, (Const, Var))


class _Inliner:
    def __init__(self, unit: Optional[SourceUnit], kernel: KernelHIR, depth_limit: int):
        self.unit = unit
        self.kernel = kernel
        self.limit = depth_limit
        self.counter = 0

    def fresh(self, hint: str) -> str:
        self.counter += 1
        return f"{hint}__{self.counter}"

    # -- expression lifting ------------------------------------------------------

    def lift(self, e, env: TypeEnv, depth: int):
        """Return (statements, expression) with calls removed from `e`."""
        if not _has_call(e):
            return [], e
        if isinstance(e, Binary) and e.op in ("&&", "||"):
            pl, left = self.lift(e.left, env, depth)
            pr, right = self.lift(e.right, env, depth)
            if not pr:
                return pl, replace(e, left=left, right=right)
            t = self.fresh("sc")
            env.declare(t, Symbol("local", BOOL))
            cond = Var(t) if e.op == "&&" else Unary("!", Var(t))
            body = Block(tuple(pr) + (Assign(Var(t), right),))
            return pl + [Let(t, BOOL, left), If(cond, body)], Var(t)
        if isinstance(e, (Call, MethodCall)) and not (isinstance(e, Call) and e.name in BUILTIN_CALLS):
            return self.lift_call(e, env, depth)
        if isinstance(e, New):
            pre, args = self.lift_seq(list(e.args), env, depth)
            return pre, replace(e, args=tuple(args))
        if isinstance(e, Call):
            pre, args = self.lift_seq(list(e.args), env, depth)
            return pre, replace(e, args=tuple(args))
        if isinstance(e, Unary):
            pre, x = self.lift(e.operand, env, depth)
            return pre, replace(e, operand=x)
        if isinstance(e, Cast):
            pre, x = self.lift(e.operand, env, depth)
            return pre, replace(e, operand=x)
        if isinstance(e, Binary):
            pre, (l, r) = self.lift_seq([e.left, e.right], env, depth)
            return pre, replace(e, left=l, right=r)
        if isinstance(e, Index):
            pre, (b, i) = self.lift_seq([e.base, e.index], env, depth)
            return pre, replace(e, base=b, index=i)
        if isinstance(e, FieldRef):
            pre, obj = self.lift(e.obj, env, depth)
            return pre, replace(e, obj=obj)
        return [], e

    def lift_seq(self, exprs: list, env, depth):
        """Lift a left-to-right operand list, spilling earlier operands when later ones have effects."""
        lifted = [self.lift(x, env, depth) for x in exprs]
        pre, out = [], []
        for idx, (p, x) in enumerate(lifted):
            later_effects = any(lp for lp, _ in lifted[idx + 1:])
            pre.extend(p)
            if later_effects and not _trivial(x):
                ty = env.type_of(x)
                if isinstance(ty, ScalarType):
                    t = self.fresh("ev")
                    env.declare(t, Symbol("local", ty))
                    pre.append(Let(t, ty, x))
                    x = Var(t)
            out.append(x)
        return pre, out

    def lift_call(self, e, env: TypeEnv, depth: int):
        if depth >= self.limit:
            raise CompileError(
                f"inline depth limit {self.limit} exceeded while inlining {e.name!r} (recursive call?)"
            )
        receiver = None
        if isinstance(e, MethodCall):
            pre_obj, obj = self.lift(e.obj, env, depth)
            ot = env.type_of(obj)
            if not isinstance(ot, StructType):
                raise CompileError(f"method call .{e.name}() on a non-composite value")
            f = self.unit.resolve_method(ot.name, e.name) if self.unit else None
            if f is None:
                raise CompileError(f"unresolved callee {ot.name}.{e.name}")
            if isinstance(obj, New):
                t = self.fresh("obj")
                env.declare(t, Symbol("local", ot))
                pre_obj = pre_obj + [Let(t, ot, obj)]
                obj = Var(t)
            receiver = obj
        else:
            pre_obj = []
            f = self.unit.func(e.name) if self.unit else None
            if f is None:
                raise CompileError(f"unresolved callee {e.name!r}")
        if len(e.args) != len(f.params):
            raise CompileError(f"{f.name} expects {len(f.params)} arguments, got {len(e.args)}")
        if isinstance(f.ret, StructType):
            raise CompileError(f"{f.name}: dynamic object allocation is not supported (composite return value)")
        pre_args, args = self.lift_seq(list(e.args), env, depth)
        pre = pre_obj + pre_args
        rename = {}
        subst = {}
        if receiver is not None:
            subst["this"] = receiver
        for p, a in zip(f.params, args):
            if isinstance(p.type, (StructType, ArrayType)):
                if isinstance(a, New):
                    t = self.fresh(p.name)
                    env.declare(t, Symbol("local", p.type))
                    pre.append(Let(t, p.type, a))
                    a = Var(t)
                subst[p.name] = a
            else:
                t = self.fresh(p.name)
                rename[p.name] = t
                env.declare(t, Symbol("local", p.type))
                pre.append(Let(t, p.type, a))
        result = None
        if f.ret is not None:
            result = self.fresh(f"{f.name}_ret")
            env.declare(result, Symbol("local", f.ret))
            pre.append(Let(result, f.ret, _zero(f.ret)))
        for s in iter_stmts(f.body):
            if isinstance(s, Let):
                rename.setdefault(s.name, self.fresh(s.name))
            elif isinstance(s, For):
                rename.setdefault(s.var, self.fresh(s.var))
        body = _rename_block(f.body, rename, subst)
        stmts = _eliminate_returns(list(body.stmts), result, f)
        # inline nested calls inside the callee body with depth + 1
        fenv = env
        fenv.push()
        inner = self.block_stmts(stmts, fenv, depth + 1)
        fenv.pop()
        pre.append(Block(tuple(inner)))
        if result is None:
            return pre, None
        return pre, Var(result)

    # -- statements --------------------------------------------------------------

    def block_stmts(self, stmts: list, env: TypeEnv, depth: int) -> list:
        out = []
        for s in stmts:
            out.extend(self.stmt(s, env, depth))
        return out

    def block(self, b: Block, env: TypeEnv, depth: int, scope=True) -> Block:
        if scope:
            env.push()
        stmts = self.block_stmts(list(b.stmts), env, depth)
        if scope:
            env.pop()
        return replace(b, stmts=tuple(stmts))

    def stmt(self, s, env: TypeEnv, depth: int) -> list:
        if isinstance(s, Block):
            return [self.block(s, env, depth)]
        if isinstance(s, Let):
            pre, init = self.lift(s.init, env, depth)
            ty = s.type or env.type_of(init)
            env.declare(s.name, Symbol("local", ty, s))
            return pre + [replace(s, init=init)]
        if isinstance(s, Assign):
            target = s.target
            pre_t = []
            if isinstance(target, Index):
                pre_t, (base, idx) = self.lift_seq([target.base, target.index], env, depth)
                target = replace(target, base=base, index=idx)
            elif isinstance(target, FieldRef):
                pre_t, obj = self.lift(target.obj, env, depth)
                target = replace(target, obj=obj)
            pre_v, value = self.lift(s.value, env, depth)
            if pre_v and isinstance(target, Index) and not _trivial(target.index):
                t = self.fresh("ix")
                ty = env.type_of(target.index)
                env.declare(t, Symbol("local", ty))
                pre_t = pre_t + [Let(t, ty, target.index)]
                target = replace(target, index=Var(t))
            return pre_t + pre_v + [replace(s, target=target, value=value)]
        if isinstance(s, For):
            pre_lo, lo = self.lift(s.lo, env, depth)
            pre_hi, hi = self.lift(s.hi, env, depth)
            pre_st, step = ([], None) if s.step is None else self.lift(s.step, env, depth)
            env.push()
            vt = promote(env.type_of(lo), env.type_of(hi))
            env.declare(s.var, Symbol("loop", vt, s))
            body = self.block(s.body, env, depth, scope=False)
            env.pop()
            return pre_lo + pre_hi + pre_st + [replace(s, lo=lo, hi=hi, step=step, body=body)]
        if isinstance(s, If):
            pre, cond = self.lift(s.cond, env, depth)
            then = self.block(s.then, env, depth)
            orelse = None if s.orelse is None else self.block(s.orelse, env, depth)
            return pre + [replace(s, cond=cond, then=then, orelse=orelse)]
        if isinstance(s, ExprStmt):
            pre, e = self.lift(s.expr, env, depth)
            if e is None or not isinstance(e, (Call, MethodCall)):
                return pre
            return pre + [replace(s, expr=e)]
        if isinstance(s, Return) and s.value is not None:
            pre, v = self.lift(s.value, env, depth)
            return pre + [replace(s, value=v)]
        return [s]


def _rename_block(b: Block, rename: dict, subst: dict) -> Block:
    def fix_expr(e):
        if isinstance(e, Var):
            if e.name in subst:
                return subst[e.name]
            if e.name in rename:
                return Var(rename[e.name], e.pos)
        return e

    def walk(s):
        if isinstance(s, Block):
            return replace(s, stmts=tuple(walk(c) for c in s.stmts))
        if isinstance(s, Let):
            s = replace(s, name=rename.get(s.name, s.name))
        elif isinstance(s, For):
            s = replace(s, var=rename.get(s.var, s.var), body=walk(s.body))
        elif isinstance(s, If):
            s = replace(s, then=walk(s.then), orelse=None if s.orelse is None else walk(s.orelse))
        return map_own_exprs(s, fix_expr)

    return walk(b)


def _contains_return(s) -> bool:
    return any(isinstance(x, Return) for x in iter_stmts(s))


def _eliminate_returns(stmts: list, result: Optional[str], f: FuncDecl) -> list:
    """Rewrite returns into assignments to `result`, pushing the statements
    that follow a conditional return into the non-returning branch."""
    out = []
    for idx, s in enumerate(stmts):
        rest = stmts[idx + 1:]
        if isinstance(s, Return):
            if s.value is not None:
                if result is None:
                    raise CompileError(f"{f.name}: returns a value but declares no return type")
                out.append(Assign(Var(result), s.value, None, s.pos))
            return out
        if isinstance(s, For) and _contains_return(s):
            raise CompileError(f"{f.name}: return inside a loop cannot be inlined")
        if isinstance(s, Block) and _contains_return(s):
            return out + _eliminate_returns(list(s.stmts) + rest, result, f)
        if isinstance(s, If) and _contains_return(s):
            then = _eliminate_returns(list(s.then.stmts) + rest, result, f)
            other = list(s.orelse.stmts) if s.orelse is not None else []
            orelse = _eliminate_returns(other + rest, result, f)
            out.append(If(s.cond, Block(tuple(then)), Block(tuple(orelse)) if orelse else None, s.pos))
            return out
        out.append(s)
    return out


def inline_calls(k: KernelHIR, unit: Optional[SourceUnit], depth_limit: int = DEFAULT_DEPTH_LIMIT) -> KernelHIR:
    if depth_limit < 1:
        raise ValueError("inline depth limit must be at least 1")
    inl = _Inliner(unit, k, depth_limit)
    env = TypeEnv(unit, kernel=k)
    body = inl.block(k.body, env, 0, scope=False)
    return replace(k, body=body)
