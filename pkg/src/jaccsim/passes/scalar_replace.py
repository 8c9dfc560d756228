"""Scalar replacement of non-escaping `new` allocations."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from ..errors import CompileError
from ..hir import (
    Block,
    Const,
    FieldRef,
    For,
    If,
    KernelHIR,
    Let,
    New,
    SourceUnit,
    Var,
    iter_exprs,
    iter_stmts,
    children,
    map_expr,
    map_own_exprs,
    map_stmt_exprs,
    stmt_exprs,
)
from ..types import BOOL, ArrayType

_ESCAPE = "dynamic object allocation is not supported"


def _zero(ty):
    if ty == BOOL:
        return Const(False, BOOL)
    return Const(0.0 if ty.is_float else 0, ty)


def scalar_replace_allocations(k: KernelHIR, unit: Optional[SourceUnit]) -> KernelHIR:
    allocs = {}
    for s in iter_stmts(k.body):
        if isinstance(s, Let) and isinstance(s.init, New):
            allocs[s.name] = s.init.type_name
    for s in iter_stmts(k.body):
        for top in stmt_exprs(s):
            for e in iter_exprs(top):
                if isinstance(e, New) and not (isinstance(s, Let) and e is s.init):
                    raise CompileError(f"{_ESCAPE} (new {e.type_name} at {e.pos})")
    if not allocs:
        return k

    flat = {}
    for name, tname in allocs.items():
        fields = unit.flattened_fields(tname)
        for fname, fty in fields:
            if isinstance(fty, ArrayType):
                raise CompileError(f"{_ESCAPE}: local {tname} {name!r} has array field {fname!r}")
        flat[name] = fields

    # any remaining bare use of an allocated name lets the object escape
    def check_uses(e):
        if isinstance(e, FieldRef) and isinstance(e.obj, Var) and e.obj.name in allocs:
            return
        for sub in children(e):
            if isinstance(sub, Var) and sub.name in allocs:
                raise CompileError(f"{_ESCAPE}: {sub.name!r} escapes at {sub.pos}")
            check_uses(sub)

    for s in iter_stmts(k.body):
        for top in stmt_exprs(s):
            if isinstance(top, Var) and top.name in allocs:
                raise CompileError(f"{_ESCAPE}: {top.name!r} escapes at {top.pos}")
            check_uses(top)

    def fix(e):
        if isinstance(e, FieldRef) and isinstance(e.obj, Var) and e.obj.name in allocs:
            return Var(f"{e.obj.name}__{e.name}", e.pos)
        return e

    def walk(s):
        if isinstance(s, Block):
            out = []
            for c in s.stmts:
                if isinstance(c, Let) and c.name in allocs:
                    args = c.init.args
                    for i, (fname, fty) in enumerate(flat[c.name]):
                        init = args[i] if i < len(args) else _zero(fty)
                        out.append(Let(f"{c.name}__{fname}", fty, map_expr(init, fix), c.pos))
                else:
                    out.append(walk(c))
            return replace(s, stmts=tuple(out))
        if isinstance(s, For):
            return replace(map_own_exprs(s, fix), body=walk(s.body))
        if isinstance(s, If):
            return replace(
                map_own_exprs(s, fix),
                then=walk(s.then),
                orelse=None if s.orelse is None else walk(s.orelse),
            )
        return map_stmt_exprs(s, fix)

    return replace(k, body=walk(k.body))
