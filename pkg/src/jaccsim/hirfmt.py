"""Stable textual dump of HIR; the output parses back to an equal tree."""

from __future__ import annotations

from .hir import (
    Assign,
    Barrier,
    Binary,
    Block,
    Call,
    Cast,
    CompositeTypeDecl,
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
from .types import Space

PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "|": 3,
    "^": 4,
    "&": 5,
    "==": 6,
    "!=": 6,
    "<": 7,
    "<=": 7,
    ">": 7,
    ">=": 7,
    "<<": 8,
    ">>": 8,
    "+": 9,
    "-": 9,
    "*": 10,
    "/": 10,
    "%": 10,
}
UNARY_PREC = 11
POSTFIX_PREC = 12


def format_const(c: Const) -> str:
    t = c.type.name
    if t == "bool":
        return "true" if c.value else "false"
    if t in ("i32", "i64"):
        text = str(int(c.value))
        return text + ("L" if t == "i64" else "")
    text = repr(float(c.value))
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text + ("d" if t == "f64" else "")


def _prec(e) -> int:
    if isinstance(e, Binary):
        return PRECEDENCE[e.op]
    if isinstance(e, Unary):
        return UNARY_PREC
    if isinstance(e, Const) and isinstance(e.value, (int, float)) and not isinstance(e.value, bool):
        if e.value < 0:
            return UNARY_PREC
    return POSTFIX_PREC


def format_expr(e) -> str:
    if isinstance(e, Const):
        return format_const(e)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        inner = format_expr(e.operand)
        if _prec(e.operand) < UNARY_PREC or (isinstance(e.operand, Unary)):
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        p = PRECEDENCE[e.op]
        left = format_expr(e.left)
        right = format_expr(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Index):
        base = format_expr(e.base)
        if _prec(e.base) < POSTFIX_PREC:
            base = f"({base})"
        return f"{base}[{format_expr(e.index)}]"
    if isinstance(e, FieldRef):
        obj = format_expr(e.obj)
        if _prec(e.obj) < POSTFIX_PREC:
            obj = f"({obj})"
        return f"{obj}.{e.name}"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, MethodCall):
        obj = format_expr(e.obj)
        if _prec(e.obj) < POSTFIX_PREC:
            obj = f"({obj})"
        return f"{obj}.{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, Cast):
        return f"{e.type}({format_expr(e.operand)})"
    if isinstance(e, New):
        return f"new {e.type_name}({', '.join(format_expr(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


def _block_lines(b: Block, indent: int) -> list:
    lines = []
    for s in b.stmts:
        lines.extend(format_stmt(s, indent))
    return lines


def format_stmt(s, indent: int = 0) -> list:
    pad = "    " * indent
    if isinstance(s, Block):
        return [pad + "{"] + _block_lines(s, indent + 1) + [pad + "}"]
    if isinstance(s, Let):
        ty = f": {s.type}" if s.type is not None else ""
        return [f"{pad}let {s.name}{ty} = {format_expr(s.init)};"]
    if isinstance(s, Assign):
        op = f"{s.op}=" if s.op else "="
        return [f"{pad}{format_expr(s.target)} {op} {format_expr(s.value)};"]
    if isinstance(s, For):
        step = f" step {format_expr(s.step)}" if s.step is not None else ""
        head = f"{pad}for {s.var} in {format_expr(s.lo)}..{format_expr(s.hi)}{step} {{"
        return [head] + _block_lines(s.body, indent + 1) + [pad + "}"]
    if isinstance(s, If):
        lines = [f"{pad}if ({format_expr(s.cond)}) {{"] + _block_lines(s.then, indent + 1)
        orelse = s.orelse
        while orelse is not None:
            if len(orelse.stmts) == 1 and isinstance(orelse.stmts[0], If):
                inner = orelse.stmts[0]
                lines.append(f"{pad}}} else if ({format_expr(inner.cond)}) {{")
                lines.extend(_block_lines(inner.then, indent + 1))
                orelse = inner.orelse
            else:
                lines.append(f"{pad}}} else {{")
                lines.extend(_block_lines(orelse, indent + 1))
                orelse = None
        lines.append(pad + "}")
        return lines
    if isinstance(s, ExprStmt):
        return [f"{pad}{format_expr(s.expr)};"]
    if isinstance(s, Return):
        return [f"{pad}return;" if s.value is None else f"{pad}return {format_expr(s.value)};"]
    if isinstance(s, Barrier):
        return [f"{pad}barrier();"]
    raise TypeError(f"not a statement: {s!r}")


def _format_field(f, pad: str) -> str:
    ann = ""
    if f.atomic is not None:
        ann = f"@atomic(op={f.atomic.name}) "
    elif f.space is Space.SHARED:
        ann = "@shared "
    elif f.space is Space.PRIVATE:
        ann = "@private "
    elif f.space is Space.CONSTANT:
        ann = "@constant "
    return f"{pad}{ann}field {f.name}: {f.type};"


def _format_param(p) -> str:
    ann = ""
    if p.mode is not None:
        ann = f"@{p.mode.value}"
        if p.cachable:
            ann += "(cachable=true)"
        ann += " "
    return f"{ann}{p.name}: {p.type}"


def format_kernel(k: KernelHIR) -> str:
    j = k.jacc
    lines = [
        f"@jacc(iterationSpace={j.iteration_space.name}, exceptions={'true' if j.exceptions else 'false'})",
        f"kernel {k.name}({', '.join(_format_param(p) for p in k.params)}) {{",
    ]
    lines += [_format_field(f, "    ") for f in k.fields]
    lines += _block_lines(k.body, 1)
    lines.append("}")
    return "\n".join(lines)


def format_func(f: FuncDecl, indent: int = 0) -> str:
    pad = "    " * indent
    params = ", ".join(f"{p.name}: {p.type}" for p in f.params)
    ret = f" -> {f.ret}" if f.ret is not None else ""
    lines = [f"{pad}func {f.name}({params}){ret} {{"]
    lines += _block_lines(f.body, indent + 1)
    lines.append(pad + "}")
    return "\n".join(lines)


def format_type_decl(t: CompositeTypeDecl) -> str:
    sup = f" : {t.super_type}" if t.super_type else ""
    lines = [f"type {t.name}{sup} {{"]
    lines += [f"    {name}: {ty};" for name, ty in t.fields]
    for m in t.methods:
        lines.append(format_func(m, 1))
    lines.append("}")
    return "\n".join(lines)


def format_unit(u: SourceUnit) -> str:
    parts = [format_type_decl(t) for t in u.type_decls]
    parts += [format_func(f) for f in u.funcs]
    parts += [format_kernel(k) for k in u.kernels]
    return "\n\n".join(parts) + "\n"

