"""Text emission of LIR as virtual kernel assembly (VKA)."""

from __future__ import annotations

import struct

from ..errors import InternalCompilerError
from ..lir import (
    BINOPS,
    DIMS,
    INTRINSICS,
    UNOPS,
    Addr,
    Branch,
    Imm,
    Jump,
    KernelLIR,
    Reg,
    Ret,
    Trap,
)

REG_PREFIX = {"i32": "%r", "i64": "%rd", "f32": "%f", "f64": "%fd", "bool": "%p"}
PREFIX_ORDER = ("i32", "i64", "f32", "f64", "bool")
VERSION = "1.0"


def vka_type(ty) -> str:
    return {"i32": "s32", "i64": "s64", "f32": "f32", "f64": "f64", "bool": "pred"}[ty.name]


def format_imm(imm: Imm) -> str:
    t = imm.ty.name
    if t == "bool":
        return "1" if imm.value else "0"
    if t in ("i32", "i64"):
        return str(int(imm.value))
    if t == "f32":
        return "0f" + struct.pack(">f", imm.value).hex().upper()
    return "0d" + struct.pack(">d", imm.value).hex().upper()


# operand positions that must hold a register in final VKA
def illegal_immediates(ins) -> list:
    """Indices of `ins.srcs` that are immediates in positions VKA forbids."""
    bad = []
    if ins.op in INTRINSICS or ins.op in ("st", "atom", "cvt", "abs", "neg", "not"):
        bad = [i for i, s in enumerate(ins.srcs) if isinstance(s, Imm)]
    return bad


class _Namer:
    def __init__(self):
        self.maps = {p: {} for p in PREFIX_ORDER}

    def name(self, r: Reg) -> str:
        m = self.maps[r.ty.name]
        if r.id not in m:
            m[r.id] = len(m) + 1
        return f"{REG_PREFIX[r.ty.name]}{m[r.id]}"


def _operand(x, namer: _Namer) -> str:
    if isinstance(x, Reg):
        return namer.name(x)
    if isinstance(x, Imm):
        return format_imm(x)
    raise InternalCompilerError(f"bad operand {x!r}")


def _addr(a: Addr, namer: _Namer) -> str:
    parts = []
    if a.base is not None:
        parts.append(_operand(a.base, namer))
    if a.index is not None:
        idx = _operand(a.index, namer)
        parts.append(f"{idx}*{a.scale}")
    if a.offset or not parts:
        if parts and a.offset < 0:
            return "[" + " + ".join(parts) + f" - {-a.offset}]"
        parts.append(str(a.offset))
    return "[" + " + ".join(parts) + "]"


def format_instr(ins, namer: _Namer, strict: bool = True) -> str:
    if strict:
        bad = illegal_immediates(ins)
        if bad:
            raise InternalCompilerError(f"{ins.op}: immediate operand has no VKA encoding (bridge bug)")
        if ins.addr is not None and isinstance(ins.addr.base, Imm):
            raise InternalCompilerError("immediate address base has no VKA encoding (bridge bug)")
    g = ""
    if ins.guard is not None:
        p, neg = ins.guard
        g = f"@{'!' if neg else ''}{namer.name(p)} "
    op = ins.op
    t = vka_type(ins.ty) if ins.ty is not None else None
    o = lambda x: _operand(x, namer)  # noqa: E731
    if op == "mov":
        return f"{g}mov.{t} {o(ins.dst)}, {o(ins.srcs[0])};"
    if op == "sreg":
        name, dim = ins.attr
        return f"{g}mov.{t} {o(ins.dst)}, %{name}.{DIMS[dim]};"
    if op in BINOPS or op in ("pow",):
        return f"{g}{op}.{t} {o(ins.dst)}, {o(ins.srcs[0])}, {o(ins.srcs[1])};"
    if op in UNOPS or op in ("sin", "cos", "sqrt", "exp", "log"):
        return f"{g}{op}.{t} {o(ins.dst)}, {o(ins.srcs[0])};"
    if op == "popc":
        src = {"i32": "s32", "i64": "s64"}[ins.attr]
        return f"{g}popc.{src} {o(ins.dst)}, {o(ins.srcs[0])};"
    if op == "cvt":
        src = {"i32": "s32", "i64": "s64", "f32": "f32", "f64": "f64"}[ins.attr]
        return f"{g}cvt.{t}.{src} {o(ins.dst)}, {o(ins.srcs[0])};"
    if op == "setp":
        return f"{g}setp.{ins.attr}.{t} {o(ins.dst)}, {o(ins.srcs[0])}, {o(ins.srcs[1])};"
    if op == "selp":
        return f"{g}selp.{t} {o(ins.dst)}, {o(ins.srcs[0])}, {o(ins.srcs[1])}, {o(ins.srcs[2])};"
    if op == "ldparam":
        return f"{g}ld.param.{t} {o(ins.dst)}, [{ins.attr}];"
    if op == "ld":
        nc = ".nc" if ins.attr == "nc" else ""
        return f"{g}ld.{ins.space}{nc}.{t} {o(ins.dst)}, {_addr(ins.addr, namer)};"
    if op == "st":
        return f"{g}st.{ins.space}.{t} {_addr(ins.addr, namer)}, {o(ins.srcs[0])};"
    if op == "atom":
        return f"{g}atom.{ins.space}.{ins.attr}.{t} {_addr(ins.addr, namer)}, {o(ins.srcs[0])};"
    if op == "barrier":
        return f"{g}barrier.group;"
    raise InternalCompilerError(f"LIR opcode {op!r} has no VKA encoding")


def _header(l: KernelLIR) -> list:
    lines = [f".version {VERSION}", f".kernel {l.name}"]
    for p in l.params:
        if p.kind == "buffer":
            lines.append(f".param .buffer .{vka_type(p.ty)} {p.name}")
        elif p.kind == "scalar":
            lines.append(f".param .scalar .{vka_type(p.ty)} {p.name}")
        else:
            lines.append(f".param .object {p.name} {p.size}")
    if l.shared_size:
        lines.append(f".shared {l.shared_size}")
    if l.local_size:
        lines.append(f".local {l.local_size}")
    for param, off, ty, val, count in l.atominit:
        lines.append(f".atominit {param} {off} .{vka_type(ty)} {format_imm(Imm(val, ty))} {count}")
    if l.constimage:
        lines.append(f".constimage {l.constimage} {l.const_size}")
    return lines


def emit_vka(l: KernelLIR, strict: bool = True, all_labels: bool = False) -> str:
    """Deterministic VKA text for `l` (register and label numbering is canonical)."""
    namer = _Namer()
    blocks = list(l.blocks)
    # which labels are targets of an explicit branch
    body: list = []
    explicit = set()
    plan = []
    for i, b in enumerate(blocks):
        nxt = blocks[i + 1].label if i + 1 < len(blocks) else None
        t = b.term
        if isinstance(t, Branch) and isinstance(t.pred, Imm):
            t = Jump(t.if_true if t.pred.value else t.if_false)
        if isinstance(t, Jump):
            tail = [] if t.target == nxt else [("bra", None, t.target)]
        elif isinstance(t, Branch):
            if t.if_false == nxt:
                tail = [("bra", (t.pred, False), t.if_true)]
            elif t.if_true == nxt:
                tail = [("bra", (t.pred, True), t.if_false)]
            else:
                tail = [("bra", (t.pred, False), t.if_true), ("bra", None, t.if_false)]
        elif isinstance(t, Ret):
            tail = [("ret",)]
        elif isinstance(t, Trap):
            tail = [("trap", t.kind)]
        else:
            raise InternalCompilerError(f"unknown terminator {t!r}")
        for x in tail:
            if x[0] == "bra":
                explicit.add(x[2])
        plan.append((b, tail))
    label_names = {}
    for b, _ in plan:
        if b.label in explicit or all_labels:
            label_names[b.label] = f"$L{len(label_names) + 1}"
    for b, tail in plan:
        if b.label in label_names:
            body.append(f"{label_names[b.label]}:")
        for ins in b.instrs:
            body.append("    " + format_instr(ins, namer, strict))
        for x in tail:
            if x[0] == "bra":
                g = ""
                if x[1] is not None:
                    p, neg = x[1]
                    g = f"@{'!' if neg else ''}{namer.name(p)} "
                body.append(f"    {g}bra {label_names[x[2]]};")
            elif x[0] == "ret":
                body.append("    ret;")
            else:
                body.append(f"    trap.{x[1]};")
    lines = _header(l)
    for tname in PREFIX_ORDER:
        n = len(namer.maps[tname])
        if n:
            lines.append(f".reg .{vka_type_name(tname)} {REG_PREFIX[tname]}<{n}>")
    lines.append("{")
    lines.extend(body)
    lines.append("}")
    return "\n".join(lines) + "\n"


def vka_type_name(tname: str) -> str:
    return {"i32": "s32", "i64": "s64", "f32": "f32", "f64": "f64", "bool": "pred"}[tname]
