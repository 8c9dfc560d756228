"""Rewrite LIR forms that have no VKA encoding."""

from __future__ import annotations

from dataclasses import replace

from ..lir import Block, Branch, Imm, Instr, Jump, KernelLIR, Reg
from ..vka.emit import illegal_immediates
from .optimize import _normalize_addr


def isa_bridge(l: KernelLIR) -> KernelLIR:
    """Materialize immediates where VKA needs registers, resolve constant guards and branches."""
    next_reg = l.max_reg()
    blocks = []
    for b in l.blocks:
        out = []
        for ins in b.instrs:
            if ins.guard is not None and isinstance(ins.guard[0], Imm):
                if bool(ins.guard[0].value) == ins.guard[1]:
                    continue
                ins = replace(ins, guard=None)
            if ins.addr is not None:
                ins = replace(ins, addr=_normalize_addr(ins.addr))
            bad = illegal_immediates(ins)
            if bad:
                srcs = list(ins.srcs)
                for i in bad:
                    next_reg += 1
                    r = Reg(next_reg, srcs[i].ty)
                    out.append(Instr("mov", r.ty, r, (srcs[i],), guard=ins.guard))
                    srcs[i] = r
                ins = replace(ins, srcs=tuple(srcs))
            out.append(ins)
        t = b.term
        if isinstance(t, Branch) and isinstance(t.pred, Imm):
            t = Jump(t.if_true if t.pred.value else t.if_false)
        blocks.append(Block(b.label, tuple(out), t))
    return l.with_blocks(blocks)
