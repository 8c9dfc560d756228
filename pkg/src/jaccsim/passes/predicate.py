"""If-conversion: replace small branch diamonds and triangles with selects.

Arm computations are renamed into fresh registers and executed
unconditionally (every pure opcode is total), loads are guarded by the arm's
predicate so nothing is read that the branch would have skipped, and each
register live at the join receives `selp`. Arms holding stores, atomics or
barriers are never converted, which keeps barriers convergent. A
conversion is kept only if the emitted instruction count does not grow.
"""

from __future__ import annotations

from dataclasses import replace

from ..lir import Block, Branch, Instr, Jump, KernelLIR, Reg, predecessors
from .optimize import copy_propagate, cse, dce, live_sets, straighten

DEFAULT_ARM_LIMIT = 4


def _arm_ok(b: Block, limit: int) -> bool:
    if len(b.instrs) > limit:
        return False
    for ins in b.instrs:
        if ins.guard is not None or ins.has_side_effects:
            return False
        if not (ins.is_pure or ins.op == "ld"):
            return False
    return True


def _candidates(l: KernelLIR, limit: int) -> list:
    """(head, true arm or None, false arm or None, join) shapes."""
    bm = l.block_map()
    preds = predecessors(l)
    out = []
    for h in l.blocks:
        t = h.term
        if not isinstance(t, Branch) or not isinstance(t.pred, Reg):
            continue

        def arm(lab):
            if lab == h.label or len(preds[lab]) != 1:
                return None
            b = bm[lab]
            if isinstance(b.term, Jump) and b.term.target not in (h.label, lab) and _arm_ok(b, limit):
                return b
            return None

        a, c = arm(t.if_true), arm(t.if_false)
        if a is not None and c is not None and a.term.target == c.term.target:
            out.append((h, a, c, a.term.target))
        elif a is not None and a.term.target == t.if_false:
            out.append((h, a, None, t.if_false))
        elif c is not None and c.term.target == t.if_true:
            out.append((h, None, c, t.if_true))
    return out


def _convert(l: KernelLIR, cand, next_reg: list) -> KernelLIR:
    h, ta, fa, join = cand
    p = h.term.pred
    live_in, _ = live_sets(l)
    live_join = live_in[join]

    def rename(arm: Block, negated: bool):
        env, out = {}, []
        for ins in arm.instrs:
            srcs = tuple(env.get(s.id, s) if isinstance(s, Reg) else s for s in ins.srcs)
            addr = ins.addr
            if addr is not None:
                base = env.get(addr.base.id, addr.base) if isinstance(addr.base, Reg) else addr.base
                index = env.get(addr.index.id, addr.index) if isinstance(addr.index, Reg) else addr.index
                addr = replace(addr, base=base, index=index)
            next_reg[0] += 1
            fresh = Reg(next_reg[0], ins.dst.ty)
            guard = (p, negated) if ins.op == "ld" else None
            out.append(replace(ins, dst=fresh, srcs=srcs, addr=addr, guard=guard))
            env[ins.dst.id] = fresh
        return out, env

    t_code, t_env = rename(ta, False) if ta is not None else ([], {})
    f_code, f_env = rename(fa, True) if fa is not None else ([], {})
    originals = {}
    for arm in (ta, fa):
        if arm is not None:
            for ins in arm.instrs:
                originals[ins.dst.id] = ins.dst
    selects = []
    for rid, reg in originals.items():
        if rid not in live_join:
            continue
        selects.append(Instr("selp", reg.ty, reg, (t_env.get(rid, reg), f_env.get(rid, reg), p)))
    merged = Block(h.label, h.instrs + tuple(t_code) + tuple(f_code) + tuple(selects), Jump(join))
    drop = {x.label for x in (ta, fa) if x is not None}
    return l.with_blocks([merged if b.label == h.label else b for b in l.blocks if b.label not in drop])


def _cleanup(l: KernelLIR) -> KernelLIR:
    return straighten(dce(copy_propagate(cse(l))))


def predicate_branches(l: KernelLIR, arm_limit: int = DEFAULT_ARM_LIMIT) -> KernelLIR:
    """Convert every profitable simple branch shape; never adds branches."""
    next_reg = [l.max_reg()]
    rejected = set()
    cur = l
    while True:
        cands = [c for c in _candidates(cur, arm_limit) if c[0].label not in rejected]
        if not cands:
            return cur
        cand = cands[0]
        before = _cleanup(cur)
        after = _cleanup(_convert(cur, cand, next_reg))
        if after.emitted_count() <= before.emitted_count() and after.cond_branch_count() < before.cond_branch_count():
            cur = after
        else:
            rejected.add(cand[0].label)
