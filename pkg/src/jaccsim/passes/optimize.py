"""Machine-level optimizations on LIR.

Registers are not in SSA form: loop counters and reassigned locals have
several definitions. Transformations that move or share values across
blocks therefore only touch registers with exactly one unguarded
definition, whose definition dominates every use (the verifier's
define-before-use rule guarantees that).
"""

from __future__ import annotations

import sys
from collections import Counter
from dataclasses import replace

import numpy as np

from ..lir import (
    Addr,
    Block,
    Branch,
    Imm,
    Instr,
    Jump,
    KernelLIR,
    Reg,
    predecessors,
    reachable,
    successors,
    term_uses,
)
from ..types import BOOL
from ..vka.semantics import dtype_of, evaluate

FOLDABLE = {
    "add", "sub", "mul", "div", "rem", "min", "max", "and", "or", "xor", "shl", "shr",
    "neg", "not", "abs", "sin", "cos", "sqrt", "exp", "log", "pow", "popc", "cvt", "setp", "selp", "mov",
}  # fmt: skip


# -- shared helpers -----------------------------------------------------------


def def_counts(l: KernelLIR) -> Counter:
    c = Counter()
    for ins in l.instructions():
        if ins.dst is not None:
            c[ins.dst.id] += 2 if ins.guard is not None else 1
    return c


def _sub(x, env: dict):
    if isinstance(x, Reg):
        return env.get(x.id, x)
    return x


def _sub_addr(a: Addr, env: dict) -> Addr:
    base = a.base
    if isinstance(base, Reg) and base.id in env and isinstance(env[base.id], Reg):
        base = env[base.id]
    index = _sub(a.index, env) if a.index is not None else None
    return _normalize_addr(Addr(base, index, a.scale, a.offset))


def _normalize_addr(a: Addr) -> Addr:
    if isinstance(a.index, Imm):
        return Addr(a.base, None, 1, a.offset + int(a.index.value) * a.scale)
    return a


def substitute(ins: Instr, env: dict) -> Instr:
    """Rewrite register uses of `ins` through `env` (reg id -> operand)."""
    if not env:
        return ins
    srcs = tuple(_sub(s, env) for s in ins.srcs)
    addr = _sub_addr(ins.addr, env) if ins.addr is not None else None
    guard = ins.guard
    if guard is not None:
        g = _sub(guard[0], env)
        guard = (g, guard[1])
    if srcs == ins.srcs and addr == ins.addr and guard == ins.guard:
        return ins
    return replace(ins, srcs=srcs, addr=addr, guard=guard)


def substitute_term(t, env: dict):
    if isinstance(t, Branch) and isinstance(t.pred, Reg) and t.pred.id in env:
        return Branch(env[t.pred.id], t.if_true, t.if_false)
    return t


def _resolve(env: dict) -> dict:
    """Follow substitution chains so every value is final."""
    out = {}
    for k in env:
        v, seen = env[k], {k}
        while isinstance(v, Reg) and v.id in env and v.id not in seen:
            seen.add(v.id)
            v = env[v.id]
        out[k] = v
    return out


def apply_env(l: KernelLIR, env: dict) -> KernelLIR:
    env = _resolve(env)
    blocks = []
    for b in l.blocks:
        instrs = tuple(substitute(i, env) for i in b.instrs)
        blocks.append(Block(b.label, instrs, substitute_term(b.term, env)))
    return l.with_blocks(blocks)


def dominators(l: KernelLIR) -> dict:
    order = reachable(l)
    preds = predecessors(l)
    dom = {lab: set(order) for lab in order}
    dom[l.entry] = {l.entry}
    changed = True
    while changed:
        changed = False
        for lab in order:
            if lab == l.entry:
                continue
            ps = [dom[p] for p in preds[lab] if p in dom]
            new = set.intersection(*ps) | {lab} if ps else {lab}
            if new != dom[lab]:
                dom[lab] = new
                changed = True
    return dom


def idom_tree(l: KernelLIR, dom: dict) -> dict:
    children = {lab: [] for lab in dom}
    for lab, ds in dom.items():
        if lab == l.entry:
            continue
        strict = ds - {lab}
        idom = max(strict, key=lambda d: len(dom[d]))
        children[idom].append(lab)
    return children


def _imm_array(x: Imm):
    return np.array([x.value], dtype=dtype_of(x.ty))


def _to_imm(arr, ty) -> Imm:
    v = arr[0]
    if ty == BOOL:
        return Imm(bool(v), ty)
    if ty.is_int:
        return Imm(int(v), ty)
    return Imm(float(v), ty)


# -- constant folding ---------------------------------------------------------


def _algebraic(ins: Instr):
    """Identity simplifications that are exact for the operand type."""
    a, b = ins.srcs if len(ins.srcs) == 2 else (None, None)
    t = ins.ty
    if t is None or ins.op not in ("add", "sub", "mul", "div", "shl", "shr", "and", "or", "xor"):
        return None
    if t.is_int:
        if ins.op in ("add", "or", "xor") and isinstance(a, Imm) and a.value == 0:
            return b
        if ins.op in ("add", "sub", "or", "xor", "shl", "shr") and isinstance(b, Imm) and b.value == 0:
            return a
        if ins.op == "mul" and isinstance(a, Imm) and a.value == 1:
            return b
        if ins.op in ("mul", "div") and isinstance(b, Imm) and b.value == 1:
            return a
        if ins.op == "mul" and (isinstance(a, Imm) and a.value == 0 or isinstance(b, Imm) and b.value == 0):
            return Imm(0, t)
    if t == BOOL:
        for x, y in ((a, b), (b, a)):
            if isinstance(x, Imm):
                if ins.op == "and":
                    return y if x.value else Imm(False, BOOL)
                if ins.op == "or":
                    return Imm(True, BOOL) if x.value else y
                if ins.op == "xor" and not x.value:
                    return y
    return None


def fold(l: KernelLIR) -> KernelLIR:
    """Evaluate constant operations, fold constant guards and branches."""
    blocks = []
    for b in l.blocks:
        out = []
        for ins in b.instrs:
            if ins.guard is not None and isinstance(ins.guard[0], Imm):
                taken = bool(ins.guard[0].value) != ins.guard[1]
                if not taken:
                    continue
                ins = replace(ins, guard=None)
            if ins.addr is not None:
                ins = replace(ins, addr=_normalize_addr(ins.addr))
            if ins.op in FOLDABLE and ins.dst is not None:
                if ins.op != "mov" and ins.srcs and all(isinstance(s, Imm) for s in ins.srcs):
                    res = evaluate(ins.op, ins.ty, ins.attr, [_imm_array(s) for s in ins.srcs])
                    ins = Instr("mov", ins.dst.ty, ins.dst, (_to_imm(res, ins.dst.ty),), guard=ins.guard)
                else:
                    simp = _algebraic(ins)
                    if simp is not None:
                        ins = Instr("mov", ins.dst.ty, ins.dst, (simp,), guard=ins.guard)
                if ins.op == "selp" and isinstance(ins.srcs[2], Imm):
                    ins = Instr("mov", ins.ty, ins.dst, (ins.srcs[0] if ins.srcs[2].value else ins.srcs[1],), guard=ins.guard)
            out.append(ins)
        t = b.term
        if isinstance(t, Branch):
            if isinstance(t.pred, Imm):
                t = Jump(t.if_true if t.pred.value else t.if_false)
            elif t.if_true == t.if_false:
                t = Jump(t.if_true)
        blocks.append(Block(b.label, tuple(out), t))
    return l.with_blocks(blocks)


# -- copy propagation ---------------------------------------------------------


def copy_propagate(l: KernelLIR) -> KernelLIR:
    """Forward copies and constants.

    Globally for single-definition movs whose source cannot change (an
    immediate or another single-definition register), and locally within a
    block for everything else.
    """
    counts = def_counts(l)
    env = {}
    for ins in l.instructions():
        if ins.op == "mov" and ins.guard is None and counts[ins.dst.id] == 1:
            s = ins.srcs[0]
            if isinstance(s, Imm) or (isinstance(s, Reg) and counts[s.id] == 1 and s.id != ins.dst.id):
                env[ins.dst.id] = s
    # an immediate can not become an address base
    l = apply_env(l, env)

    blocks = []
    for b in l.blocks:
        avail: dict = {}
        out = []
        for ins in b.instrs:
            ins = substitute(ins, avail)
            if ins.dst is not None:
                d = ins.dst.id
                avail.pop(d, None)
                for k in [k for k, v in avail.items() if isinstance(v, Reg) and v.id == d]:
                    del avail[k]
                if ins.op == "mov" and ins.guard is None and ins.srcs[0] != ins.dst:
                    avail[d] = ins.srcs[0]
            out.append(ins)
        blocks.append(Block(b.label, tuple(out), substitute_term(b.term, avail)))
    return l.with_blocks(blocks)


# -- common subexpression elimination ----------------------------------------

_CSE_OPS = FOLDABLE - {"mov"} | {"sreg", "ldparam"}


def _key(ins: Instr):
    return (ins.op, ins.ty, ins.srcs, ins.attr)


def cse(l: KernelLIR) -> KernelLIR:
    """Share repeated pure computations.

    Expressions over single-definition registers are shared along the
    dominator tree; anything else (and loads) only within an extended basic
    block, with loads invalidated by stores, atomics and barriers.
    """
    counts = def_counts(l)
    dom = dominators(l)
    tree = idom_tree(l, dom)
    bm = l.block_map()
    env: dict = {}
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * len(l.blocks) + 1000))
    new_instrs: dict = {}

    def stable(x):
        return isinstance(x, Imm) or (isinstance(x, Reg) and counts[x.id] == 1)

    preds = predecessors(l)

    def walk(lab, scoped: dict, local: dict, loads: dict):
        scoped, local, loads = dict(scoped), dict(local), dict(loads)
        out = []
        for ins in bm[lab].instrs:
            ins = substitute(ins, env)
            add = None
            if ins.guard is None and ins.dst is not None and ins.op in _CSE_OPS:
                k = _key(ins)
                single = counts[ins.dst.id] == 1
                prev = scoped.get(k) or local.get(k)
                if prev is not None and prev.ty == ins.dst.ty:
                    if single and counts[prev.id] == 1:
                        env[ins.dst.id] = prev
                        continue
                    ins = Instr("mov", ins.dst.ty, ins.dst, (prev,))
                elif single and all(stable(s) for s in ins.srcs):
                    scoped[k] = ins.dst
                else:
                    add = (local, k)
            elif ins.op == "ld" and ins.guard is None:
                k = (ins.ty, ins.addr, ins.space, ins.attr)
                prev = loads.get(k)
                if prev is not None:
                    ins = Instr("mov", ins.dst.ty, ins.dst, (prev,))
                else:
                    add = (loads, k)
            elif ins.has_side_effects:
                loads.clear()
            if ins.dst is not None:
                d = ins.dst.id
                for table in (local, loads):
                    for k in [k for k, v in table.items() if v.id == d or _mentions(k, d)]:
                        del table[k]
                if add is not None and not _mentions(add[1], d):
                    add[0][add[1]] = ins.dst
            out.append(ins)
        new_instrs[lab] = out
        for c in tree.get(lab, ()):
            # a sole-predecessor successor starts exactly where this block ends
            direct = preds[c] == [lab]
            walk(c, scoped, local if direct else {}, loads if direct else {})

    walk(l.entry, {}, {}, {})
    blocks = []
    for b in l.blocks:
        if b.label not in new_instrs:
            blocks.append(b)
        else:
            blocks.append(Block(b.label, tuple(new_instrs[b.label]), b.term))
    return apply_env(l.with_blocks(blocks), env)


def _mentions(key, rid: int) -> bool:
    for part in key:
        if isinstance(part, Reg) and part.id == rid:
            return True
        if isinstance(part, tuple) and _mentions(part, rid):
            return True
        if isinstance(part, Addr) and any(isinstance(x, Reg) and x.id == rid for x in part.operands()):
            return True
    return False


# -- loop-invariant code motion -----------------------------------------------


def natural_loops(l: KernelLIR, dom: dict) -> list:
    """(header, body label set) for each back edge, innermost first."""
    preds = predecessors(l)
    loops = {}
    for b in l.blocks:
        if b.label not in dom:
            continue
        for s in successors(b.term):
            if s in dom.get(b.label, ()):  # s dominates b: back edge
                body = loops.setdefault(s, {s})
                stack = [b.label]
                while stack:
                    x = stack.pop()
                    if x not in body:
                        body.add(x)
                        stack.extend(p for p in preds[x] if p in dom)
    return sorted(loops.items(), key=lambda kv: len(kv[1]))


def licm(l: KernelLIR) -> KernelLIR:
    """Hoist pure single-definition computations with loop-invariant operands."""
    for _ in range(64):
        changed = False
        dom = dominators(l)
        counts = def_counts(l)
        preds = predecessors(l)
        for header, body in natural_loops(l, dom):
            outside = [p for p in preds[header] if p not in body]
            bm = l.block_map()
            if len(outside) != 1 or not isinstance(bm[outside[0]].term, Jump):
                continue
            pre = outside[0]
            defined_in = {ins.dst.id for lab in body for ins in bm[lab].instrs if ins.dst is not None}
            hoisted, hoisted_ids = [], set()
            new_blocks = {}
            for lab in [b.label for b in l.blocks if b.label in body]:
                keep = []
                for ins in bm[lab].instrs:
                    ok = (
                        ins.is_pure
                        and ins.dst is not None
                        and counts[ins.dst.id] == 1
                        and all(not isinstance(s, Reg) or s.id not in defined_in or s.id in hoisted_ids for s in ins.srcs)
                    )
                    if ok:
                        hoisted.append(ins)
                        hoisted_ids.add(ins.dst.id)
                    else:
                        keep.append(ins)
                new_blocks[lab] = keep
            if hoisted:
                blocks = []
                for b in l.blocks:
                    if b.label == pre:
                        blocks.append(Block(b.label, b.instrs + tuple(hoisted), b.term))
                    elif b.label in new_blocks:
                        blocks.append(Block(b.label, tuple(new_blocks[b.label]), b.term))
                    else:
                        blocks.append(b)
                l = l.with_blocks(blocks)
                changed = True
                break
        if not changed:
            break
    return l


# -- straightening ------------------------------------------------------------


def straighten(l: KernelLIR) -> KernelLIR:
    """Drop unreachable blocks, thread empty jump blocks, merge linear chains."""
    live = set(reachable(l))
    blocks = [b for b in l.blocks if b.label in live]
    changed = True
    while changed:
        changed = False
        bm = {b.label: b for b in blocks}
        entry = blocks[0].label
        # thread jumps through empty blocks
        fwd = {}
        for b in blocks:
            if not b.instrs and isinstance(b.term, Jump) and b.term.target != b.label and b.label != entry:
                fwd[b.label] = b.term.target

        def final(x):
            seen = set()
            while x in fwd and x not in seen:
                seen.add(x)
                x = fwd[x]
            return x

        if fwd:
            nb = []
            for b in blocks:
                t = b.term
                if isinstance(t, Jump):
                    t2 = Jump(final(t.target))
                elif isinstance(t, Branch):
                    a, c = final(t.if_true), final(t.if_false)
                    t2 = Jump(a) if a == c else Branch(t.pred, a, c)
                else:
                    t2 = t
                if t2 != t:
                    changed = True
                nb.append(Block(b.label, b.instrs, t2))
            blocks = nb
            live = set(reachable(l.with_blocks(blocks)))
            if len(live) != len(blocks):
                changed = True
            blocks = [b for b in blocks if b.label in live]
        # merge B into A when A jumps to B and B has no other predecessor
        preds = predecessors(l.with_blocks(blocks))
        bm = {b.label: b for b in blocks}
        for a in blocks:
            if isinstance(a.term, Jump):
                t = a.term.target
                if t != a.label and t != blocks[0].label and preds[t] == [a.label]:
                    b = bm[t]
                    merged = Block(a.label, a.instrs + b.instrs, b.term)
                    blocks = [merged if x.label == a.label else x for x in blocks if x.label != t]
                    changed = True
                    break
    return l.with_blocks(blocks)


# -- dead code elimination ----------------------------------------------------


def liveness(l: KernelLIR) -> dict:
    """Live-out register ids per block."""
    return live_sets(l)[1]


def live_sets(l: KernelLIR) -> tuple:
    """(live-in, live-out) register id sets per block."""
    use, kill = {}, {}
    for b in l.blocks:
        u, k = set(), set()
        for ins in b.instrs:
            for r in ins.uses():
                if r.id not in k:
                    u.add(r.id)
            if ins.dst is not None and ins.guard is None:
                k.add(ins.dst.id)
        for r in term_uses(b.term):
            if r.id not in k:
                u.add(r.id)
        use[b.label], kill[b.label] = u, k
    live_in = {b.label: set() for b in l.blocks}
    live_out = {b.label: set() for b in l.blocks}
    changed = True
    while changed:
        changed = False
        for b in reversed(l.blocks):
            out = set()
            for s in successors(b.term):
                out |= live_in[s]
            inn = use[b.label] | (out - kill[b.label])
            if out != live_out[b.label] or inn != live_in[b.label]:
                live_out[b.label], live_in[b.label] = out, inn
                changed = True
    return live_in, live_out


def dce(l: KernelLIR) -> KernelLIR:
    """Remove instructions whose results are never used (and self-moves)."""
    while True:
        live_out = liveness(l)
        removed = False
        blocks = []
        for b in l.blocks:
            live = set(live_out[b.label]) | {r.id for r in term_uses(b.term)}
            keep = []
            for ins in reversed(b.instrs):
                removable = not ins.has_side_effects and ins.dst is not None
                if removable and (ins.dst.id not in live or (ins.op == "mov" and ins.srcs[0] == ins.dst)):
                    removed = True
                    continue
                if ins.dst is not None and ins.guard is None:
                    live.discard(ins.dst.id)
                live.update(r.id for r in ins.uses())
                keep.append(ins)
            blocks.append(Block(b.label, tuple(reversed(keep)), b.term))
        l = l.with_blocks(blocks)
        if not removed:
            return l


LIR_PASSES = {
    "fold": fold,
    "copyprop": copy_propagate,
    "cse": cse,
    "licm": licm,
    "straighten": straighten,
    "dce": dce,
}
