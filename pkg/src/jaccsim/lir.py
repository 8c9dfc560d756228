"""Low-level control-flow IR (LIR): typed virtual registers in basic blocks.

The instruction set mirrors the virtual ISA one-to-one, so the LIR dump and
the emitted assembly share a printer (see `vka.emit`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .errors import InternalCompilerError
from .types import BOOL, I64, ScalarType


@dataclass(frozen=True)
class Reg:
    id: int
    ty: ScalarType

    def __repr__(self) -> str:
        return f"%{self.ty.name}_{self.id}"


@dataclass(frozen=True, eq=False)
class Imm:
    value: Union[int, float, bool]
    ty: ScalarType

    def __repr__(self) -> str:
        return f"#{self.value}:{self.ty.name}"

    def _bits(self):
        # floats compare by bit pattern so -0.0 and 0.0 stay distinct
        if isinstance(self.value, float):
            return struct.pack("<d", self.value)
        return self.value

    def __eq__(self, other) -> bool:
        return isinstance(other, Imm) and self.ty == other.ty and self._bits() == other._bits()

    def __hash__(self) -> int:
        return hash((self.ty, self._bits()))


Operand = Union[Reg, Imm]


@dataclass(frozen=True)
class Addr:
    """Effective address `base + index*scale + offset` within one memory space.

    `base` is None for absolute addresses into per-group (shared), per-thread
    (local) and constant regions.
    """

    base: Optional[Operand] = None
    index: Optional[Operand] = None
    scale: int = 1
    offset: int = 0

    def operands(self) -> tuple:
        return tuple(x for x in (self.base, self.index) if x is not None)


# opcode families
BINOPS = ("add", "sub", "mul", "div", "rem", "min", "max", "and", "or", "xor", "shl", "shr")
UNOPS = ("neg", "not", "abs")
INTRINSICS = ("sin", "cos", "sqrt", "exp", "log", "pow", "popc")
TRANSCENDENTAL = ("sin", "cos", "sqrt", "exp", "log", "pow")
CMPS = ("eq", "ne", "lt", "le", "gt", "ge")
ATOMIC_OPS = ("add", "sub", "and", "or", "xor")
SPACES = ("global", "shared", "local", "const")
SREGS = ("tid", "ctaid", "ntid", "gid", "nthreads")
DIMS = ("x", "y", "z")

PURE_OPS = set(BINOPS) | set(UNOPS) | set(INTRINSICS) | {"mov", "cvt", "setp", "selp", "sreg", "ldparam"}
SIDE_EFFECT_OPS = {"st", "atom", "barrier"}


@dataclass(frozen=True)
class Instr:
    """One instruction.

    op      opcode family (see module constants), plus 'ld', 'st', 'atom',
            'cvt', 'setp', 'selp', 'sreg', 'ldparam', 'barrier'
    ty      operation type (destination type for cvt)
    attr    compare op for setp, source type name for cvt and popc, atomic op
            for atom, (sreg, dim) for sreg, param name for ldparam, 'nc' for a
            cachable load
    guard   (predicate register, negated) or None
    """

    op: str
    ty: Optional[ScalarType] = None
    dst: Optional[Reg] = None
    srcs: tuple = ()
    addr: Optional[Addr] = None
    space: Optional[str] = None
    attr: object = None
    guard: Optional[tuple] = None

    def uses(self) -> tuple:
        regs = [s for s in self.srcs if isinstance(s, Reg)]
        if self.addr is not None:
            regs.extend(x for x in self.addr.operands() if isinstance(x, Reg))
        if self.guard is not None and isinstance(self.guard[0], Reg):
            regs.append(self.guard[0])
        return tuple(regs)

    @property
    def is_pure(self) -> bool:
        return self.op in PURE_OPS and self.guard is None

    @property
    def has_side_effects(self) -> bool:
        return self.op in SIDE_EFFECT_OPS


@dataclass(frozen=True)
class Jump:
    target: int


@dataclass(frozen=True)
class Branch:
    pred: Operand  # Reg of type bool (or an Imm after folding)
    if_true: int
    if_false: int


@dataclass(frozen=True)
class Ret:
    pass


@dataclass(frozen=True)
class Trap:
    kind: str = "bounds"


Terminator = Union[Jump, Branch, Ret, Trap]


def successors(t) -> tuple:
    if isinstance(t, Jump):
        return (t.target,)
    if isinstance(t, Branch):
        return (t.if_true, t.if_false) if t.if_true != t.if_false else (t.if_true,)
    return ()


@dataclass(frozen=True)
class Block:
    label: int
    instrs: tuple
    term: Terminator


@dataclass(frozen=True)
class ParamInfo:
    name: str
    kind: str  # 'buffer', 'scalar', 'object'
    ty: Optional[ScalarType] = None  # element type for buffers, value type for scalars
    size: int = 0  # byte size for objects


@dataclass(frozen=True)
class KernelLIR:
    name: str
    params: tuple
    blocks: tuple
    shared_size: int = 0
    local_size: int = 0
    atominit: tuple = ()  # (param, offset, type, value)
    constimage: Optional[str] = None  # param whose image seeds the constant region
    const_size: int = 0

    def block_map(self) -> dict:
        return {b.label: b for b in self.blocks}

    def with_blocks(self, blocks) -> "KernelLIR":
        return replace(self, blocks=tuple(blocks))

    @property
    def entry(self) -> int:
        return self.blocks[0].label

    def instructions(self):
        for b in self.blocks:
            yield from b.instrs

    def instr_count(self) -> int:
        return sum(len(b.instrs) for b in self.blocks)

    def emitted_count(self) -> int:
        """Instruction count of the emitted program, control transfers included."""
        n = self.instr_count()
        labels = [b.label for b in self.blocks]
        for i, b in enumerate(self.blocks):
            nxt = labels[i + 1] if i + 1 < len(labels) else None
            t = b.term
            if isinstance(t, Jump):
                n += t.target != nxt
            elif isinstance(t, Branch):
                n += 1 if nxt in (t.if_true, t.if_false) else 2
            else:
                n += 1
        return n

    def cond_branch_count(self) -> int:
        return sum(1 for b in self.blocks if isinstance(b.term, Branch))

    def max_reg(self) -> int:
        m = -1
        for b in self.blocks:
            for ins in b.instrs:
                if ins.dst is not None:
                    m = max(m, ins.dst.id)
                for r in ins.uses():
                    m = max(m, r.id)
            if isinstance(b.term, Branch) and isinstance(b.term.pred, Reg):
                m = max(m, b.term.pred.id)
        return m


def term_uses(t) -> tuple:
    if isinstance(t, Branch) and isinstance(t.pred, Reg):
        return (t.pred,)
    return ()


def predecessors(l: KernelLIR) -> dict:
    preds = {b.label: [] for b in l.blocks}
    for b in l.blocks:
        for s in successors(b.term):
            preds[s].append(b.label)
    return preds


def reachable(l: KernelLIR) -> list:
    bm = l.block_map()
    seen, order, stack = set(), [], [l.entry]
    while stack:
        lab = stack.pop()
        if lab in seen:
            continue
        seen.add(lab)
        order.append(lab)
        for s in reversed(successors(bm[lab].term)):
            stack.append(s)
    return order


# -- verification -------------------------------------------------------------


def verify(l: KernelLIR) -> None:
    """Structural checks plus define-before-use on every path."""
    labels = [b.label for b in l.blocks]
    if not labels:
        raise InternalCompilerError(f"{l.name}: LIR has no blocks")
    if len(set(labels)) != len(labels):
        raise InternalCompilerError(f"{l.name}: duplicate block labels")
    label_set = set(labels)
    reg_types: dict = {}
    for b in l.blocks:
        for s in successors(b.term):
            if s not in label_set:
                raise InternalCompilerError(f"{l.name}: block L{b.label} branches to missing L{s}")
        if isinstance(b.term, Branch) and isinstance(b.term.pred, Reg) and b.term.pred.ty != BOOL:
            raise InternalCompilerError(f"{l.name}: branch on non-predicate {b.term.pred}")
        for ins in b.instrs:
            for r in ins.uses() + ((ins.dst,) if ins.dst is not None else ()):
                prev = reg_types.setdefault(r.id, r.ty)
                if prev != r.ty:
                    raise InternalCompilerError(f"{l.name}: register {r.id} used with types {prev} and {r.ty}")
            if ins.addr is not None and isinstance(ins.addr.base, Reg) and ins.addr.base.ty != I64:
                raise InternalCompilerError(f"{l.name}: address base {ins.addr.base} is not 64-bit")

    bm = l.block_map()
    preds = predecessors(l)
    order = reachable(l)
    universe = frozenset(reg_types)
    out = {lab: universe for lab in labels}
    out[l.entry] = None
    defs_of = {}
    for b in l.blocks:
        defs_of[b.label] = frozenset(ins.dst.id for ins in b.instrs if ins.dst is not None)
    changed = True
    ins_sets = {}
    while changed:
        changed = False
        for lab in order:
            if lab == l.entry:
                cur = frozenset()
            else:
                ps = [out[p] for p in preds[lab] if p in out and out[p] is not None]
                cur = frozenset.intersection(*ps) if ps else frozenset()
            ins_sets[lab] = cur
            new = cur | defs_of[lab]
            if out[lab] != new:
                out[lab] = new
                changed = True
    for lab in order:
        defined = set(ins_sets[lab])
        for ins in bm[lab].instrs:
            for r in ins.uses():
                if r.id not in defined:
                    raise InternalCompilerError(f"{l.name}: register {r!r} used before definition in L{lab}")
            if ins.dst is not None:
                defined.add(ins.dst.id)
        for r in term_uses(bm[lab].term):
            if r.id not in defined:
                raise InternalCompilerError(f"{l.name}: register {r!r} used before definition in L{lab}")


def format_lir(l: KernelLIR) -> str:
    from .vka.emit import emit_vka

    return emit_vka(l, strict=False, all_labels=True)
