"""Parse and validate VKA text."""

from __future__ import annotations

import re
import struct
from typing import Optional

from ..errors import AssemblyError, InternalCompilerError
from ..lir import (
    ATOMIC_OPS,
    BINOPS,
    CMPS,
    DIMS,
    SREGS,
    TRANSCENDENTAL,
    Addr,
    Block,
    Branch,
    Imm,
    Instr,
    Jump,
    KernelLIR,
    ParamInfo,
    Reg,
    Ret,
    Trap,
    verify,
)
from ..types import FROM_VKA, ScalarType
from .emit import REG_PREFIX
from .program import VkaProgram

_PREFIX_TYPE = {v: k for k, v in REG_PREFIX.items()}
_REG_RE = re.compile(r"^%(rd|r|fd|f|p)(\d+)$")
_SREG_RE = re.compile(r"^%(\w+)\.([xyz])$")
_INT_RE = re.compile(r"^-?\d+$")
_LABEL_RE = re.compile(r"^\$L(\d+)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")

NUMERIC = ("s32", "s64", "f32", "f64")
INTS = ("s32", "s64")
FLOATS = ("f32", "f64")
LOGICAL = ("and", "or", "xor")
MEM_SPACES = ("global", "shared", "local", "const")


class _Ctx:
    def __init__(self):
        self.line = 0
        self.regs: dict = {}
        self.declared: dict = {}
        self.nreg = 0

    def err(self, msg: str):
        raise AssemblyError(msg, self.line, 1)

    def vtype(self, t: str) -> str:
        if t not in FROM_VKA:
            self.err(f"unknown type '.{t}'")
        return t


def _scalar(t: str) -> ScalarType:
    return ScalarType(FROM_VKA[t])


def _parse_reg(ctx: _Ctx, tok: str) -> Reg:
    m = _REG_RE.match(tok)
    if not m:
        ctx.err(f"expected a register, got '{tok}'")
    pfx, n = "%" + m.group(1), int(m.group(2))
    tname = _PREFIX_TYPE[pfx]
    limit = ctx.declared.get(tname)
    if limit is None or not 1 <= n <= limit:
        ctx.err(f"undeclared register '{tok}'")
    key = (tname, n)
    if key not in ctx.regs:
        ctx.nreg += 1
        ctx.regs[key] = Reg(ctx.nreg, ScalarType(tname))
    return ctx.regs[key]


def _parse_imm(ctx: _Ctx, tok: str, t: str) -> Imm:
    ty = _scalar(t)
    if t == "pred":
        if tok not in ("0", "1"):
            ctx.err(f"type mismatch: '{tok}' is not a .pred immediate")
        return Imm(tok == "1", ty)
    if t in INTS:
        if not _INT_RE.match(tok):
            ctx.err(f"type mismatch: '{tok}' is not a .{t} immediate")
        v = int(tok)
        bits = 32 if t == "s32" else 64
        if not -(1 << (bits - 1)) <= v < (1 << (bits - 1)):
            ctx.err(f"immediate {v} out of range for .{t}")
        return Imm(v, ty)
    width = 8 if t == "f32" else 16
    prefix = "0f" if t == "f32" else "0d"
    if not (tok.startswith(prefix) and len(tok) == 2 + width and re.fullmatch(r"[0-9A-F]+", tok[2:])):
        ctx.err(f"type mismatch: '{tok}' is not a .{t} immediate")
    raw = bytes.fromhex(tok[2:])
    return Imm(struct.unpack(">f" if t == "f32" else ">d", raw)[0], ty)


def _operand(ctx: _Ctx, tok: str, t: str, allow_imm: bool = True):
    """Register or immediate of VKA type `t`."""
    if tok.startswith("%"):
        r = _parse_reg(ctx, tok)
        if r.ty != _scalar(t):
            ctx.err(f"type mismatch: '{tok}' is not a .{t} register")
        return r
    if not allow_imm:
        ctx.err(f"immediate operand '{tok}' not allowed here")
    return _parse_imm(ctx, tok, t)


def _dst(ctx: _Ctx, tok: str, t: str) -> Reg:
    if not tok.startswith("%"):
        ctx.err(f"destination must be a register, got '{tok}'")
    return _operand(ctx, tok, t)


def _parse_addr(ctx: _Ctx, tok: str, space: str) -> Addr:
    if not (tok.startswith("[") and tok.endswith("]")):
        ctx.err(f"expected an address, got '{tok}'")
    inner = tok[1:-1].strip()
    if not inner:
        ctx.err("empty address")
    inner = inner.replace(" - ", " + -")
    base = index = None
    scale, offset = 1, 0
    seen_off = False
    for term in (x.strip() for x in inner.split("+")):
        if "*" in term:
            r, _, sc = term.partition("*")
            if index is not None or not _INT_RE.match(sc.strip()):
                ctx.err(f"malformed address '{tok}'")
            index = _parse_reg(ctx, r.strip())
            if index.ty.name not in ("i32", "i64"):
                ctx.err(f"type mismatch: address index '{r.strip()}' is not an integer register")
            scale = int(sc)
            if scale not in (1, 2, 4, 8):
                ctx.err(f"bad address scale {scale}")
        elif term.startswith("%"):
            if base is not None or index is not None or seen_off:
                ctx.err(f"malformed address '{tok}'")
            base = _parse_reg(ctx, term)
            if base.ty.name != "i64":
                ctx.err(f"type mismatch: address base '{term}' is not a .s64 register")
        elif _INT_RE.match(term):
            if seen_off:
                ctx.err(f"malformed address '{tok}'")
            seen_off = True
            offset = int(term)
        else:
            ctx.err(f"malformed address '{tok}'")
    if space in ("shared", "local", "const") and base is not None:
        ctx.err(f"{space} addresses take no base register")
    return Addr(base, index, scale, offset)


def _split_operands(text: str) -> list:
    return [x.strip() for x in text.split(",")] if text.strip() else []


def _arity(ctx: _Ctx, ops: list, n: int, opcode: str):
    if len(ops) != n:
        ctx.err(f"'{opcode}' takes {n} operands, got {len(ops)}")


def parse_instruction(ctx: _Ctx, text: str):
    """Returns an Instr, or a ('bra'|'ret'|'trap', ...) control tuple."""
    guard = None
    if text.startswith("@"):
        g, _, text = text.partition(" ")
        neg = g.startswith("@!")
        p = _parse_reg(ctx, g[2:] if neg else g[1:])
        if p.ty.name != "bool":
            ctx.err(f"type mismatch: guard '{g}' is not a predicate")
        guard = (p, neg)
        text = text.strip()
    opcode, _, rest = text.partition(" ")
    parts = opcode.split(".")
    head = parts[0]
    ops = _split_operands(rest)

    def unknown():
        ctx.err(f"unknown opcode '{opcode}'")

    if head == "bra":
        if len(parts) != 1:
            unknown()
        _arity(ctx, ops, 1, opcode)
        if not _LABEL_RE.match(ops[0]):
            ctx.err(f"expected a label, got '{ops[0]}'")
        return ("bra", guard, ops[0], ctx.line)
    if head == "ret":
        if len(parts) != 1 or ops:
            unknown()
        if guard is not None:
            ctx.err("'ret' cannot be predicated")
        return ("ret",)
    if head == "trap":
        if len(parts) != 2 or parts[1] != "bounds" or ops:
            unknown()
        if guard is not None:
            ctx.err("'trap' cannot be predicated")
        return ("trap", parts[1])
    if head == "barrier":
        if parts != ["barrier", "group"] or ops:
            unknown()
        if guard is not None:
            ctx.err("'barrier.group' cannot be predicated")
        return Instr("barrier")

    if head == "mov" and len(parts) == 2:
        t = ctx.vtype(parts[1])
        _arity(ctx, ops, 2, opcode)
        m = _SREG_RE.match(ops[1])
        if m and not _REG_RE.match(ops[1]):
            if m.group(1) not in SREGS:
                ctx.err(f"unknown special register '{ops[1]}'")
            if t != "s32":
                ctx.err(f"type mismatch: special register '{ops[1]}' is .s32")
            return Instr("sreg", _scalar(t), _dst(ctx, ops[0], t), (), attr=(m.group(1), DIMS.index(m.group(2))), guard=guard)
        return Instr("mov", _scalar(t), _dst(ctx, ops[0], t), (_operand(ctx, ops[1], t),), guard=guard)
    if head in BINOPS and len(parts) == 2:
        t = ctx.vtype(parts[1])
        if t == "pred" and head not in LOGICAL:
            ctx.err(f"type mismatch: '{head}' has no .pred form")
        if head in ("shl", "shr") + LOGICAL and t in FLOATS:
            ctx.err(f"type mismatch: '{head}' has no .{t} form")
        _arity(ctx, ops, 3, opcode)
        return Instr(head, _scalar(t), _dst(ctx, ops[0], t), (_operand(ctx, ops[1], t), _operand(ctx, ops[2], t)), guard=guard)
    if head in ("neg", "abs", "not") and len(parts) == 2:
        t = ctx.vtype(parts[1])
        if (head == "not" and t in FLOATS) or (head != "not" and t == "pred"):
            ctx.err(f"type mismatch: '{head}' has no .{t} form")
        _arity(ctx, ops, 2, opcode)
        return Instr(head, _scalar(t), _dst(ctx, ops[0], t), (_operand(ctx, ops[1], t, False),), guard=guard)
    if head in TRANSCENDENTAL and len(parts) == 2:
        t = ctx.vtype(parts[1])
        if t not in FLOATS:
            ctx.err(f"type mismatch: '{head}' has no .{t} form")
        n = 3 if head == "pow" else 2
        _arity(ctx, ops, n, opcode)
        srcs = tuple(_operand(ctx, o, t, False) for o in ops[1:])
        return Instr(head, _scalar(t), _dst(ctx, ops[0], t), srcs, guard=guard)
    if head == "popc" and len(parts) == 2:
        t = ctx.vtype(parts[1])
        if t not in INTS:
            ctx.err(f"type mismatch: 'popc' has no .{t} form")
        _arity(ctx, ops, 2, opcode)
        return Instr("popc", _scalar("s32"), _dst(ctx, ops[0], "s32"), (_operand(ctx, ops[1], t, False),), attr=FROM_VKA[t], guard=guard)
    if head == "cvt" and len(parts) == 3:
        d, s = ctx.vtype(parts[1]), ctx.vtype(parts[2])
        if d not in NUMERIC or s not in NUMERIC or d == s:
            ctx.err(f"type mismatch: no conversion '{opcode}'")
        _arity(ctx, ops, 2, opcode)
        return Instr("cvt", _scalar(d), _dst(ctx, ops[0], d), (_operand(ctx, ops[1], s, False),), attr=FROM_VKA[s], guard=guard)
    if head == "setp" and len(parts) == 3:
        if parts[1] not in CMPS:
            unknown()
        t = ctx.vtype(parts[2])
        if t not in NUMERIC:
            ctx.err(f"type mismatch: 'setp' has no .{t} form")
        _arity(ctx, ops, 3, opcode)
        return Instr("setp", _scalar(t), _dst(ctx, ops[0], "pred"), (_operand(ctx, ops[1], t), _operand(ctx, ops[2], t)), attr=parts[1], guard=guard)
    if head == "selp" and len(parts) == 2:
        t = ctx.vtype(parts[1])
        _arity(ctx, ops, 4, opcode)
        srcs = (_operand(ctx, ops[1], t), _operand(ctx, ops[2], t), _operand(ctx, ops[3], "pred"))
        return Instr("selp", _scalar(t), _dst(ctx, ops[0], t), srcs, guard=guard)
    if head == "ld" and len(parts) == 3 and parts[1] == "param":
        t = ctx.vtype(parts[2])
        _arity(ctx, ops, 2, opcode)
        name = ops[1][1:-1] if ops[1].startswith("[") and ops[1].endswith("]") else ""
        if not _NAME_RE.match(name):
            ctx.err(f"expected [param], got '{ops[1]}'")
        return ("ldparam", Instr("ldparam", _scalar(t), _dst(ctx, ops[0], t), (), attr=name, guard=guard))
    if head == "ld" and len(parts) in (3, 4):
        space = parts[1]
        nc = len(parts) == 4
        if space not in MEM_SPACES or (nc and parts[2] != "nc"):
            unknown()
        t = ctx.vtype(parts[-1])
        if t == "pred":
            ctx.err("type mismatch: loads have no .pred form")
        _arity(ctx, ops, 2, opcode)
        return Instr("ld", _scalar(t), _dst(ctx, ops[0], t), (), _parse_addr(ctx, ops[1], space), space, "nc" if nc else None, guard)
    if head == "st" and len(parts) == 3:
        space = parts[1]
        if space not in MEM_SPACES:
            unknown()
        if space == "const":
            ctx.err("store to constant space")
        t = ctx.vtype(parts[2])
        if t == "pred":
            ctx.err("type mismatch: stores have no .pred form")
        _arity(ctx, ops, 2, opcode)
        addr = _parse_addr(ctx, ops[0], space)
        return Instr("st", _scalar(t), None, (_operand(ctx, ops[1], t, False),), addr, space, None, guard)
    if head == "atom" and len(parts) == 4:
        space, aop = parts[1], parts[2]
        if space not in ("global", "shared") or aop not in ATOMIC_OPS:
            unknown()
        t = ctx.vtype(parts[3])
        if t not in ("s32", "f32"):
            ctx.err(f"type mismatch: atomics have no .{t} form")
        if t == "f32" and aop not in ("add", "sub"):
            ctx.err(f"type mismatch: atom.{aop} has no .f32 form")
        _arity(ctx, ops, 2, opcode)
        addr = _parse_addr(ctx, ops[0], space)
        return Instr("atom", _scalar(t), None, (_operand(ctx, ops[1], t, False),), addr, space, aop, guard)
    unknown()


def _parse_header(ctx: _Ctx, lines: list):
    """Consume directives up to '{'; returns (header dict, index of first body line)."""
    h = {"name": None, "params": [], "shared": 0, "local": 0, "atominit": [], "constimage": None, "const_size": 0}
    for i, (ln, text) in enumerate(lines):
        ctx.line = ln
        if text == "{":
            if h["name"] is None:
                ctx.err("no kernel entry")
            return h, i + 1
        f = text.split()
        d = f[0]
        if d == ".version":
            if len(f) != 2 or f[1] != "1.0":
                ctx.err(f"unsupported version '{' '.join(f[1:])}'")
        elif d == ".kernel":
            if len(f) != 2 or not _NAME_RE.match(f[1]) or h["name"] is not None:
                ctx.err("malformed .kernel directive")
            h["name"] = f[1]
        elif d == ".param":
            if len(f) == 4 and f[1] in (".buffer", ".scalar") and f[2].startswith("."):
                t = ctx.vtype(f[2][1:])
                if t == "pred":
                    ctx.err("type mismatch: parameters have no .pred form")
                h["params"].append(ParamInfo(f[3], f[1][1:], _scalar(t)))
            elif len(f) == 4 and f[1] == ".object" and f[3].isdigit():
                h["params"].append(ParamInfo(f[2], "object", None, int(f[3])))
            else:
                ctx.err("malformed .param directive")
            if len({p.name for p in h["params"]}) != len(h["params"]):
                ctx.err(f"duplicate parameter '{h['params'][-1].name}'")
        elif d in (".shared", ".local"):
            if len(f) != 2 or not f[1].isdigit():
                ctx.err(f"malformed {d} directive")
            h[d[1:]] = int(f[1])
        elif d == ".atominit":
            if len(f) != 6 or not f[2].isdigit() or not f[5].isdigit() or not f[3].startswith("."):
                ctx.err("malformed .atominit directive")
            t = ctx.vtype(f[3][1:])
            if t not in ("s32", "f32"):
                ctx.err(f"type mismatch: atomics have no .{t} form")
            v = _parse_imm(ctx, f[4], t).value
            h["atominit"].append((f[1], int(f[2]), _scalar(t), v, int(f[5])))
        elif d == ".constimage":
            if len(f) != 3 or not f[2].isdigit():
                ctx.err("malformed .constimage directive")
            h["constimage"], h["const_size"] = f[1], int(f[2])
        elif d == ".reg":
            m = re.fullmatch(r"\.(\w+) (%\w+)<(\d+)>", " ".join(f[1:]))
            if not m:
                ctx.err("malformed .reg directive")
            t = ctx.vtype(m.group(1))
            tname = FROM_VKA[t]
            if REG_PREFIX[tname] != m.group(2):
                ctx.err(f"type mismatch: register class {m.group(2)} is not .{t}")
            ctx.declared[tname] = int(m.group(3))
        else:
            ctx.err(f"unknown directive '{d}'")
    if h["name"] is None:
        ctx.err("no kernel entry")
    ctx.err("missing '{'")


def assemble(text: str) -> VkaProgram:
    """Parse VKA text into a validated program; errors carry line numbers."""
    ctx = _Ctx()
    try:
        return _assemble(ctx, text)
    except AssemblyError:
        raise
    except (ValueError, KeyError, IndexError, TypeError, struct.error, OverflowError) as exc:
        raise AssemblyError(f"malformed input: {exc}", ctx.line, 1) from None


def _assemble(ctx: _Ctx, text: str) -> VkaProgram:
    lines = []
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.split("//", 1)[0].strip()
        if s:
            lines.append((n, s))
    if not lines:
        raise AssemblyError("no kernel entry", 1, 1)
    h, i = _parse_header(ctx, lines)

    blocks: list = []  # [label, instrs, term]
    label_ids: dict = {}
    defined: set = set()
    refs: list = []
    pending: list = []  # blocks whose fall-through target is the next block
    cur: Optional[list] = None
    next_id = [0]
    closed = False

    def label_id(name: str) -> int:
        if name not in label_ids:
            label_ids[name] = next_id[0]
            next_id[0] += 1
        return label_ids[name]

    def begin(lab: int):
        nonlocal cur
        b = [lab, [], None]
        blocks.append(b)
        for p in pending:
            kind = p[2]
            if kind == "jump":
                p[0][2] = Jump(lab)
            else:
                pred, neg, tgt = p[1]
                p[0][2] = Branch(pred, lab, tgt) if neg else Branch(pred, tgt, lab)
        pending.clear()
        cur = b

    def fresh() -> int:
        next_id[0] += 1
        return next_id[0] - 1

    for ln, s in lines[i:]:
        ctx.line = ln
        if closed:
            ctx.err("text after end of kernel body")
        if s == "}":
            closed = True
            continue
        if s.endswith(":"):
            name = s[:-1]
            if not _LABEL_RE.match(name):
                ctx.err(f"malformed label '{s}'")
            if name in defined:
                ctx.err(f"duplicate label '{name}'")
            defined.add(name)
            if cur is not None and cur[2] is None:
                pending.append((cur, None, "jump"))
            begin(label_id(name))
            continue
        if not s.endswith(";"):
            ctx.err("missing ';'")
        ins = parse_instruction(ctx, s[:-1].strip())
        if cur is None or cur[2] is not None:
            begin(fresh())
        if isinstance(ins, Instr):
            cur[1].append(ins)
        elif ins[0] == "ldparam":
            cur[1].append(ins[1])
        elif ins[0] == "bra":
            _, guard, name, line = ins
            refs.append((name, line))
            tgt = label_id(name)
            if guard is None:
                cur[2] = Jump(tgt)
            else:
                cur[2] = "cond"
                pending.append((cur, (guard[0], guard[1], tgt), "branch"))
        elif ins[0] == "ret":
            cur[2] = Ret()
        else:
            cur[2] = Trap(ins[1])
    if not closed:
        ctx.err("missing '}'")
    for name, line in refs:
        if name not in defined:
            raise AssemblyError(f"undefined label '{name}'", line, 1)
    if cur is not None and cur[2] is None:
        pending.append((cur, None, "jump"))
    if pending or not blocks:
        ctx.err("fall-through past last block")

    lir = KernelLIR(
        h["name"],
        tuple(h["params"]),
        tuple(Block(b[0], tuple(b[1]), b[2]) for b in blocks),
        shared_size=h["shared"],
        local_size=h["local"],
        atominit=tuple(h["atominit"]),
        constimage=h["constimage"],
        const_size=h["const_size"],
    )
    _check_params(ctx, lir)
    try:
        verify(lir)
    except InternalCompilerError as exc:
        raise AssemblyError(str(exc).split(": ", 1)[-1], ctx.line, 1) from None
    regs = tuple(sorted(ctx.declared.items()))
    return VkaProgram(lir, regs)


def _check_params(ctx: _Ctx, l: KernelLIR):
    by_name = {p.name: p for p in l.params}
    for b in l.blocks:
        for ins in b.instrs:
            if ins.op != "ldparam":
                continue
            name = ins.attr
            base, _, suffix = name.partition(".")
            p = by_name.get(base)
            if p is None or suffix not in ("", "len") or (suffix == "len" and p.kind != "buffer"):
                ctx.err(f"unknown parameter '{name}'")
            want = "i32" if suffix == "len" else ("i64" if p.kind in ("buffer", "object") else p.ty.name)
            if ins.ty.name != want:
                ctx.err(f"type mismatch: parameter '{name}' is .{ScalarType(want).vka}")
    for param, off, ty, _v, count in l.atominit:
        p = by_name.get(param)
        if p is None or p.kind != "object" or off < 0 or off + ty.size * count > p.size:
            ctx.err(f".atominit outside parameter '{param}'")
    if l.constimage is not None:
        p = by_name.get(l.constimage)
        if p is None or p.kind != "object" or l.const_size > p.size:
            ctx.err(f".constimage names bad parameter '{l.constimage}'")
