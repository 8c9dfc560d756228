"""Lockstep SIMT execution of assembled kernels.

Groups run in an order drawn from the schedule seed. Consecutive groups of
that order are packed into waves whose lanes advance together: each step
picks the lowest block index held by any runnable lane and executes it for
exactly those lanes, one instruction at a time. Lanes that branch away wait
at their targets until the lower blocks drain, so divergent paths reconverge
at join points. Barriers close a block; a group passes one when every live
lane in it has arrived at the same barrier.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from ..errors import BarrierDivergenceTrap, BoundsTrap, InvalidArgument, MemoryFault
from ..lir import Branch, Imm, Jump, KernelLIR, Reg, Ret, Trap
from ..vka.program import as_lir
from ..vka.semantics import dtype_of, evaluate
from .memory import Buffer, GlobalMemory

_RUN, _WAIT, _DONE = 0, 1, 2

_UFUNC_AT = {
    "add": np.add,
    "sub": np.subtract,
    "and": np.bitwise_and,
    "or": np.bitwise_or,
    "xor": np.bitwise_xor,
}


def _dims(v, what: str) -> tuple:
    if isinstance(v, (int, np.integer)):
        v = (int(v),)
    v = tuple(int(x) for x in v)
    if not 1 <= len(v) <= 3:
        raise InvalidArgument(f"{what} size needs 1 to 3 dimensions, got {len(v)}")
    if any(x < 1 for x in v):
        raise InvalidArgument(f"{what} size must be positive, got {v}")
    return v + (1,) * (3 - len(v))


@dataclass(frozen=True)
class LaunchSchedule:
    """Global and group extents of one launch."""

    global_size: tuple
    group_size: tuple
    max_group: int = 1024

    def __post_init__(self):
        g = _dims(self.global_size, "global")
        l = _dims(self.group_size, "group")
        object.__setattr__(self, "global_size", g)
        object.__setattr__(self, "group_size", l)
        for d, (a, b) in enumerate(zip(g, l)):
            if a % b:
                raise InvalidArgument(f"group size {b} does not divide global size {a} in dimension {'xyz'[d]}")
        if self.group_threads > self.max_group:
            raise InvalidArgument(f"group of {self.group_threads} threads exceeds the limit of {self.max_group}")

    @property
    def group_threads(self) -> int:
        return int(np.prod(self.group_size))

    @property
    def group_counts(self) -> tuple:
        return tuple(a // b for a, b in zip(self.global_size, self.group_size))

    @property
    def n_groups(self) -> int:
        return int(np.prod(self.group_counts))

    @property
    def total_threads(self) -> int:
        return int(np.prod(self.global_size))


@dataclass
class SimMetrics:
    instructions_executed: int = 0
    global_loads: int = 0
    global_stores: int = 0
    global_atomics: int = 0
    shared_atomics: int = 0
    divergent_branches: int = 0
    barriers_executed: int = 0
    cached_loads: int = 0
    cache_hits: int = 0
    group_schedule_seed: int = 0

    _ALIASES = {
        "instructionsExecuted": "instructions_executed",
        "globalLoads": "global_loads",
        "globalStores": "global_stores",
        "globalAtomics": "global_atomics",
        "sharedAtomics": "shared_atomics",
        "divergentBranches": "divergent_branches",
        "barriersExecuted": "barriers_executed",
        "cachedLoads": "cached_loads",
        "cacheHits": "cache_hits",
        "groupScheduleSeed": "group_schedule_seed",
    }

    def read_counter(self, name: str) -> int:
        attr = self._ALIASES.get(name, name)
        if attr not in self.as_dict():
            raise KeyError(f"unknown counter {name!r}")
        return getattr(self, attr)

    def reset_counters(self):
        for f in fields(self):
            if f.name != "group_schedule_seed":
                setattr(self, f.name, 0)

    def merge(self, counts: dict):
        for k, v in counts.items():
            setattr(self, k, getattr(self, k) + int(v))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SimConfig:
    workers: int = 1
    wave_lanes: int = 8192  # lanes packed into one lockstep wave
    max_steps: Optional[int] = None  # safety valve against runaway loops


# -- decoding -----------------------------------------------------------------


class _Barrier:
    __slots__ = ("next",)

    def __init__(self, nxt: int):
        self.next = nxt


@dataclass
class _Block:
    instrs: list
    term: object
    static_count: int
    targets: tuple = ()


def _const(v: Imm):
    return np.array(v.value, dtype=dtype_of(v.ty))


def _operand(o):
    if isinstance(o, Reg):
        rid = o.id
        return lambda w, sel: w.regs[rid][sel]
    c = _const(o)
    return lambda w, sel: c


def _address(a):
    off = a.offset
    base = index = None
    if isinstance(a.base, Imm):
        off += int(a.base.value)
    elif a.base is not None:
        base = a.base.id
    if isinstance(a.index, Imm):
        off += int(a.index.value) * a.scale
    elif a.index is not None:
        index = a.index.id
    scale = a.scale

    def f(w, sel):
        v = np.int64(off)
        if base is not None:
            v = w.regs[base][sel].astype(np.int64) + v
        if index is not None:
            v = w.regs[index][sel].astype(np.int64) * scale + v
        return v

    return f


class _Decoded:
    """A kernel turned into per-instruction closures over wave state."""

    def __init__(self, l: KernelLIR):
        self.lir = l
        self.name = l.name
        self.nregs = l.max_reg() + 1
        self.reg_types = {}
        for ins in l.instructions():
            if ins.dst is not None:
                self.reg_types[ins.dst.id] = ins.dst.ty
            for r in ins.uses():
                self.reg_types.setdefault(r.id, r.ty)
        for b in l.blocks:
            if isinstance(b.term, Branch) and isinstance(b.term.pred, Reg):
                self.reg_types.setdefault(b.term.pred.id, b.term.pred.ty)

        # split blocks at barriers; segments keep layout order
        pieces = []
        for b in l.blocks:
            seg = []
            segs = []
            for ins in b.instrs:
                if ins.op == "barrier":
                    segs.append(seg)
                    seg = []
                else:
                    seg.append(ins)
            segs.append(seg)
            pieces.append((b.label, segs, b.term))
        index = {}
        pos = 0
        for lab, segs, _ in pieces:
            index[lab] = pos
            pos += len(segs)
        self.blocks = []
        for lab, segs, term in pieces:
            start = index[lab]
            for i, seg in enumerate(segs):
                me = start + i
                code = [self._instr(ins) for ins in seg]
                if i < len(segs) - 1:
                    t = _Barrier(me + 1)
                    self.blocks.append(_Block(code, t, len(seg) + 1))
                    continue
                if isinstance(term, Jump):
                    t = ("jump", index[term.target])
                    cost = len(seg) + (index[term.target] != me + 1)
                elif isinstance(term, Branch):
                    p = term.pred
                    t = ("branch", p.id if isinstance(p, Reg) else bool(p.value), index[term.if_true], index[term.if_false])
                    cost = len(seg) + (1 if me + 1 in (t[2], t[3]) else 2)
                elif isinstance(term, Ret):
                    t = ("ret",)
                    cost = len(seg) + 1
                elif isinstance(term, Trap):
                    t = ("trap", term.kind)
                    cost = len(seg) + 1
                else:
                    raise InvalidArgument(f"unknown terminator {term!r}")
                self.blocks.append(_Block(code, t, cost))

    # each closure has signature (wave, sel) where sel is slice(None) or lane indices

    def _instr(self, ins):
        op = ins.op
        body = self._body(ins)
        if ins.guard is None:
            return body
        greg, neg = ins.guard[0], ins.guard[1]
        if isinstance(greg, Imm):
            taken = bool(greg.value) != neg
            return body if taken else (lambda w, sel: None)
        gid = greg.id

        def guarded(w, sel):
            g = w.regs[gid][sel]
            if neg:
                g = ~g
            lanes = w.lane_ids(sel)[g]
            if len(lanes):
                body(w, lanes)

        guarded.op = op
        return guarded

    def _body(self, ins):
        op = ins.op
        if op == "ld":
            return self._load(ins)
        if op == "st":
            return self._store(ins)
        if op == "atom":
            return self._atomic(ins)
        d = ins.dst.id
        if op == "sreg":
            key = ins.attr

            def sreg(w, sel):
                w.regs[d][sel] = w.sregs[key][sel]

            return sreg
        if op == "ldparam":
            name = ins.attr

            def ldparam(w, sel):
                w.regs[d][sel] = w.params[name]

            return ldparam
        srcs = [_operand(s) for s in ins.srcs]
        ty, attr = ins.ty, ins.attr
        if op == "mov":
            s0 = srcs[0]

            def mov(w, sel):
                w.regs[d][sel] = s0(w, sel)

            return mov
        if len(srcs) == 2:
            s0, s1 = srcs

            def binary(w, sel):
                w.regs[d][sel] = evaluate(op, ty, attr, (s0(w, sel), s1(w, sel)))

            return binary

        def pure(w, sel):
            w.regs[d][sel] = evaluate(op, ty, attr, [s(w, sel) for s in srcs])

        return pure

    def _region(self, space: str, size: int, dt, name: str):
        """Closure mapping (wave, sel, addr) to a flat element index in the space's region."""
        kernel = self.name

        def fault(w, sel, a, bad, what):
            lanes = w.lane_ids(sel)
            a = np.broadcast_to(a, lanes.shape)
            i = int(np.argmax(bad)) if np.ndim(bad) else 0
            raise MemoryFault(kernel, int(w.gid_linear[lanes[i]]), f"{what} access of {size} bytes at offset {int(a[i])}")

        if space == "global":

            def gidx(w, sel, a):
                bad = w.mem.bad_mask(a, size)
                if np.any(bad):
                    fault(w, sel, a, bad, "global")
                return a // size

            return gidx
        if space == "const":

            def cidx(w, sel, a):
                bad = (a < 0) | (a + size > w.const_size) | (a % size != 0)
                if np.any(bad):
                    fault(w, sel, a, bad, "constant")
                return a // size

            return cidx
        if space == "shared":

            def sidx(w, sel, a):
                bad = (a < 0) | (a + size > w.shared_size) | (a % size != 0)
                if np.any(bad):
                    fault(w, sel, a, bad, "shared")
                return (w.lane_row[sel] * w.shared_stride + a) // size

            return sidx

        def lidx(w, sel, a):
            bad = (a < 0) | (a + size > w.local_size) | (a % size != 0)
            if np.any(bad):
                fault(w, sel, a, bad, "local")
            return (w.lane_ids(sel) * w.local_stride + a) // size

        return lidx

    def _load(self, ins):
        dt = dtype_of(ins.ty)
        size = dt.itemsize
        space = ins.space
        addr = _address(ins.addr)
        region = self._region(space, size, dt, self.name)
        d = ins.dst.id
        nc = ins.attr == "nc"

        def load(w, sel):
            a = addr(w, sel)
            idx = region(w, sel, a)
            w.regs[d][sel] = w.view(space, dt)[idx]
            if space == "global":
                n = w.count(sel)
                w.counts["global_loads"] += n
                if nc:
                    w.counts["cached_loads"] += n
                    w.counts["cache_hits"] += n - len(np.unique(idx))

        return load

    def _store(self, ins):
        dt = dtype_of(ins.ty)
        size = dt.itemsize
        space = ins.space
        if space == "const":
            raise InvalidArgument("store to constant space")
        addr = _address(ins.addr)
        region = self._region(space, size, dt, self.name)
        val = _operand(ins.srcs[0])

        def store(w, sel):
            a = addr(w, sel)
            idx = np.broadcast_to(region(w, sel, a), (w.count(sel),))
            w.view(space, dt)[idx] = val(w, sel)
            if space == "global":
                w.counts["global_stores"] += w.count(sel)

        return store

    def _atomic(self, ins):
        dt = dtype_of(ins.ty)
        size = dt.itemsize
        space = ins.space
        addr = _address(ins.addr)
        region = self._region(space, size, dt, self.name)
        val = _operand(ins.srcs[0])
        fn = _UFUNC_AT[ins.attr]

        def atomic(w, sel):
            n = w.count(sel)
            a = addr(w, sel)
            idx = np.broadcast_to(region(w, sel, a), (n,))
            v = np.broadcast_to(val(w, sel), (n,))
            with np.errstate(all="ignore"):
                if space == "global":
                    with w.mem.lock:
                        fn.at(w.view(space, dt), idx, v)
                    w.counts["global_atomics"] += n
                else:
                    fn.at(w.view(space, dt), idx, v)
                    if space == "shared":
                        w.counts["shared_atomics"] += n

        return atomic


_decode_cache: dict = {}
_decode_lock = threading.Lock()


def decode(program) -> _Decoded:
    l = as_lir(program)
    with _decode_lock:
        d = _decode_cache.get(l)
        if d is None:
            d = _Decoded(l)
            if len(_decode_cache) > 256:
                _decode_cache.clear()
            _decode_cache[l] = d
    return d


# -- waves --------------------------------------------------------------------


def _round8(n: int) -> int:
    return max(8, (n + 7) // 8 * 8)


class _Wave:
    def __init__(self, prog: _Decoded, sched: LaunchSchedule, groups: np.ndarray, mem: GlobalMemory, params: dict, const_image: Optional[np.ndarray]):
        self.prog = prog
        self.mem = mem
        self.params = params
        gt = sched.group_threads
        lx, ly, lz = sched.group_size
        cx, cy, cz = sched.group_counts
        gx, gy, gz = sched.global_size
        rows = len(groups)
        n = rows * gt
        self.n = n
        self.all_lanes = np.arange(n, dtype=np.int64)
        self.lane_row = np.repeat(np.arange(rows, dtype=np.int64), gt)
        local = np.tile(np.arange(gt, dtype=np.int64), rows)
        grp = np.repeat(groups.astype(np.int64), gt)
        tx, ty_, tz = local % lx, (local // lx) % ly, local // (lx * ly)
        bx, by, bz = grp % cx, (grp // cx) % cy, grp // (cx * cy)
        ix, iy, iz = bx * lx + tx, by * ly + ty_, bz * lz + tz
        self.gid_linear = ix + iy * gx + iz * gx * gy
        i32 = np.int32
        self.sregs = {}
        for d, (t, b, l, i, g) in enumerate(zip((tx, ty_, tz), (bx, by, bz), (lx, ly, lz), (ix, iy, iz), (gx, gy, gz))):
            self.sregs[("tid", d)] = t.astype(i32)
            self.sregs[("ctaid", d)] = b.astype(i32)
            self.sregs[("ntid", d)] = np.full(n, l, dtype=i32)
            self.sregs[("gid", d)] = i.astype(i32)
            self.sregs[("nthreads", d)] = np.full(n, g, dtype=i32)
        l = prog.lir
        self.shared_size = l.shared_size
        self.shared_stride = _round8(l.shared_size)
        self.local_size = l.local_size
        self.local_stride = _round8(l.local_size)
        self.shared = np.zeros(rows * self.shared_stride, dtype=np.uint8)
        self.local = np.zeros(n * self.local_stride, dtype=np.uint8) if l.local_size else np.zeros(8, dtype=np.uint8)
        self.const = const_image if const_image is not None else np.zeros(8, dtype=np.uint8)
        self.const_size = l.const_size
        self.regs = [None] * prog.nregs
        for rid, ty in prog.reg_types.items():
            self.regs[rid] = np.zeros(n, dtype=dtype_of(ty))
        self.counts = dict.fromkeys(
            ("instructions_executed", "global_loads", "global_stores", "global_atomics", "shared_atomics",
             "divergent_branches", "barriers_executed", "cached_loads", "cache_hits"), 0)
        self._views = {}

    def lane_ids(self, sel):
        return self.all_lanes if isinstance(sel, slice) else sel

    def count(self, sel) -> int:
        return self.n if isinstance(sel, slice) else len(sel)

    def view(self, space: str, dt):
        if space == "global":
            return self.mem.view(dt)
        key = (space, dt)
        v = self._views.get(key)
        if v is None:
            src = {"shared": self.shared, "local": self.local, "const": self.const}[space]
            v = src.view(dt)
            self._views[key] = v
        return v

    def run(self, stop: threading.Event, max_steps: Optional[int]):
        prog = self.prog
        blocks = prog.blocks
        n = self.n
        pc = np.zeros(n, dtype=np.int64)
        state = np.zeros(n, dtype=np.int8)
        counts = self.counts
        steps = 0
        while True:
            if stop.is_set():
                return
            runnable = state == _RUN
            if not runnable.any():
                if (state == _DONE).all():
                    return
                self._release(pc, state)
                continue
            b = int(pc[runnable].min())
            at = runnable & (pc == b)
            if at.all():
                sel = slice(None)
                lanes = self.all_lanes
            else:
                lanes = np.flatnonzero(at)
                sel = lanes
            blk = blocks[b]
            for f in blk.instrs:
                f(self, sel)
            counts["instructions_executed"] += blk.static_count * len(lanes)
            t = blk.term
            if isinstance(t, _Barrier):
                state[sel] = _WAIT
                pc[sel] = t.next
            elif t[0] == "jump":
                pc[sel] = t[1]
            elif t[0] == "branch":
                p = t[1]
                v = np.broadcast_to(p, (len(lanes),)) if isinstance(p, bool) else self.regs[p][sel]
                pc[sel] = np.where(v, t[2], t[3])
                if not isinstance(p, bool) and t[2] != t[3]:
                    rows = self.lane_row[lanes]
                    nrows = int(self.lane_row[-1]) + 1
                    yes = np.bincount(rows[v], minlength=nrows)
                    no = np.bincount(rows[~v], minlength=nrows)
                    counts["divergent_branches"] += int(np.count_nonzero((yes > 0) & (no > 0)))
            elif t[0] == "ret":
                state[sel] = _DONE
            else:
                first = int(self.gid_linear[lanes].min())
                raise BoundsTrap(prog.name, first, "index out of bounds")
            steps += 1
            if max_steps is not None and steps > max_steps:
                raise InvalidArgument(f"kernel '{prog.name}' exceeded {max_steps} scheduling steps")

    def _release(self, pc, state):
        """Every live lane is parked at a barrier; let consistent groups through."""
        rows = self.lane_row
        nrows = int(rows[-1]) + 1
        waiting = state == _WAIT
        done = np.bincount(rows[state == _DONE], minlength=nrows)
        wait = np.bincount(rows[waiting], minlength=nrows)
        bad = (wait > 0) & (done > 0)
        wrow = rows[waiting]
        wpc = pc[waiting]
        lo = np.full(nrows, np.iinfo(np.int64).max)
        hi = np.full(nrows, -1)
        np.minimum.at(lo, wrow, wpc)
        np.maximum.at(hi, wrow, wpc)
        bad |= (wait > 0) & (lo != hi)
        if bad.any():
            r = int(np.argmax(bad))
            lanes = np.flatnonzero(waiting & (rows == r))
            detail = "some threads of the group exited before reaching the barrier" if done[r] else "threads of the group wait at different barriers"
            raise BarrierDivergenceTrap(self.prog.name, int(self.gid_linear[lanes].min()), detail)
        self.counts["barriers_executed"] += int(np.count_nonzero(wait))
        state[waiting] = _RUN


# -- launching ----------------------------------------------------------------


def _bind(prog: _Decoded, args: dict, mem: GlobalMemory) -> dict:
    params = {}
    names = {p.name for p in prog.lir.params}
    extra = set(args) - names
    if extra:
        raise InvalidArgument(f"kernel '{prog.name}' has no parameter {sorted(extra)[0]!r}")
    for p in prog.lir.params:
        if p.name not in args:
            raise InvalidArgument(f"kernel '{prog.name}' is missing argument {p.name!r}")
        v = args[p.name]
        if p.kind == "buffer":
            if not isinstance(v, Buffer) or v.elem is None:
                raise InvalidArgument(f"argument {p.name!r} must be a device buffer of {p.ty}")
            if v.elem != p.ty:
                raise InvalidArgument(f"argument {p.name!r} has element type {v.elem}, expected {p.ty}")
            params[p.name] = np.int64(v.base)
            params[p.name + ".len"] = np.int32(v.length)
        elif p.kind == "object":
            if not isinstance(v, Buffer):
                raise InvalidArgument(f"argument {p.name!r} must be a device object")
            if v.nbytes < p.size:
                raise InvalidArgument(f"object argument {p.name!r} holds {v.nbytes} bytes, kernel needs {p.size}")
            params[p.name] = np.int64(v.base)
        else:
            if isinstance(v, Buffer) or isinstance(v, (bytes, bytearray, np.ndarray)) and np.ndim(v) > 0:
                raise InvalidArgument(f"argument {p.name!r} must be a {p.ty} scalar")
            if p.ty.name == "bool":
                params[p.name] = np.bool_(bool(v))
            elif p.ty.is_int:
                if isinstance(v, (float, np.floating)) or isinstance(v, (bool, np.bool_)):
                    raise InvalidArgument(f"argument {p.name!r} must be an integer")
                bits = 8 * p.ty.size
                x = int(v) % (1 << bits)
                params[p.name] = p.ty.dtype.type(x - (1 << bits) if x >> (bits - 1) else x)
            else:
                if isinstance(v, (bool, np.bool_)):
                    raise InvalidArgument(f"argument {p.name!r} must be a number")
                params[p.name] = p.ty.dtype.type(v)
    return params


def launch(
    program,
    schedule: LaunchSchedule,
    args: dict,
    mem: GlobalMemory,
    seed: int = 0,
    config: Optional[SimConfig] = None,
) -> SimMetrics:
    """Run one kernel launch to completion over device memory `mem`."""
    cfg = config or SimConfig()
    if cfg.workers < 1:
        raise InvalidArgument("worker count must be at least 1")
    prog = decode(program)
    l = prog.lir
    params = _bind(prog, args, mem)
    for pname, off, elem, value, count in l.atominit:
        buf = args[pname]
        mem.write(buf, np.full(count, value, dtype=elem.dtype), off)
    const_image = None
    if l.constimage is not None:
        buf = args[l.constimage]
        raw = np.frombuffer(mem.read(buf, 0, l.const_size), dtype=np.uint8)
        const_image = np.zeros(_round8(l.const_size), dtype=np.uint8)
        const_image[: l.const_size] = raw

    order = np.random.default_rng(seed).permutation(schedule.n_groups)
    per_wave = max(1, cfg.wave_lanes // schedule.group_threads)
    waves = [order[i : i + per_wave] for i in range(0, len(order), per_wave)]
    metrics = SimMetrics(group_schedule_seed=seed)
    stop = threading.Event()
    lock = threading.Lock()

    def run(groups):
        w = _Wave(prog, schedule, groups, mem, params, const_image)
        try:
            w.run(stop, cfg.max_steps)
        except BaseException:
            stop.set()
            raise
        with lock:
            metrics.merge(w.counts)

    if cfg.workers == 1 or len(waves) == 1:
        for g in waves:
            run(g)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run, g) for g in waves]
            errors = []
            for fut in futures:
                try:
                    fut.result()
                except BaseException as e:  # noqa: BLE001
                    errors.append(e)
            if errors:
                traps = [e for e in errors if not isinstance(e, InvalidArgument)]
                raise (traps or errors)[0]
    return metrics
