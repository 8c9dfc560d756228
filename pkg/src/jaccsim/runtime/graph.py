"""Tasks, task graphs and their graph-atomic execution on simulated devices."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import CompileError, InvalidArgument, JaccError, KernelTrap, RuntimeStateError
from ..hir import KernelHIR, SourceUnit
from ..memory.manager import WHOLE, MemoryManager
from ..objects import Record, lock, restore, snapshot, unlock
from ..passes.pipeline import DEFAULT_CONFIG, PassConfig, compile_kernel
from ..sim.engine import LaunchSchedule, SimConfig, SimMetrics, launch
from ..sim.memory import GlobalMemory
from ..types import ArrayType, Mode, ScalarType, StructType, dtype_to_scalar
from .actions import ActionGraph, ActionKind, CopyItem, TaskShape, lower_tasks, optimize_actions


class GraphState(enum.Enum):
    BUILDING = "BUILDING"
    EXECUTING = "EXECUTING"
    DONE = "DONE"
    FAILED = "FAILED"


@dataclass
class Binding:
    param: str
    value: object
    mode: Optional[Mode]  # None for scalars


def _default_group(n: int, limit: int = 256) -> int:
    for g in range(min(n, limit), 0, -1):
        if n % g == 0:
            return g
    return 1


def receiver_for(k: KernelHIR, **values) -> Record:
    """Zero-initialised host receiver holding `k`'s global and constant fields."""
    layout = [(f.name, f.type) for f in k.receiver_fields]
    return Record.zeros(k.name, layout, **values)


class Task:
    """A kernel reference, its argument bindings and launch metadata."""

    def __init__(
        self,
        unit: SourceUnit,
        kernel: str,
        args,
        global_size=None,
        group_size=None,
        device: int = 0,
        receiver: Optional[Record] = None,
        modes: Optional[dict] = None,
        name: Optional[str] = None,
    ):
        try:
            k = unit.kernel(kernel)
        except KeyError:
            raise InvalidArgument(f"unknown kernel {kernel!r}") from None
        self.unit = unit
        self.hir = k
        self.kernel = kernel
        self.device = device
        self.name = name or kernel
        if isinstance(args, dict):
            unknown = set(args) - {p.name for p in k.params}
            if unknown:
                raise InvalidArgument(f"kernel {kernel!r} has no parameter {sorted(unknown)[0]!r}")
            missing = [p.name for p in k.params if p.name not in args]
            if missing:
                raise InvalidArgument(f"kernel {kernel!r} is missing argument {missing[0]!r}")
            values = [args[p.name] for p in k.params]
        else:
            values = list(args)
            if len(values) != len(k.params):
                raise InvalidArgument(f"kernel {kernel!r} takes {len(k.params)} arguments, got {len(values)}")
        modes = modes or {}
        self.bindings = []
        for p, v in zip(k.params, values):
            mode = self._check_arg(p, v)
            given = modes.get(p.name)
            if given is not None:
                given = Mode.parse(given) if isinstance(given, str) else given
                if mode is None or given is not mode:
                    raise InvalidArgument(f"argument {p.name!r} is declared {p.mode.value if p.mode else 'scalar'}, task says {given.value}")
            self.bindings.append(Binding(p.name, v, mode))
        if k.receiver_fields or any(f.atomic is not None for f in k.fields):
            self.receiver = receiver if receiver is not None else receiver_for(k)
            if not isinstance(self.receiver, Record) or self.receiver.type_name != k.name:
                raise InvalidArgument(f"receiver of {kernel!r} must be a {k.name} record")
        else:
            self.receiver = None
        if global_size is None:
            global_size = 1
        gs = (global_size,) if isinstance(global_size, (int, np.integer)) else tuple(global_size)
        if group_size is None:
            group_size = tuple(_default_group(int(g)) for g in gs)
        self.schedule = LaunchSchedule(global_size, group_size)

    def _check_arg(self, p, v) -> Optional[Mode]:
        if isinstance(p.type, ArrayType):
            if not isinstance(v, np.ndarray) or v.ndim != 1:
                raise InvalidArgument(f"argument {p.name!r} must be a 1-D array of {p.type.elem}")
            if dtype_to_scalar(v.dtype) != p.type.elem:
                raise InvalidArgument(f"argument {p.name!r} has element type {v.dtype}, expected {p.type.elem}")
            return p.mode or Mode.READWRITE
        if isinstance(p.type, StructType):
            if not isinstance(v, Record) or v.type_name != p.type.name:
                raise InvalidArgument(f"argument {p.name!r} must be a {p.type.name} record")
            return p.mode or Mode.READWRITE
        if isinstance(v, (np.ndarray, Record)):
            raise InvalidArgument(f"argument {p.name!r} must be a {p.type} scalar")
        return None

    def objects(self) -> list:
        """(object, mode) for every device-resident argument, receiver first."""
        out = []
        if self.receiver is not None:
            out.append((self.receiver, Mode.READWRITE))
        out.extend((b.value, b.mode) for b in self.bindings if b.mode is not None)
        return out

    def __repr__(self) -> str:
        return f"Task({self.name}, dev={self.device})"


class Runtime:
    """Devices, the memory manager and execution policy."""

    def __init__(
        self,
        devices: int = 1,
        seed: int = 0,
        sim: Optional[SimConfig] = None,
        passes: PassConfig = DEFAULT_CONFIG,
        optimize: bool = True,
        full_transfers: bool = False,
    ):
        if devices < 1:
            raise InvalidArgument("a runtime needs at least one device")
        self.memories = {d: GlobalMemory() for d in range(devices)}
        self.mm = MemoryManager(self.memories)
        self.seed = seed
        self.sim = sim or SimConfig()
        self.passes = passes
        self.optimize = optimize
        self.full_transfers = full_transfers
        self.metrics = SimMetrics(group_schedule_seed=seed)
        self.launches = 0

    @property
    def log(self):
        return self.mm.log

    def register(self, obj, name: Optional[str] = None) -> str:
        return self.mm.register(obj, name)

    def notify_modified(self, obj):
        self.mm.notify_modified(obj)

    def compile(self, task: Task):
        return compile_kernel(task.hir, task.unit, self.passes)


class TaskGraph:
    def __init__(self, runtime: Optional[Runtime] = None):
        self.runtime = runtime or Runtime()
        self.tasks: list = []
        self.state = GraphState.BUILDING
        self.error: Optional[BaseException] = None
        self.last_actions: Optional[ActionGraph] = None
        self._lock = threading.Lock()

    # -- building --

    def execute_task_on(self, task: Task, device: Optional[int] = None) -> int:
        if self.state is not GraphState.BUILDING:
            raise RuntimeStateError(f"cannot add tasks to a graph in state {self.state.value}")
        dev = task.device if device is None else device
        if dev not in self.runtime.memories:
            raise InvalidArgument(f"unknown device {dev}")
        task.device = dev
        self.tasks.append(task)
        return len(self.tasks) - 1

    def set_device(self, node: int, device: int):
        if self.state is GraphState.EXECUTING:
            raise RuntimeStateError("cannot remap a task while the graph executes")
        if device not in self.runtime.memories:
            raise InvalidArgument(f"unknown device {device}")
        self.tasks[node].device = device

    def __len__(self) -> int:
        return len(self.tasks)

    # -- analysis --

    def _schemas(self, task: Task) -> dict:
        """Per-object schema for one task (records only)."""
        out = {}
        try:
            ck = self.runtime.compile(task)
        except JaccError:
            return out
        if task.receiver is not None:
            out[id(task.receiver)] = ck.schemas[task.kernel]
        for b in task.bindings:
            if isinstance(b.value, Record):
                out[id(b.value)] = ck.schemas[b.value.type_name]
        return out

    def _access(self, task: Task) -> list:
        """(object, reads?, writes?, read entries, written entries)."""
        schemas = self._schemas(task)
        full = self.runtime.full_transfers
        out = []
        for obj, mode in task.objects():
            if isinstance(obj, np.ndarray):
                names = (WHOLE,)
                r = names if (mode.reads or full) else ()
                w = names if (mode.writes or full) else ()
            else:
                s = schemas.get(id(obj))
                if s is None:
                    names = tuple(obj.field_names())
                    r, w = names, names
                else:
                    self.runtime.mm.set_layout(obj, s)
                    every = tuple(e.name for e in s.entries)
                    r = every if full else tuple(e.name for e in s.entries if e.read)
                    w = every if full else tuple(e.name for e in s.entries if e.written)
                    if task.receiver is not obj:
                        if not mode.reads and not full:
                            r = ()
                        if not mode.writes and not full:
                            w = ()
            out.append((obj, bool(r), bool(w), r, w))
        return out

    def infer_dependencies(self) -> set:
        """Edges (i, j), i < j, for every flow, anti or output conflict on a shared object."""
        acc = [[(id(o), r, w) for o, r, w, _, _ in self._access(t)] for t in self.tasks]
        edges = set()
        for j in range(len(self.tasks)):
            for i in range(j):
                for oi, ri, wi in acc[i]:
                    for oj, rj, wj in acc[j]:
                        if oi == oj and ((wi and rj) or (ri and wj) or (wi and wj)):
                            edges.add((i, j))
        return edges

    def lower(self) -> ActionGraph:
        edges = self.infer_dependencies()
        shapes = []
        mm = self.runtime.mm
        for j, t in enumerate(self.tasks):
            reads, writes = [], []
            for obj, r, w, rn, wn in self._access(t):
                name = mm.register(obj)
                if r:
                    reads.append(CopyItem(name, tuple(rn)))
                if w:
                    writes.append(CopyItem(name, tuple(wn)))
            preds = tuple(sorted(i for i, jj in edges if jj == j))
            shapes.append(TaskShape(t.kernel, t.device, tuple(reads), tuple(writes), preds))
        return lower_tasks(shapes)

    def plan(self, optimize: Optional[bool] = None) -> ActionGraph:
        naive = self.lower()
        opt = self.runtime.optimize if optimize is None else optimize
        if opt and not self.runtime.full_transfers:
            return optimize_actions(naive)
        return naive

    # -- execution --

    def execute(self) -> GraphState:
        """Run every task; all-or-nothing with respect to host objects."""
        with self._lock:
            if self.state is GraphState.EXECUTING:
                raise RuntimeStateError("graph is already executing")
            if self.state is GraphState.FAILED:
                raise RuntimeStateError("graph failed; build a new one")
            self.state = GraphState.EXECUTING
        rt = self.runtime
        objs = {}
        for t in self.tasks:
            for o, _ in t.objects():
                objs[id(o)] = o
        snaps = {oid: snapshot(o) for oid, o in objs.items()}
        tokens = {oid: lock(o) for oid, o in objs.items()}
        try:
            actions = self.plan()
            self.last_actions = actions
            self._run(actions)
        except BaseException as exc:
            for oid, o in objs.items():
                unlock(o, tokens[oid])
                restore(o, snaps[oid])
                rt.mm.invalidate(o)
                rt.mm.notify_modified(o)
            self.state = GraphState.FAILED
            self.error = exc
            raise
        for oid, o in objs.items():
            unlock(o, tokens[oid])
        self.state = GraphState.DONE
        return self.state

    def _run(self, ag: ActionGraph):
        rt = self.runtime
        mm = rt.mm
        force = not rt.optimize or rt.full_transfers
        by_name = {}
        for t in self.tasks:
            for o, _ in t.objects():
                by_name[mm.register(o)] = o
        compiled = {}
        for a in ag.actions:
            task = self.tasks[a.task] if a.task is not None else None
            try:
                if a.kind is ActionKind.COMPILE:
                    try:
                        compiled[(a.kernel, a.device)] = rt.compile(task)
                    except CompileError as e:
                        raise CompileError(f"task {a.task} ({task.name}): {e}", e.diagnostics) from None
                elif a.kind is ActionKind.COPY_IN:
                    for it in a.items:
                        mm.copy_in(by_name[it.obj], a.device, it.entries, force=force)
                elif a.kind is ActionKind.EXECUTE:
                    ck = compiled.get((a.kernel, a.device)) or rt.compile(task)
                    self._launch(a.task, task, ck)
                elif a.kind is ActionKind.COPY_OUT:
                    for it in a.items:
                        mm.copy_out(by_name[it.obj], a.device, it.entries)
            except KernelTrap as e:
                raise e.with_task(f"{a.task} ({task.name})") from None

    def _launch(self, idx: int, task: Task, ck):
        rt = self.runtime
        mm = rt.mm
        args = {}
        if task.receiver is not None:
            mm.set_layout(task.receiver, ck.schemas[task.kernel])
            args["this"] = mm.buffer_for(task.receiver, task.device)
        for b in task.bindings:
            if b.mode is None:
                args[b.param] = b.value
            else:
                if isinstance(b.value, Record):
                    mm.set_layout(b.value, ck.schemas[b.value.type_name])
                args[b.param] = mm.buffer_for(b.value, task.device)
        params = {p.name for p in ck.lir.params}
        args = {k: v for k, v in args.items() if k in params}
        seed = rt.seed + idx
        m = launch(ck.program, task.schedule, args, rt.memories[task.device], seed, rt.sim)
        rt.launches += 1
        rt.metrics.merge({k: v for k, v in m.as_dict().items() if k != "group_schedule_seed"})
        if task.receiver is not None:
            s = ck.schemas[task.kernel]
            mm.mark_written(task.receiver, task.device, [e.name for e in s.entries if e.written])
        for b in task.bindings:
            if b.mode is not None and b.mode.writes:
                if isinstance(b.value, Record):
                    s = ck.schemas[b.value.type_name]
                    mm.mark_written(b.value, task.device, [e.name for e in s.entries if e.written])
                else:
                    mm.mark_written(b.value, task.device)


def run_task(task: Task, runtime: Optional[Runtime] = None) -> TaskGraph:
    """Execute a single-task graph and return it."""
    g = TaskGraph(runtime)
    g.execute_task_on(task)
    g.execute()
    return g
