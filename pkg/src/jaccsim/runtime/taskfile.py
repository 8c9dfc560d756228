"""The line-oriented task-graph description format.

    # comment
    source kernels.jacc
    buffer A f32 1024 init=iota
    task vadd dev=0 global=1024 group=128 args=A:read,B:read,C:write

`source` names a kernel file (relative to the graph file); without it the
built-in benchmark kernels are used. Arguments bind buffers positionally
as `name:mode`; a bare number binds a scalar.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ParseError
from ..hir import SourceUnit
from ..types import SCALAR_NAMES, Mode, scalar
from .graph import Runtime, Task, TaskGraph

INITS = ("zeros", "iota", "rand", "file")


@dataclass(frozen=True)
class BufferDecl:
    name: str
    type: str
    length: int
    init: str = "zeros"
    line: int = 0


@dataclass(frozen=True)
class TaskDecl:
    kernel: str
    device: int
    global_size: tuple
    group_size: tuple
    args: tuple  # (name, Mode) for buffers, numbers for scalars
    line: int = 0


@dataclass
class TaskGraphSpec:
    buffers: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    source: Optional[str] = None

    def buffer(self, name: str) -> BufferDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise KeyError(name)


def _sizes(text: str, what: str, line: int, col: int) -> tuple:
    try:
        vals = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ParseError(f"{what} must be comma-separated integers, got {text!r}", line, col) from None
    if not 1 <= len(vals) <= 3:
        raise ParseError(f"{what} takes 1 to 3 dimensions", line, col)
    if any(v <= 0 for v in vals):
        raise ParseError(f"{what} size must be positive, got {text}", line, col)
    return vals


def _number(text: str):
    try:
        return int(text, 0)
    except ValueError:
        return float(text)


def parse_taskgraph(text: str, unit: Optional[SourceUnit] = None) -> TaskGraphSpec:
    """Parse graph text; with `unit`, kernel names are checked against it."""
    spec = TaskGraphSpec()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        col = raw.index(words[0]) + 1
        head = words[0]
        if head == "source":
            if len(words) != 2:
                raise ParseError("expected `source <path>`", ln, col)
            spec.source = words[1]
        elif head == "buffer":
            if len(words) not in (4, 5):
                raise ParseError("expected `buffer <name> <type> <len> [init=...]`", ln, col)
            name, ty, length = words[1], words[2], words[3]
            if ty not in SCALAR_NAMES or ty == "bool":
                raise ParseError(f"unknown buffer type {ty!r}", ln, raw.index(ty) + 1, expected=[t for t in SCALAR_NAMES if t != "bool"])
            try:
                n = int(length)
            except ValueError:
                raise ParseError(f"buffer length must be an integer, got {length!r}", ln, raw.index(length) + 1) from None
            if n <= 0:
                raise ParseError("buffer length must be positive", ln, raw.index(length) + 1)
            init = "zeros"
            if len(words) == 5:
                if not words[4].startswith("init="):
                    raise ParseError(f"unexpected {words[4]!r}", ln, raw.index(words[4]) + 1, expected=["init="])
                init = words[4][5:]
                kind = init.split(":", 1)[0]
                if kind not in INITS or (kind in ("rand", "file")) != (":" in init):
                    raise ParseError(f"bad initializer {init!r}", ln, raw.index(words[4]) + 1, expected=["zeros", "iota", "rand:<seed>", "file:<path>"])
                if kind == "rand":
                    try:
                        int(init.split(":", 1)[1])
                    except ValueError:
                        raise ParseError(f"rand seed must be an integer in {init!r}", ln, raw.index(words[4]) + 1) from None
            if any(b.name == name for b in spec.buffers):
                raise ParseError(f"buffer {name!r} declared twice", ln, raw.index(name) + 1)
            spec.buffers.append(BufferDecl(name, ty, n, init, ln))
        elif head == "task":
            if len(words) < 2:
                raise ParseError("expected a kernel name after `task`", ln, col)
            kernel = words[1]
            if unit is not None and kernel not in {k.name for k in unit.kernels}:
                raise ParseError(f"undeclared kernel {kernel!r}", ln, raw.index(kernel) + 1)
            opts = {}
            for w in words[2:]:
                if "=" not in w:
                    raise ParseError(f"expected key=value, got {w!r}", ln, raw.index(w) + 1, expected=["dev", "global", "group", "args"])
                key, val = w.split("=", 1)
                if key not in ("dev", "global", "group", "args"):
                    raise ParseError(f"unknown task option {key!r}", ln, raw.index(w) + 1, expected=["dev", "global", "group", "args"])
                opts[key] = (val, raw.index(w) + 1)
            if "global" not in opts:
                raise ParseError("task needs global=<n>", ln, col)
            gsz = _sizes(opts["global"][0], "global", ln, opts["global"][1])
            grp = _sizes(opts["group"][0], "group", ln, opts["group"][1]) if "group" in opts else None
            if grp is not None and len(grp) != len(gsz):
                raise ParseError("group and global sizes need the same number of dimensions", ln, opts["group"][1])
            try:
                dev = int(opts.get("dev", ("0", 0))[0])
            except ValueError:
                raise ParseError("dev must be an integer", ln, opts["dev"][1]) from None
            args = []
            if "args" in opts and opts["args"][0]:
                for item in opts["args"][0].split(","):
                    if ":" in item:
                        name, mode = item.split(":", 1)
                        try:
                            m = Mode.parse(mode)
                        except ValueError:
                            raise ParseError(f"unknown access mode {mode!r}", ln, opts["args"][1], expected=["read", "write", "readwrite"]) from None
                        if not any(b.name == name for b in spec.buffers):
                            raise ParseError(f"undeclared buffer {name!r}", ln, opts["args"][1])
                        args.append((name, m))
                    else:
                        try:
                            args.append(_number(item))
                        except ValueError:
                            raise ParseError(f"bad argument {item!r}; use name:mode or a number", ln, opts["args"][1]) from None
            spec.tasks.append(TaskDecl(kernel, dev, gsz, grp, tuple(args), ln))
        else:
            raise ParseError(f"unknown directive {head!r}", ln, col, expected=["buffer", "source", "task"])
    return spec


def make_buffer(b: BufferDecl, base_dir: str = ".") -> np.ndarray:
    dt = scalar(b.type).dtype
    kind, _, arg = b.init.partition(":")
    if kind == "zeros":
        return np.zeros(b.length, dtype=dt)
    if kind == "iota":
        return np.arange(b.length).astype(dt)
    if kind == "rand":
        rng = np.random.default_rng(int(arg))
        if dt.kind == "f":
            return rng.random(b.length).astype(dt)
        return rng.integers(0, 100, b.length).astype(dt)
    path = arg if os.path.isabs(arg) else os.path.join(base_dir, arg)
    data = np.fromfile(path, dtype=dt.newbyteorder("<"))
    if len(data) != b.length:
        raise ParseError(f"{path} holds {len(data)} elements, buffer {b.name!r} declares {b.length}", b.line, 1)
    return data.astype(dt)


def build_graph(spec: TaskGraphSpec, unit: SourceUnit, runtime: Optional[Runtime] = None, base_dir: str = ".") -> tuple:
    """(TaskGraph, {buffer name: host array}) for a parsed description."""
    rt = runtime or Runtime(devices=max([t.device for t in spec.tasks] + [0]) + 1)
    buffers = {}
    for b in spec.buffers:
        arr = make_buffer(b, base_dir)
        rt.register(arr, b.name)
        buffers[b.name] = arr
    g = TaskGraph(rt)
    for t in spec.tasks:
        try:
            k = unit.kernel(t.kernel)
        except KeyError:
            raise ParseError(f"undeclared kernel {t.kernel!r}", t.line, 1) from None
        if len(t.args) != len(k.params):
            raise ParseError(f"kernel {t.kernel!r} takes {len(k.params)} arguments, got {len(t.args)}", t.line, 1)
        values, modes = [], {}
        for p, a in zip(k.params, t.args):
            if isinstance(a, tuple):
                values.append(buffers[a[0]])
                modes[p.name] = a[1]
            else:
                values.append(a)
        task = Task(unit, t.kernel, values, t.global_size, t.group_size, t.device, modes=modes)
        g.execute_task_on(task, t.device)
    return g, buffers
