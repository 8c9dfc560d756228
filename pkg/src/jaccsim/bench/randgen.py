"""Random race-free kernels and random task DAGs for property testing."""

from __future__ import annotations

import random

import numpy as np

from ..frontend import parse_kernel
from ..objects import Record
from ..types import F32
from .kernels import library
from .suite import BenchCase, TaskSpec

RAND_LEN = 256  # power of two, so `& 255` keeps gathers in bounds
_MASK = RAND_LEN - 1


class _KernelWriter:
    def __init__(self, rng: random.Random):
        self.r = rng
        self.fvars = ["a[i]"]
        self.ivars = ["b[i]", "i"]
        self.lines = []
        self.n = 0

    def fresh(self, prefix):
        self.n += 1
        return f"{prefix}{self.n}"

    def flit(self):
        return self.r.choice(["0.5", "1.0", "2.0", "0.25", "3.0", "1.5", "0.0", "-1.0"])

    def ilit(self):
        return str(self.r.choice([0, 1, 2, 3, 5, 7, 16, 255, 1000]))

    def fexpr(self, depth=2) -> str:
        r = self.r
        if depth <= 0 or r.random() < 0.3:
            c = r.random()
            if c < 0.55:
                return r.choice(self.fvars)
            if c < 0.75:
                return self.flit()
            if c < 0.9:
                return f"a[({self.iexpr(1)}) & {_MASK}]"
            return f"f32({r.choice(self.ivars)})"
        c = r.random()
        if c < 0.6:
            op = r.choice(["+", "-", "*", "+", "*"])
            return f"({self.fexpr(depth - 1)} {op} {self.fexpr(depth - 1)})"
        if c < 0.8:
            fn = r.choice(["min", "max"])
            return f"{fn}({self.fexpr(depth - 1)}, {self.fexpr(depth - 1)})"
        if c < 0.9:
            return f"abs({self.fexpr(depth - 1)})"
        return f"sqrt(abs({self.fexpr(depth - 1)}))"

    def iexpr(self, depth=2) -> str:
        r = self.r
        if depth <= 0 or r.random() < 0.3:
            c = r.random()
            if c < 0.6:
                return r.choice(self.ivars)
            if c < 0.85:
                return self.ilit()
            return f"b[({r.choice(self.ivars)}) & {_MASK}]"
        c = r.random()
        if c < 0.55:
            op = r.choice(["+", "-", "*", "&", "|", "^"])
            return f"({self.iexpr(depth - 1)} {op} {self.iexpr(depth - 1)})"
        if c < 0.7:
            op = r.choice(["<<", ">>"])
            return f"({self.iexpr(depth - 1)} {op} {r.randint(0, 5)})"
        if c < 0.85:
            op = r.choice(["/", "%"])
            return f"({self.iexpr(depth - 1)} {op} {self.iexpr(depth - 1)})"
        if c < 0.93:
            return f"i32({self.fexpr(depth - 1)})"
        return f"popc({self.iexpr(depth - 1)})"

    def cond(self) -> str:
        r = self.r
        c = r.random()
        if c < 0.4:
            return f"{self.fexpr(1)} {r.choice(['<', '>', '<=', '>='])} {self.fexpr(1)}"
        if c < 0.8:
            return f"{self.iexpr(1)} {r.choice(['==', '!=', '<', '>='])} {self.iexpr(1)}"
        return f"{self.cond()} {r.choice(['&&', '||'])} {self.cond()}"

    def assign(self, indent) -> None:
        r = self.r
        owned_f = [v for v in self.fvars if v.startswith("f")]
        owned_i = [v for v in self.ivars if v.startswith("n")]
        if owned_f and (not owned_i or r.random() < 0.5):
            v = r.choice(owned_f)
            self.lines.append(f"{indent}{v} = {self.fexpr()};")
        elif owned_i:
            v = r.choice(owned_i)
            self.lines.append(f"{indent}{v} = {self.iexpr()};")

    def statement(self, indent="    ") -> None:
        r = self.r
        c = r.random()
        if c < 0.3:
            v = self.fresh("f")
            self.lines.append(f"{indent}let {v} = {self.fexpr()};")
            self.fvars.append(v)
        elif c < 0.55:
            v = self.fresh("n")
            self.lines.append(f"{indent}let {v} = {self.iexpr()};")
            self.ivars.append(v)
        elif c < 0.75:
            self.lines.append(f"{indent}if ({self.cond()}) {{")
            for _ in range(r.randint(1, 3)):
                self.assign(indent + "  ")
            if r.random() < 0.4:
                self.lines.append(f"{indent}}} else {{")
                self.assign(indent + "  ")
            self.lines.append(f"{indent}}}")
        elif c < 0.87:
            acc = self.fresh("f")
            j = self.fresh("j")
            bound = r.choice(["3", "s", "4"])
            self.lines.append(f"{indent}let {acc} = {self.flit()};")
            self.ivars.append(j)
            self.lines.append(f"{indent}for {j} in 0..{bound} {{")
            self.lines.append(f"{indent}  {acc} += {self.fexpr()};")
            self.lines.append(f"{indent}}}")
            self.ivars.remove(j)
            self.fvars.append(acc)
        else:
            self.assign(indent)


def random_kernel_source(seed: int, name: str = "rk") -> str:
    """DSL text of one random kernel.

    The kernel reads `a` (f32) and `b` (i32), writes `o[i]` and `p[i]` for its
    own iteration only, and masks every gather index, so it is race free and
    never traps regardless of schedule.
    """
    rng = random.Random(seed)
    w = _KernelWriter(rng)
    w.lines.append(f"  for i in 0..len(o) {{")
    for _ in range(rng.randint(3, 9)):
        w.statement()
    w.lines.append(f"    o[i] = {w.fexpr(3)};")
    w.lines.append(f"    p[i] = {w.iexpr(3)};")
    w.lines.append("  }")
    exc = "true" if rng.random() < 0.5 else "false"
    head = [
        f"@jacc(iterationSpace=ONE_DIMENSION, exceptions={exc})",
        f"kernel {name}(@read a: f32[], @read b: i32[], @write o: f32[], @write p: i32[], s: i32) {{",
    ]
    return "\n".join(head + w.lines + ["}", ""])


def random_kernel(seed: int):
    """(unit, kernel name) for a parsed random kernel."""
    return parse_kernel(random_kernel_source(seed), f"<random {seed}>"), "rk"


def random_inputs(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "a": (rng.random(RAND_LEN, dtype=np.float32) * 4 - 2).astype(np.float32),
        "b": rng.integers(-50, 50, RAND_LEN, dtype=np.int32),
        "o": np.zeros(RAND_LEN, np.float32),
        "p": np.zeros(RAND_LEN, np.int32),
        "s": int(rng.integers(0, 5)),
    }


def random_launch(seed: int) -> tuple:
    """(global size, group size) for a random kernel launch."""
    rng = random.Random(seed ^ 0x5EED)
    glob = rng.choice([32, 64, 128, 256, 96])
    return (glob,), (rng.choice([g for g in (8, 16, 32) if glob % g == 0]),)


# -- DAGs -----------------------------------------------------------------------

DAG_LEN = 64


def random_dag(seed: int, min_tasks: int = 3, max_tasks: int = 8, devices: int = 2) -> BenchCase:
    """A random graph of pool kernels over shared buffers.

    Every task uses distinct buffers for its parameters; the access modes
    come from the kernels (read, write, readwrite). Write-only outputs are
    fully written, so host state after the graph is fully determined.
    """
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    nbuf = rng.randint(3, 6)
    names = [f"v{i}" for i in range(nbuf)]
    buffers = {n: nrng.uniform(-1, 1, DAG_LEN).astype(np.float32) for n in names}
    unit = library()
    offset = Record.zeros("Offset", unit.flattened_fields("Offset"))
    offset.lo = np.float32(-1.0)
    offset.hi = np.float32(1.0)
    offset.bias = np.float32(rng.choice([0.5, -0.25, 2.0]))
    offset.count = np.int32(7)
    buffers["off"] = offset
    tasks = []
    for _ in range(rng.randint(min_tasks, max_tasks)):
        kernel = rng.choice(["copy", "axpy", "scale", "add", "fill", "shift"])
        arrays = [p.name for p in unit.kernel(kernel).params if p.name != "off" and p.type != F32]
        picked = rng.sample(names, len(arrays))
        args = dict(zip(arrays, picked))
        for p in unit.kernel(kernel).params:
            if p.type == F32:
                args[p.name] = rng.choice([0.5, 2.0, -1.0, 1.5])
        if kernel == "shift":
            args["off"] = "off"
        glob = rng.choice([16, 32, 64])
        tasks.append(TaskSpec(kernel, args, (glob,), (rng.choice([8, 16]),), rng.randrange(devices)))
    return BenchCase(f"dag{seed}", buffers, tasks, tuple(names))
