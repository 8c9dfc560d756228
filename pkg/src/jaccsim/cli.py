"""Command-line driver: compile, run, interpret, plan task graphs and benchmark."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .errors import InvalidArgument, JaccError
from .frontend import parse_kernel
from .hirfmt import format_kernel
from .interp import HostEnv, interpret
from .lir import format_lir
from .passes.pipeline import DEFAULT_CONFIG, KNOWN_PASSES, TOGGLEABLE, PassConfig, compile_kernel, dump_after
from .runtime.graph import Runtime
from .runtime.taskfile import build_graph, parse_taskgraph
from .sim.engine import LaunchSchedule, SimConfig, launch
from .sim.memory import GlobalMemory
from .types import ArrayType, StructType
from .vka.assemble import assemble


def _sizes(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise InvalidArgument(f"sizes must be comma-separated integers, got {text!r}") from None


def _bindings(items) -> dict:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise InvalidArgument(f"--bind takes name=value or name=file.bin, got {item!r}")
        out[name] = value
    return out


def _scalar_text(text: str, ty):
    try:
        if ty.name == "bool":
            return text.lower() in ("1", "true")
        return int(text, 0) if ty.is_int else float(text)
    except ValueError:
        raise InvalidArgument(f"expected a {ty} value, got {text!r}") from None


def _read_bin(path: str, dtype) -> np.ndarray:
    if not os.path.exists(path):
        raise InvalidArgument(f"no such file: {path}")
    return np.fromfile(path, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)


def _write_bin(path: str, arr: np.ndarray):
    np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tofile(path)


def _preview(arr: np.ndarray, n: int = 8) -> str:
    head = " ".join(repr(x.item()) for x in arr[:n])
    return head + (" ..." if len(arr) > n else "")


def _pass_config(args) -> PassConfig:
    cfg = DEFAULT_CONFIG
    for p in getattr(args, "disable", None) or ():
        if p not in TOGGLEABLE:
            raise InvalidArgument(f"pass {p!r} cannot be disabled; choose from {', '.join(TOGGLEABLE)}")
        cfg = cfg.without(p)
    return cfg


def _load_unit(path: str):
    with open(path) as f:
        return parse_kernel(f.read(), path)


def _pick_kernel(unit, name: Optional[str]):
    if name is not None:
        try:
            return unit.kernel(name)
        except KeyError:
            raise InvalidArgument(f"no kernel named {name!r} in {unit.path}") from None
    if len(unit.kernels) != 1:
        names = ", ".join(k.name for k in unit.kernels)
        raise InvalidArgument(f"{unit.path} declares several kernels ({names}); pick one with --kernel")
    return unit.kernels[0]


# -- commands -------------------------------------------------------------------


def cmd_compile(args, out) -> int:
    unit = _load_unit(args.file)
    cfg = _pass_config(args)
    if args.dump_schema:
        kernels = [_pick_kernel(unit, args.kernel)] if args.kernel else list(unit.kernels)
        for k in kernels:
            schemas = compile_kernel(k, unit, cfg).schemas
            if args.dump_schema in schemas:
                print(schemas[args.dump_schema].format(), file=out)
                return 0
        raise InvalidArgument(f"no kernel in {args.file} uses type {args.dump_schema!r}")
    k = _pick_kernel(unit, args.kernel)
    if args.dump_after:
        print(dump_after(unit, k.name, args.dump_after, cfg), file=out)
        return 0
    ck = compile_kernel(k, unit, cfg)
    if args.dump_ir:
        print(format_kernel(ck.hir), file=out)
        print(format_lir(ck.lir), file=out)
        return 0
    text = {"vka": ck.vka, "hir": format_kernel(ck.hir), "lir": format_lir(ck.lir)}[args.emit]
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        out.write(text if text.endswith("\n") else text + "\n")
    return 0


def cmd_exec(args, out) -> int:
    with open(args.file) as f:
        prog = assemble(f.read())
    binds = _bindings(args.bind)
    mem = GlobalMemory()
    launch_args, arrays = {}, {}
    for p in prog.params:
        if p.name not in binds:
            raise InvalidArgument(f"missing --bind for parameter {p.name!r}")
        v = binds.pop(p.name)
        if p.kind == "buffer":
            arr = _read_bin(v, p.ty.dtype)
            buf = mem.alloc(arr.nbytes, p.ty, len(arr))
            mem.write(buf, arr)
            launch_args[p.name] = buf
            arrays[p.name] = (buf, p.ty.dtype, v)
        elif p.kind == "object":
            raw = _read_bin(v, np.uint8)
            if len(raw) < p.size:
                raw = np.concatenate([raw, np.zeros(p.size - len(raw), np.uint8)])
            buf = mem.alloc(len(raw))
            mem.write(buf, raw)
            launch_args[p.name] = buf
            arrays[p.name] = (buf, np.uint8, v)
        else:
            launch_args[p.name] = _scalar_text(v, p.ty)
    if binds:
        raise InvalidArgument(f"kernel {prog.kernel_name!r} has no parameter {sorted(binds)[0]!r}")
    sched = LaunchSchedule(_sizes(args.global_size), _sizes(args.group) if args.group else _sizes(args.global_size))
    m = launch(prog, sched, launch_args, mem, args.seed, SimConfig(workers=args.workers))
    for name, (buf, dt, src) in arrays.items():
        data = np.frombuffer(mem.read(buf), dtype=dt)
        print(f"{name}: {_preview(data)}", file=out)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            _write_bin(os.path.join(args.out, os.path.basename(src)), data)
    for k, v in m.as_dict().items():
        print(f"{k} {v}", file=out)
    return 0


def cmd_interp(args, out) -> int:
    unit = _load_unit(args.file)
    k = _pick_kernel(unit, args.kernel)
    binds = _bindings(args.bind)
    values = {}
    for p in k.params:
        if p.name not in binds:
            raise InvalidArgument(f"missing --bind for parameter {p.name!r}")
        v = binds.pop(p.name)
        if isinstance(p.type, ArrayType):
            values[p.name] = _read_bin(v, p.type.elem.dtype)
        elif isinstance(p.type, StructType):
            raise InvalidArgument(f"parameter {p.name!r} is a {p.type.name} record; record binding is only available from Python")
        else:
            values[p.name] = _scalar_text(v, p.type)
    if binds:
        raise InvalidArgument(f"kernel {k.name!r} has no parameter {sorted(binds)[0]!r}")
    env = interpret(k, HostEnv(values, {}), unit)
    for p in k.params:
        if isinstance(p.type, ArrayType):
            data = env.bindings[p.name]
            print(f"{p.name}: {_preview(data)}", file=out)
            if args.out and p.mode is not None and p.mode.writes:
                os.makedirs(args.out, exist_ok=True)
                _write_bin(os.path.join(args.out, f"{p.name}.bin"), data)
    for f in k.fields:
        if f.name in env.fields:
            v = env.fields[f.name]
            print(f"this.{f.name}: {_preview(v) if isinstance(v, np.ndarray) else v}", file=out)
    return 0


def cmd_graph(args, out) -> int:
    from .bench.kernels import library

    with open(args.file) as f:
        text = f.read()
    spec = parse_taskgraph(text)
    base = os.path.dirname(os.path.abspath(args.file))
    if spec.source:
        path = spec.source if os.path.isabs(spec.source) else os.path.join(base, spec.source)
        unit = _load_unit(path)
    else:
        unit = library()
    devices = max([t.device for t in spec.tasks] + [0]) + 1
    rt = Runtime(devices=devices, seed=args.seed, optimize=not args.no_optimize, full_transfers=args.full_transfers)
    g, buffers = build_graph(spec, unit, rt, base)
    if args.dump_actions:
        print(g.plan().dump(), file=out)
    if args.run or not args.dump_actions:
        g.execute()
        for line in rt.log.lines():
            print(line, file=out)
        print(f"bytes_moved {rt.log.total_bytes()}", file=out)
        for name, arr in buffers.items():
            print(f"{name}: {_preview(arr)}", file=out)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                _write_bin(os.path.join(args.out, f"{name}.bin"), arr)
    return 0


def cmd_bench(args, out) -> int:
    from .bench.report import emit_report
    from .bench.suite import NAMES, run_benchmark

    names = NAMES if args.name == "all" else (args.name,)
    if args.matrix and "spmv" not in names:
        raise InvalidArgument("--matrix only applies to spmv")
    reports = []
    for n in names:
        reports.append(
            run_benchmark(
                n,
                args.size,
                args.iterations,
                args.seed,
                optimize_actions=not args.no_optimize_actions,
                full_transfers=args.full_transfers,
                matrix=args.matrix if n == "spmv" else None,
                workers=args.workers,
                passes=_pass_config(args),
            )
        )
    print(emit_report(reports, "console"), file=out)
    for r in reports:
        for f in r.failures:
            print(f"FAIL {r.name}: {f}", file=out)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(emit_report(reports, "csv"))
    return 0 if all(r.passed for r in reports) else 1


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jaccsim", description="Kernel compiler, device simulator and task-graph runtime.")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a DSL kernel")
    c.add_argument("file")
    c.add_argument("--kernel")
    c.add_argument("--emit", choices=("vka", "hir", "lir"), default="vka")
    c.add_argument("-o", "--output")
    c.add_argument("--dump-after", choices=KNOWN_PASSES, metavar="PASS")
    c.add_argument("--dump-schema", metavar="TYPE")
    c.add_argument("--dump-ir", action="store_true", help="print the optimized HIR and LIR")
    c.add_argument("--disable", action="append", metavar="PASS", help="turn off an optional pass")
    c.set_defaults(func=cmd_compile)

    e = sub.add_parser("exec", help="assemble and run a VKA program on the simulator")
    e.add_argument("file")
    e.add_argument("--global", dest="global_size", required=True, metavar="N[,N[,N]]")
    e.add_argument("--group", metavar="M[,M[,M]]")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--bind", action="append", metavar="NAME=FILE|VALUE")
    e.add_argument("--out", metavar="DIR", help="write buffers back as little-endian files")
    e.set_defaults(func=cmd_exec)

    i = sub.add_parser("interp", help="run a DSL kernel through the reference interpreter")
    i.add_argument("file")
    i.add_argument("--kernel")
    i.add_argument("--bind", action="append", metavar="NAME=FILE|VALUE")
    i.add_argument("--out", metavar="DIR")
    i.set_defaults(func=cmd_interp)

    g = sub.add_parser("graph", help="plan or run a task-graph description")
    g.add_argument("file")
    g.add_argument("--dump-actions", action="store_true")
    g.add_argument("--no-optimize", action="store_true")
    g.add_argument("--full-transfers", action="store_true")
    g.add_argument("--run", action="store_true", help="execute even when dumping actions")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", metavar="DIR")
    g.set_defaults(func=cmd_graph)

    b = sub.add_parser("bench", help="run benchmarks against their oracles")
    b.add_argument("name", help="benchmark name or 'all'")
    b.add_argument("--size", type=int)
    b.add_argument("--iterations", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv", metavar="PATH")
    b.add_argument("--no-optimize-actions", action="store_true")
    b.add_argument("--full-transfers", action="store_true")
    b.add_argument("--matrix", metavar="FILE.mtx")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--disable", action="append", metavar="PASS")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (JaccError, OSError, ValueError) as exc:
        print(f"jaccsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
