"""Implicit parallelization of the first loop nest (grid-stride rewrite)."""

from __future__ import annotations

from dataclasses import replace

from ..errors import CompileError
from ..hir import Binary, Block, Call, Const, For, KernelHIR
from ..types import I32, IterationSpace


def _builtin(name: str, dim: int):
    return Call(name, (Const(dim, I32),))


def _is_const(e, value) -> bool:
    return isinstance(e, Const) and e.type.is_int and e.value == value


def _mul(a, b):
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Binary("*", a, b)


def rewrite_loop(loop: For, dim: int) -> For:
    """`for i in lo..hi step s` -> `for i in lo + gid*s .. hi step s*gsize`."""
    step = loop.step if loop.step is not None else Const(1, I32)
    start = _mul(_builtin("global_id", dim), step)
    if not _is_const(loop.lo, 0):
        start = Binary("+", loop.lo, start)
    stride = _mul(step, _builtin("global_size", dim))
    return replace(loop, lo=start, step=stride)


def _first_for(block: Block):
    for idx, s in enumerate(block.stmts):
        if isinstance(s, For):
            return idx, s
    return None, None


def parallelize_first_loop_nest(k: KernelHIR) -> KernelHIR:
    dims = k.jacc.iteration_space.dims
    if k.jacc.iteration_space is IterationSpace.NONE:
        return k

    def rewrite(block: Block, dim: int, depth: int) -> Block:
        idx, loop = _first_for(block)
        if loop is None:
            if dim == 0:
                raise CompileError(f"kernel {k.name!r}: no loop nest found to parallelize")
            raise CompileError(
                f"kernel {k.name!r}: loop nest depth {depth} is less than the {dims} requested dimensions"
            )
        new_loop = rewrite_loop(loop, dim)
        if dim + 1 < dims:
            new_loop = replace(new_loop, body=rewrite(loop.body, dim + 1, depth + 1))
        stmts = list(block.stmts)
        stmts[idx] = new_loop
        return replace(block, stmts=tuple(stmts))

    return replace(k, body=rewrite(k.body, 0, 1))
