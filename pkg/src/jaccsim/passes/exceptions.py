"""Mark array accesses for bounds checking when the kernel asks for it."""

from __future__ import annotations

from dataclasses import replace

from ..hir import Index, KernelHIR, map_stmt_exprs


def insert_exception_checks(k: KernelHIR) -> KernelHIR:
    """Every access `a[i]` gets `checked=True`; lowering turns that into a
    `0 <= i < len(a)` guard that branches to a bounds trap."""
    if not k.jacc.exceptions:
        return k

    def mark(e):
        if isinstance(e, Index) and not e.checked:
            return replace(e, checked=True)
        return e

    return replace(k, body=map_stmt_exprs(k.body, mark))
