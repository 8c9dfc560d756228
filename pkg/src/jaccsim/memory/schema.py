"""Data schemas: fixed-offset layouts of composite types plus per-kernel access flags."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..errors import CompileError
from ..hir import (
    Assign,
    FieldRef,
    Index,
    KernelHIR,
    SourceUnit,
    Var,
    iter_exprs,
    iter_stmts,
    stmt_exprs,
)
from ..types import ArrayType, ScalarType, Space, StructType


@dataclass(frozen=True)
class SchemaEntry:
    name: str
    type: object  # ScalarType or fixed-length ArrayType
    offset: int
    size: int
    read: bool = False
    written: bool = False

    @property
    def elem(self) -> ScalarType:
        return self.type.elem if isinstance(self.type, ArrayType) else self.type


@dataclass(frozen=True)
class DataSchema:
    type_name: str
    entries: tuple
    total_size: int

    def entry(self, name: str) -> SchemaEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(f"{self.type_name} has no field {name!r}")

    def offset_of(self, name: str) -> int:
        return self.entry(name).offset

    @property
    def read_bytes(self) -> int:
        return sum(e.size for e in self.entries if e.read)

    def format(self) -> str:
        lines = [f"schema {self.type_name} size={self.total_size}"]
        lines.append(f"  {'field':<16}{'type':<10}{'offset':>7}{'size':>6}  access")
        for e in self.entries:
            acc = ("r" if e.read else "-") + ("w" if e.written else "-")
            lines.append(f"  {e.name:<16}{str(e.type):<10}{e.offset:>7}{e.size:>6}  {acc}")
        return "\n".join(lines)


def _align(n: int, a: int) -> int:
    return (n + a - 1) // a * a


def build_schema(type_name: str, fields, accesses: Optional[dict] = None) -> DataSchema:
    """Sequential layout with natural alignment.

    `fields` is the flattened (super fields first) list of (name, type);
    `accesses` maps field name -> (read, written); missing names are unused.
    """
    accesses = accesses or {}
    entries = []
    off = 0
    max_align = 1
    for name, ty in fields:
        if isinstance(ty, ArrayType):
            if ty.length is None:
                raise CompileError(f"{type_name}.{name}: field of unsupported type {ty}")
            elem = ty.elem
        elif isinstance(ty, ScalarType):
            elem = ty
        else:
            raise CompileError(f"{type_name}.{name}: field of unsupported type {ty}")
        if elem.name == "bool":
            raise CompileError(f"{type_name}.{name}: field of unsupported type {ty}")
        align = elem.size
        off = _align(off, align)
        size = ty.size
        r, w = accesses.get(name, (False, False))
        entries.append(SchemaEntry(name, ty, off, size, bool(r), bool(w)))
        off += size
        max_align = max(max_align, align)
    total = _align(off, max_align) if entries else 0
    return DataSchema(type_name, tuple(entries), total)


def layout(fields) -> tuple:
    """(offsets by name, total size) for an ad-hoc region such as shared memory."""
    s = build_schema("<region>", fields)
    return {e.name: e.offset for e in s.entries}, s.total_size


# -- access collection --------------------------------------------------------


def _object_root(e, k: KernelHIR):
    """Composite type name and field for a field access expression, if any."""
    if not isinstance(e, FieldRef):
        return None
    obj = e.obj
    if isinstance(obj, Var):
        if obj.name == "this":
            return k.name, e.name
        p = k.param(obj.name)
        if p is not None and isinstance(p.type, StructType):
            return p.type.name, e.name
    return None


def _receiver_field(e, k: KernelHIR):
    if isinstance(e, Var):
        f = k.field(e.name)
        if f is not None and k.param(e.name) is None:
            return k.name, e.name
    return _object_root(e, k)


def collect_accesses(k: KernelHIR) -> dict:
    """Map type name -> {field: (read, written)} over a fully inlined kernel.

    The kernel's receiver appears under the kernel's own name.
    """
    acc: dict = {}

    def mark(key, read=False, written=False):
        if key is None:
            return
        tname, fname = key
        r, w = acc.setdefault(tname, {}).get(fname, (False, False))
        acc[tname][fname] = (r or read, w or written)

    for s in iter_stmts(k.body):
        exprs = stmt_exprs(s)
        if isinstance(s, Assign):
            target = s.target
            base = target.base if isinstance(target, Index) else target
            key = _receiver_field(base, k)
            f = k.field(key[1]) if key is not None and key[0] == k.name else None
            atomic = f is not None and f.atomic is not None
            mark(key, read=(s.op is not None and not atomic), written=True)
            exprs = [s.value] + ([target.index] if isinstance(target, Index) else [])
            if isinstance(base, FieldRef) and not isinstance(base.obj, Var):
                exprs.append(base.obj)
        for top in exprs:
            for e in iter_exprs(top):
                mark(_receiver_field(e, k), read=True)
    return acc


def kernel_schemas(k: KernelHIR, unit: Optional[SourceUnit]) -> dict:
    """Schemas for the receiver and every composite parameter type of `k`."""
    acc = collect_accesses(k)
    out = {}
    recv = [(f.name, f.type) for f in k.fields if f.space in (Space.GLOBAL, Space.CONSTANT)]
    out[k.name] = build_schema(k.name, recv, acc.get(k.name))
    for p in k.params:
        if isinstance(p.type, StructType) and p.type.name not in out:
            if unit is None or unit.type_decl(p.type.name) is None:
                raise CompileError(f"missing schema for composite type {p.type.name!r}")
            flat = unit.flattened_fields(p.type.name)
            out[p.type.name] = build_schema(p.type.name, flat, acc.get(p.type.name))
    return out
