"""Vectorized value semantics of VKA opcodes.

Every function takes and returns numpy arrays (one lane per thread). The
constant folder evaluates through the same table on one-element arrays, so
folded code and simulated code cannot disagree.
"""

from __future__ import annotations

import numpy as np

from ..types import ScalarType

_UNSIGNED = {np.dtype(np.int32): np.uint32, np.dtype(np.int64): np.uint64}
_INT_LIMITS = {"i32": (-(2**31), 2**31 - 1), "i64": (-(2**63), 2**63 - 1)}


def dtype_of(ty: ScalarType):
    return np.dtype(np.bool_) if ty.name == "bool" else ty.dtype


def _tdiv(a, b):
    """Truncating integer division; x/0 == 0 and MIN/-1 wraps to MIN."""
    zero = b == 0
    bs = np.where(zero, 1, b).astype(a.dtype)
    neg1 = bs == -1
    bs2 = np.where(neg1, 1, bs).astype(a.dtype)
    q = a // bs2
    m = a - q * bs2
    q = q + ((m != 0) & ((a < 0) != (bs2 < 0))).astype(a.dtype)
    q = np.where(neg1, np.negative(a), q)
    return np.where(zero, 0, q).astype(a.dtype)


def _trem(a, b):
    zero = b == 0
    q = _tdiv(a, b)
    bs = np.where(zero, 0, b).astype(a.dtype)
    return np.where(zero, 0, a - q * bs).astype(a.dtype)


def _shift_mask(ty: ScalarType) -> int:
    return 31 if ty.name == "i32" else 63


def binop(op: str, ty: ScalarType, a, b):
    t = ty.name
    if t == "bool":
        if op == "and":
            return a & b
        if op == "or":
            return a | b
        if op == "xor":
            return a ^ b
        raise ValueError(f"{op} on predicates")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return _tdiv(a, b) if ty.is_int else a / b
    if op == "rem":
        return _trem(a, b) if ty.is_int else np.fmod(a, b)
    if op == "min":
        return np.minimum(a, b)
    if op == "max":
        return np.maximum(a, b)
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return np.left_shift(a, b & _shift_mask(ty))
    if op == "shr":
        return np.right_shift(a, b & _shift_mask(ty))
    if op == "pow":
        return np.power(a, b)
    raise ValueError(f"unknown binary op {op}")


def unop(op: str, ty: ScalarType, a):
    if op == "neg":
        return np.negative(a)
    if op == "not":
        return ~a if ty.name != "bool" else np.logical_not(a)
    if op == "abs":
        return np.abs(a)
    if op in ("sin", "cos", "sqrt", "exp", "log"):
        return getattr(np, op)(a)
    raise ValueError(f"unknown unary op {op}")


def popc(a):
    return np.bitwise_count(a.view(_UNSIGNED[a.dtype])).astype(np.int32)


def convert(dst: ScalarType, src: ScalarType, a):
    if dst.is_int and src.is_float:
        lo, hi = _INT_LIMITS[dst.name]
        f = a.astype(np.float64)
        out = np.zeros(a.shape, dtype=dst.dtype)
        ok = ~np.isnan(f)
        big = f >= float(hi)
        small = f <= float(lo)
        mid = ok & ~big & ~small
        out[mid] = f[mid].astype(dst.dtype)
        out[big] = hi
        out[small] = lo
        return out
    return a.astype(dst.dtype)


def compare(cmp: str, a, b):
    if cmp == "eq":
        return a == b
    if cmp == "ne":
        return a != b
    if cmp == "lt":
        return a < b
    if cmp == "le":
        return a <= b
    if cmp == "gt":
        return a > b
    if cmp == "ge":
        return a >= b
    raise ValueError(f"unknown comparison {cmp}")


def evaluate(op: str, ty: ScalarType, attr, srcs):
    """Result of pure opcode `op` over lane arrays `srcs`."""
    with np.errstate(all="ignore"):
        if op == "mov":
            return srcs[0]
        if op == "selp":
            return np.where(srcs[2], srcs[0], srcs[1])
        if op == "setp":
            return compare(attr, srcs[0], srcs[1])
        if op == "cvt":
            return convert(ty, ScalarType(attr), srcs[0])
        if op == "popc":
            return popc(srcs[0])
        if len(srcs) == 2:
            return binop(op, ty, srcs[0], srcs[1])
        return unop(op, ty, srcs[0])
