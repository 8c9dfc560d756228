"""Kernel-language types and the annotation enums shared across the compiler."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

SCALAR_NAMES = ("i32", "i64", "f32", "f64", "bool")


@dataclass(frozen=True)
class ScalarType:
    name: str

    def __str__(self) -> str:
        return self.name

    @property
    def is_int(self) -> bool:
        return self.name in ("i32", "i64")

    @property
    def is_float(self) -> bool:
        return self.name in ("f32", "f64")

    @property
    def is_numeric(self) -> bool:
        return self.is_int or self.is_float

    @property
    def size(self) -> int:
        return SIZES[self.name]

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.name]

    @property
    def vka(self) -> str:
        return VKA_TYPES[self.name]


@dataclass(frozen=True)
class ArrayType:
    elem: ScalarType
    length: Optional[int] = None  # None: runtime length (buffer parameter)

    def __str__(self) -> str:
        return f"{self.elem}[{'' if self.length is None else self.length}]"

    @property
    def size(self) -> int:
        if self.length is None:
            raise ValueError("unsized array has no static size")
        return self.elem.size * self.length


@dataclass(frozen=True)
class StructType:
    name: str

    def __str__(self) -> str:
        return self.name


Type = Union[ScalarType, ArrayType, StructType]

I32 = ScalarType("i32")
I64 = ScalarType("i64")
F32 = ScalarType("f32")
F64 = ScalarType("f64")
BOOL = ScalarType("bool")

SIZES = {"i32": 4, "i64": 8, "f32": 4, "f64": 8, "bool": 1}
DTYPES = {
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "bool": np.dtype("bool"),
}
VKA_TYPES = {"i32": "s32", "i64": "s64", "f32": "f32", "f64": "f64", "bool": "pred"}
FROM_VKA = {v: k for k, v in VKA_TYPES.items()}

_RANK = {"i32": 0, "i64": 1, "f32": 2, "f64": 3}


def scalar(name: str) -> ScalarType:
    if name not in SCALAR_NAMES:
        raise ValueError(f"unknown scalar type {name!r}")
    return ScalarType(name)


def promote(a: ScalarType, b: ScalarType) -> ScalarType:
    """Binary numeric promotion (int < long < float < double)."""
    return a if _RANK[a.name] >= _RANK[b.name] else b


def widens_to(src: Type, dst: Type) -> bool:
    """True when a value of `src` may be assigned to `dst` without a cast."""
    if src == dst:
        return True
    if isinstance(src, ScalarType) and isinstance(dst, ScalarType):
        if src.is_numeric and dst.is_numeric:
            return _RANK[src.name] <= _RANK[dst.name]
    return False


def dtype_to_scalar(dtype) -> ScalarType:
    dtype = np.dtype(dtype)
    for name, dt in DTYPES.items():
        if dt == dtype or (dt.kind == dtype.kind and dt.itemsize == dtype.itemsize):
            return ScalarType(name)
    raise ValueError(f"unsupported element dtype {dtype}")


class IterationSpace(enum.Enum):
    NONE = 0
    ONE_DIMENSION = 1
    TWO_DIMENSION = 2
    THREE_DIMENSION = 3

    @property
    def dims(self) -> int:
        return self.value


class AtomicOp(enum.Enum):
    NONE = "none"  # infer from the compound operator used in the kernel
    ADD = "add"
    SUB = "sub"
    AND = "and"
    OR = "or"
    XOR = "xor"


COMPOUND_TO_ATOMIC = {
    "+": AtomicOp.ADD,
    "-": AtomicOp.SUB,
    "&": AtomicOp.AND,
    "|": AtomicOp.OR,
    "^": AtomicOp.XOR,
}


class Space(enum.Enum):
    GLOBAL = "global"
    SHARED = "shared"
    PRIVATE = "private"
    CONSTANT = "constant"


class Mode(enum.Enum):
    READ = "read"
    WRITE = "write"
    READWRITE = "readwrite"

    @property
    def reads(self) -> bool:
        return self is not Mode.WRITE

    @property
    def writes(self) -> bool:
        return self is not Mode.READ

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower()
        aliases = {"r": "read", "w": "write", "rw": "readwrite", "read_write": "readwrite"}
        return cls(aliases.get(key, key))
