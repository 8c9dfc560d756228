"""Host-side composite objects and the lock/snapshot helpers used by the runtime."""

from __future__ import annotations

import numpy as np

from .errors import ObjectLockedError
from .types import ArrayType, ScalarType


class Record:
    """A host instance of a composite type: named, typed field values.

    Scalar fields hold numpy scalars, fixed-length array fields hold numpy
    arrays. While a task graph executes the record is locked and any
    attribute assignment raises ObjectLockedError.
    """

    def __init__(self, type_name: str, values: dict = None, **kw):
        object.__setattr__(self, "_type", type_name)
        object.__setattr__(self, "_locked", False)
        vals = dict(values or {})
        vals.update(kw)
        object.__setattr__(self, "_values", vals)

    @classmethod
    def zeros(cls, type_name: str, layout, **kw) -> "Record":
        """Zero-initialised record for `layout`, a list of (name, type) pairs."""
        vals = {}
        for name, ty in layout:
            vals[name] = zero_value(ty)
        for k, v in kw.items():
            if k not in vals:
                raise AttributeError(f"{type_name} has no field {k!r}")
            vals[k] = coerce_value(v, dict(layout)[k])
        return cls(type_name, vals)

    @property
    def type_name(self) -> str:
        return self._type

    def field_names(self) -> list:
        return list(self._values)

    def get(self, name: str):
        return self._values[name]

    def set(self, name: str, value):
        if self._locked:
            raise ObjectLockedError(f"{self._type} object is locked while its task graph executes")
        self._values[name] = value

    def __getattr__(self, name: str):
        try:
            return self.__dict__["_values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name: str, value):
        if name not in self._values:
            raise AttributeError(f"{self._type} has no field {name!r}")
        self.set(name, value)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"{self._type}({inner})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Record) or other._type != self._type:
            return NotImplemented
        if set(self._values) != set(other._values):
            return False
        return all(bits_equal(self._values[k], other._values[k]) for k in self._values)

    __hash__ = object.__hash__


def zero_value(ty):
    if isinstance(ty, ArrayType):
        return np.zeros(ty.length, dtype=ty.elem.dtype)
    if isinstance(ty, ScalarType):
        return ty.dtype.type(0)
    raise TypeError(f"no host value for type {ty}")


def coerce_value(v, ty):
    if isinstance(ty, ArrayType):
        arr = np.array(v, dtype=ty.elem.dtype)
        if arr.shape != (ty.length,):
            raise ValueError(f"expected {ty.length} elements, got shape {arr.shape}")
        return arr
    return ty.dtype.type(v)


def bits_equal(a, b) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


def snapshot(obj):
    if isinstance(obj, np.ndarray):
        return obj.copy()
    if isinstance(obj, Record):
        return {k: np.copy(v) for k, v in obj._values.items()}
    return None


def restore(obj, snap):
    if isinstance(obj, np.ndarray):
        was = obj.flags.writeable
        obj.flags.writeable = True
        obj[...] = snap
        obj.flags.writeable = was
    elif isinstance(obj, Record):
        for k, v in snap.items():
            cur = obj._values[k]
            if isinstance(cur, np.ndarray) and cur.shape == np.shape(v):
                was = cur.flags.writeable
                cur.flags.writeable = True
                cur[...] = v
                cur.flags.writeable = was
            else:
                obj._values[k] = v[()] if np.ndim(v) == 0 else v


def lock(obj):
    """Lock `obj` against host mutation; returns a token for `unlock`."""
    if isinstance(obj, np.ndarray):
        was = obj.flags.writeable
        obj.flags.writeable = False
        return was
    if isinstance(obj, Record):
        object.__setattr__(obj, "_locked", True)
        for v in obj._values.values():
            if isinstance(v, np.ndarray):
                v.flags.writeable = False
        return True
    return None


def unlock(obj, token=True):
    if isinstance(obj, np.ndarray):
        obj.flags.writeable = bool(token)
    elif isinstance(obj, Record):
        object.__setattr__(obj, "_locked", False)
        for v in obj._values.values():
            if isinstance(v, np.ndarray):
                v.flags.writeable = True


def write_into(dst: np.ndarray, src):
    """Copy into a possibly read-only host array (runtime-internal write path)."""
    was = dst.flags.writeable
    dst.flags.writeable = True
    try:
        dst[...] = src
    finally:
        dst.flags.writeable = was
