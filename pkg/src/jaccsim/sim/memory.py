"""Device global memory: one byte-addressed arena with an allocation table."""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidArgument
from ..types import ScalarType

ALIGN = 16
# address 0 is never handed out so a zero base register faults
_FIRST = 256

_UFUNC_AT = {
    "add": np.add,
    "sub": np.subtract,
    "and": np.bitwise_and,
    "or": np.bitwise_or,
    "xor": np.bitwise_xor,
}


@dataclass(frozen=True)
class Buffer:
    """Handle to one device allocation."""

    base: int
    nbytes: int
    elem: Optional[ScalarType] = None  # element type for array buffers
    length: int = 0

    @property
    def end(self) -> int:
        return self.base + self.nbytes


def _round(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


class GlobalMemory:
    """Byte-addressed global memory shared by every group of a launch."""

    def __init__(self, capacity: int = 1 << 16):
        self.data = np.zeros(_round(max(capacity, _FIRST + ALIGN)), dtype=np.uint8)
        self.lock = threading.Lock()
        self._allocs: dict = {}  # base -> Buffer
        self._starts: list = []
        self._free: list = []  # (base, nbytes) holes
        self._top = _FIRST
        self._views: dict = {}

    # -- allocation -----------------------------------------------------------

    def alloc(self, nbytes: int, elem: Optional[ScalarType] = None, length: int = 0) -> Buffer:
        size = _round(max(nbytes, 1)) + ALIGN  # trailing gap catches off-by-one reads
        base = None
        for i, (b, n) in enumerate(self._free):
            if n >= size:
                base = b
                if n == size:
                    self._free.pop(i)
                else:
                    self._free[i] = (b + size, n - size)
                break
        if base is None:
            base = self._top
            self._top += size
            if self._top > len(self.data):
                grown = np.zeros(_round(max(self._top, 2 * len(self.data))), dtype=np.uint8)
                grown[: len(self.data)] = self.data
                self.data = grown
                self._views.clear()
        buf = Buffer(base, nbytes, elem, length)
        self.data[base : base + size] = 0
        self._allocs[base] = buf
        bisect.insort(self._starts, base)
        return buf

    def free(self, buf: Buffer):
        if self._allocs.pop(buf.base, None) is None:
            raise InvalidArgument(f"double free of device buffer at {buf.base}")
        self._starts.remove(buf.base)
        self._free.append((buf.base, _round(max(buf.nbytes, 1)) + ALIGN))

    def live_buffers(self) -> list:
        return [self._allocs[b] for b in self._starts]

    # -- host access ----------------------------------------------------------

    def write(self, buf: Buffer, payload, offset: int = 0):
        raw = np.frombuffer(bytes(payload), dtype=np.uint8) if not isinstance(payload, np.ndarray) else payload.view(np.uint8).reshape(-1)
        if offset < 0 or offset + len(raw) > buf.nbytes:
            raise InvalidArgument(f"write of {len(raw)} bytes at {offset} overflows a {buf.nbytes}-byte buffer")
        self.data[buf.base + offset : buf.base + offset + len(raw)] = raw

    def read(self, buf: Buffer, offset: int = 0, nbytes: Optional[int] = None) -> bytes:
        n = buf.nbytes - offset if nbytes is None else nbytes
        return self.data[buf.base + offset : buf.base + offset + n].tobytes()

    def read_array(self, buf: Buffer) -> np.ndarray:
        return np.frombuffer(self.read(buf), dtype=buf.elem.dtype).copy()

    # -- device access --------------------------------------------------------

    def view(self, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        v = self._views.get(dtype)
        if v is None:
            v = self.data.view(dtype)
            self._views[dtype] = v
        return v

    def bad_mask(self, addr, size: int):
        """True where an access of `size` bytes at `addr` leaves every live allocation."""
        a = np.asarray(addr, dtype=np.int64)
        if not self._starts:
            return np.ones(a.shape, dtype=bool)
        starts = np.asarray(self._starts, dtype=np.int64)
        ends = np.array([self._allocs[b].end for b in self._starts], dtype=np.int64)
        slot = np.searchsorted(starts, a, side="right") - 1
        inside = (slot >= 0) & (a + size <= ends[np.maximum(slot, 0)])
        return ~inside | (a % size != 0)


def atomic_apply(region: np.ndarray, op: str, address: int, operand, ty: ScalarType):
    """Indivisible read-modify-write on a byte region; returns the prior value."""
    if op not in _UFUNC_AT:
        raise InvalidArgument(f"unknown atomic op {op!r}")
    if ty.name not in ("i32", "f32"):
        raise InvalidArgument(f"atomics support i32 and f32, not {ty}")
    if ty.name == "f32" and op not in ("add", "sub"):
        raise InvalidArgument(f"f32 atomics support add and sub only, not {op}")
    if address % 4 != 0:
        raise InvalidArgument(f"misaligned atomic address {address}")
    if address < 0 or address + 4 > len(region):
        raise InvalidArgument(f"atomic address {address} out of bounds")
    view = region.view(ty.dtype)
    idx = address // 4
    prev = view[idx].copy()
    with np.errstate(all="ignore"):
        _UFUNC_AT[op].at(view, [idx], ty.dtype.type(operand))
    return prev
