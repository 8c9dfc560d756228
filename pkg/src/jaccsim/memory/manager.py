"""Device residency, partial serialization and the transfer log.

Host objects are numpy arrays (copied whole) or Records laid out by a
DataSchema. Only the entries a kernel reads travel to the device and only
the entries it writes travel back; untransferred bytes stay zero.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidArgument
from ..objects import Record, write_into
from ..sim.memory import Buffer, GlobalMemory
from ..types import ArrayType, dtype_to_scalar
from .schema import DataSchema

WHOLE = "*"  # the single entry of a primitive array


# -- serialization ------------------------------------------------------------


def object_entries(obj, schema: Optional[DataSchema]) -> dict:
    """entry name -> byte size for `obj`."""
    if isinstance(obj, np.ndarray):
        return {WHOLE: obj.nbytes}
    if schema is None:
        raise InvalidArgument(f"{obj.type_name} object needs a data schema")
    return {e.name: e.size for e in schema.entries}


def _entry_bytes(obj: Record, e) -> bytes:
    v = obj.get(e.name)
    arr = np.asarray(v, dtype=e.elem.dtype)
    want = (e.type.length,) if isinstance(e.type, ArrayType) else ()
    if arr.shape != want:
        raise InvalidArgument(f"field {obj.type_name}.{e.name} has shape {arr.shape}, schema expects {want}")
    return arr.tobytes()


def serialize(obj, schema: Optional[DataSchema] = None, entries=None) -> bytes:
    """Device image of `obj`.

    For records only `entries` (default: those the kernel reads) are
    written; every other byte is zero. Arrays are copied whole.
    """
    if isinstance(obj, np.ndarray):
        return np.ascontiguousarray(obj).tobytes()
    if not isinstance(obj, Record):
        raise InvalidArgument(f"cannot serialize {type(obj).__name__}")
    if schema is None or schema.type_name != obj.type_name:
        raise InvalidArgument(f"schema does not describe a {obj.type_name} object")
    want = {e.name for e in schema.entries if e.read} if entries is None else set(entries)
    out = bytearray(schema.total_size)
    for e in schema.entries:
        if e.name in want:
            out[e.offset : e.offset + e.size] = _entry_bytes(obj, e)
    return bytes(out)


def write_back(data: bytes, schema: Optional[DataSchema], obj, entries=None):
    """Copy device bytes into `obj`; records take only `entries` (default: written ones)."""
    if isinstance(obj, np.ndarray):
        if len(data) != obj.nbytes:
            raise InvalidArgument(f"expected {obj.nbytes} bytes, got {len(data)}")
        write_into(obj, np.frombuffer(data, dtype=obj.dtype).reshape(obj.shape))
        return obj
    want = {e.name for e in schema.entries if e.written} if entries is None else set(entries)
    vals = obj._values
    for e in schema.entries:
        if e.name not in want:
            continue
        raw = np.frombuffer(data[e.offset : e.offset + e.size], dtype=e.elem.dtype)
        if isinstance(e.type, ArrayType):
            cur = vals.get(e.name)
            if isinstance(cur, np.ndarray) and cur.shape == raw.shape:
                write_into(cur, raw)
            else:
                vals[e.name] = raw.copy()
        else:
            vals[e.name] = raw[0]
    return obj


# -- transfer log -------------------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    obj: str
    direction: str  # 'in' (host to device) or 'out'
    nbytes: int
    device: int = 0

    def line(self) -> str:
        return f"{self.obj} {self.direction} {self.nbytes}"


class TransferLog:
    def __init__(self):
        self.entries: list = []
        self._lock = threading.Lock()

    def add(self, t: Transfer):
        with self._lock:
            self.entries.append(t)

    def clear(self):
        with self._lock:
            self.entries.clear()

    def total_bytes(self, direction: Optional[str] = None) -> int:
        return sum(t.nbytes for t in self.entries if direction is None or t.direction == direction)

    def bytes_for(self, obj: str, direction: Optional[str] = None) -> int:
        return sum(t.nbytes for t in self.entries if t.obj == obj and (direction is None or t.direction == direction))

    def count(self, obj: Optional[str] = None, direction: Optional[str] = None) -> int:
        return sum(1 for t in self.entries if (obj is None or t.obj == obj) and (direction is None or t.direction == direction))

    def lines(self) -> list:
        return [t.line() for t in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


# -- residency ----------------------------------------------------------------


@dataclass
class Residency:
    buffer: Buffer
    host_version: int  # host epoch the device copy was taken from
    device_version: int = 0
    dirty: bool = False
    valid: set = field(default_factory=set)


class ResidencyTable:
    """(object id, device) -> Residency; internally synchronized."""

    def __init__(self):
        self._rows: dict = {}
        self._lock = threading.RLock()

    def get(self, oid: int, device: int) -> Optional[Residency]:
        with self._lock:
            return self._rows.get((oid, device))

    def put(self, oid: int, device: int, r: Residency):
        with self._lock:
            if (oid, device) in self._rows and self._rows[(oid, device)] is not r:
                raise InvalidArgument("object already has a live buffer on this device")
            self._rows[(oid, device)] = r

    def drop(self, oid: int, device: Optional[int] = None) -> list:
        with self._lock:
            keys = [k for k in self._rows if k[0] == oid and (device is None or k[1] == device)]
            return [(k[1], self._rows.pop(k)) for k in keys]

    def rows_for(self, oid: int) -> dict:
        with self._lock:
            return {k[1]: v for k, v in self._rows.items() if k[0] == oid}

    def __len__(self) -> int:
        return len(self._rows)


class MemoryManager:
    """Moves host objects to and from device memories and tracks residency."""

    def __init__(self, devices: dict):
        self.devices = devices  # id -> GlobalMemory
        self.table = ResidencyTable()
        self.log = TransferLog()
        self._lock = threading.RLock()
        self._objects: dict = {}  # id -> object (kept alive while registered)
        self._names: dict = {}
        self._epochs: dict = {}
        self._layouts: dict = {}  # id -> DataSchema for records
        self._auto = itertools.count()

    # -- registry --

    def register(self, obj, name: Optional[str] = None) -> str:
        with self._lock:
            oid = id(obj)
            if oid in self._objects:
                if name is not None and self._names[oid] != name:
                    raise InvalidArgument(f"object already registered as {self._names[oid]!r}")
                return self._names[oid]
            if not isinstance(obj, (np.ndarray, Record)):
                raise InvalidArgument(f"only arrays and records live on devices, not {type(obj).__name__}")
            taken = set(self._names.values())
            if name is None:
                stem = obj.type_name if isinstance(obj, Record) else "array"
                name = f"{stem}{next(self._auto)}"
                while name in taken:
                    name = f"{stem}{next(self._auto)}"
            if name in taken:
                raise InvalidArgument(f"object name {name!r} is already taken")
            self._objects[oid] = obj
            self._names[oid] = name
            self._epochs[oid] = 0
            return name

    def name_of(self, obj) -> str:
        return self.register(obj)

    def epoch(self, obj) -> int:
        self.register(obj)
        return self._epochs[id(obj)]

    def notify_modified(self, obj):
        """Host changed `obj`; device copies become stale."""
        with self._lock:
            self.register(obj)
            self._epochs[id(obj)] += 1

    def set_layout(self, obj, schema: Optional[DataSchema]):
        if isinstance(obj, Record) and schema is not None:
            self._layouts.setdefault(id(obj), schema)

    def _schema(self, obj) -> Optional[DataSchema]:
        if isinstance(obj, np.ndarray):
            return None
        s = self._layouts.get(id(obj))
        if s is None:
            raise InvalidArgument(f"no data schema known for {self.name_of(obj)}")
        return s

    # -- buffers --

    def _memory(self, device: int) -> GlobalMemory:
        try:
            return self.devices[device]
        except KeyError:
            raise InvalidArgument(f"unknown device {device}") from None

    def buffer_for(self, obj, device: int) -> Buffer:
        """The object's buffer on `device`, allocated (zero-filled) on first use."""
        self.register(obj)
        oid = id(obj)
        with self._lock:
            r = self.table.get(oid, device)
            if r is None:
                mem = self._memory(device)
                if isinstance(obj, np.ndarray):
                    if obj.ndim != 1:
                        raise InvalidArgument("device arrays must be one-dimensional")
                    buf = mem.alloc(obj.nbytes, dtype_to_scalar(obj.dtype), len(obj))
                else:
                    buf = mem.alloc(self._schema(obj).total_size)
                r = Residency(buf, self._epochs[oid])
                self.table.put(oid, device, r)
            return r.buffer

    def ensure_resident(self, obj, device: int, needed=None) -> tuple:
        """(buffer, 'NONE' | 'COPY_IN', entries still missing on the device)."""
        self.register(obj)
        oid = id(obj)
        entries = set(object_entries(obj, self._schema(obj))) if needed is None else set(needed)
        with self._lock:
            buf = self.buffer_for(obj, device)
            r = self.table.get(oid, device)
            if r.host_version != self._epochs[oid]:
                r.valid = set()
                r.host_version = self._epochs[oid]
            missing = entries - r.valid
            return buf, ("COPY_IN" if missing else "NONE"), missing

    def copy_in(self, obj, device: int, entries=None, force: bool = False) -> int:
        """Transfer the needed entries (default: all) unless resident; returns bytes moved."""
        schema = self._schema(obj)
        sizes = object_entries(obj, schema)
        want = set(sizes) if entries is None else set(entries)
        with self._lock:
            buf, action, missing = self.ensure_resident(obj, device, want)
            todo = want if force else missing
            if not todo:
                return 0
            mem = self._memory(device)
            if isinstance(obj, np.ndarray):
                mem.write(buf, np.ascontiguousarray(obj))
            else:
                image = np.frombuffer(serialize(obj, schema, todo), dtype=np.uint8)
                for e in schema.entries:
                    if e.name in todo:
                        mem.write(buf, image[e.offset : e.offset + e.size], e.offset)
            r = self.table.get(id(obj), device)
            r.valid |= todo
            n = sum(sizes[e] for e in todo)
        self.log.add(Transfer(self.name_of(obj), "in", n, device))
        return n

    def mark_written(self, obj, device: int, entries=None):
        """A kernel on `device` wrote `entries`; other devices' copies of them go stale."""
        sizes = object_entries(obj, self._schema(obj))
        written = set(sizes) if entries is None else set(entries)
        oid = id(obj)
        with self._lock:
            for dev, r in self.table.rows_for(oid).items():
                if dev == device:
                    r.valid |= written
                    r.device_version += 1
                    r.dirty = True
                else:
                    r.valid -= written

    def copy_out(self, obj, device: int, entries=None) -> int:
        schema = self._schema(obj)
        sizes = object_entries(obj, schema)
        want = set(sizes) if entries is None else set(entries)
        if not want:
            return 0
        with self._lock:
            r = self.table.get(id(obj), device)
            if r is None:
                raise InvalidArgument(f"{self.name_of(obj)} is not resident on device {device}")
            data = self._memory(device).read(r.buffer)
            write_back(data, schema, obj, want)
            r.dirty = False
            for dev, other in self.table.rows_for(id(obj)).items():
                if dev != device:
                    other.valid -= want
            n = sum(sizes[e] for e in want)
        self.log.add(Transfer(self.name_of(obj), "out", n, device))
        return n

    def device_bytes(self, obj, device: int) -> bytes:
        r = self.table.get(id(obj), device)
        if r is None:
            raise InvalidArgument(f"{self.name_of(obj)} is not resident on device {device}")
        return self._memory(device).read(r.buffer)

    def invalidate(self, obj, device: Optional[int] = None):
        with self._lock:
            for dev, r in self.table.drop(id(obj), device):
                self._memory(dev).free(r.buffer)

    def release(self, obj):
        """Forget `obj` entirely and free its device buffers."""
        with self._lock:
            self.invalidate(obj)
            oid = id(obj)
            for d in (self._objects, self._names, self._epochs, self._layouts):
                d.pop(oid, None)
