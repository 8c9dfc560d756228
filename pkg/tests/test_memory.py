import numpy as np
import pytest

from jaccsim.bench.kernels import library
from jaccsim.errors import CompileError, InvalidArgument
from jaccsim.memory.manager import WHOLE, MemoryManager, serialize, write_back
from jaccsim.memory.schema import build_schema, layout
from jaccsim.objects import Record
from jaccsim.passes.pipeline import compile_source
from jaccsim.sim import GlobalMemory
from jaccsim.types import F32, F64, I32, ArrayType

from conftest import unit_of

OFFSET_FIELDS = [("lo", F32), ("hi", F32), ("bias", F32), ("count", I32)]


def _offset(**kw):
    return Record.zeros("Offset", OFFSET_FIELDS, **kw)


def test_four_field_layout():
    s = build_schema("Offset", OFFSET_FIELDS)
    assert [(e.name, e.offset, e.size) for e in s.entries] == [("lo", 0, 4), ("hi", 4, 4), ("bias", 8, 4), ("count", 12, 4)]
    assert s.total_size == 16
    assert s.offset_of("bias") == 8


def test_natural_alignment_and_padding():
    s = build_schema("M", [("a", I32), ("b", F64), ("c", I32)])
    assert [e.offset for e in s.entries] == [0, 8, 16]
    assert s.total_size == 24


def test_subtype_places_super_fields_first():
    u = unit_of("type P { x: f32; y: f32; }\ntype Q : P { z: f64; v: i32[3]; }\n@jacc(iterationSpace=NONE)\nkernel k(@read q: Q) { }")
    s = build_schema("Q", u.flattened_fields("Q"))
    assert [(e.name, e.offset) for e in s.entries] == [("x", 0), ("y", 4), ("z", 8), ("v", 16)]
    assert s.total_size == 32


def test_empty_schema():
    s = build_schema("E", [])
    assert s.entries == () and s.total_size == 0
    assert layout([]) == ({}, 0)


def test_unsupported_field_types():
    with pytest.raises(CompileError, match="unsupported type"):
        build_schema("B", [("v", ArrayType(F32, None))])


def test_kernel_schema_marks_only_read_field():
    ck = compile_source(library(), "shift")
    s = ck.schemas["Offset"]
    assert [e.name for e in s.entries if e.read] == ["bias"]
    assert not any(e.written for e in s.entries)
    assert s.read_bytes == 4
    assert "bias" in s.format() and "r-" in s.format()


def test_serialize_zero_fills_untransferred_fields():
    s = build_schema("Offset", OFFSET_FIELDS, {"bias": (True, False)})
    rec = _offset(lo=1.0, hi=2.0, bias=3.5, count=7)
    image = serialize(rec, s)
    assert len(image) == 16
    assert np.frombuffer(image, np.float32)[:3].tolist() == [0.0, 0.0, 3.5]
    assert np.frombuffer(image, np.int32)[3] == 0
    full = serialize(rec, s, {"lo", "hi", "bias", "count"})
    back = write_back(full, s, _offset(), {"lo", "hi", "bias", "count"})
    assert back == rec


def test_write_back_touches_only_written_entries():
    s = build_schema("Offset", OFFSET_FIELDS, {"count": (False, True)})
    rec = _offset(lo=1.0, count=1)
    dev = bytearray(16)
    dev[0:4] = np.float32(99).tobytes()
    dev[12:16] = np.int32(42).tobytes()
    write_back(bytes(dev), s, rec)
    assert rec.lo == 1.0
    assert rec.count == 42


def test_array_round_trip_in_place():
    a = np.arange(6, dtype=np.int64)
    data = serialize(a)
    b = np.zeros(6, dtype=np.int64)
    same = write_back(data, None, b)
    assert same is b and np.array_equal(b, a)
    with pytest.raises(InvalidArgument, match="expected 48 bytes"):
        write_back(data[:8], None, b)


def _manager():
    return MemoryManager({0: GlobalMemory(), 1: GlobalMemory()})


def test_ensure_resident_then_none():
    mm = _manager()
    a = np.ones(16, np.float32)
    _, action, missing = mm.ensure_resident(a, 0)
    assert action == "COPY_IN" and missing == {WHOLE}
    assert mm.copy_in(a, 0) == 64
    _, action, missing = mm.ensure_resident(a, 0)
    assert action == "NONE" and not missing
    assert mm.copy_in(a, 0) == 0
    assert mm.log.lines() == [f"{mm.name_of(a)} in 64"]


def test_host_modification_bumps_epoch_and_forces_copy():
    mm = _manager()
    a = np.ones(4, np.float32)
    mm.copy_in(a, 0)
    assert mm.epoch(a) == 0
    a[:] = 5
    mm.notify_modified(a)
    assert mm.epoch(a) == 1
    assert mm.ensure_resident(a, 0)[1] == "COPY_IN"
    mm.copy_in(a, 0)
    assert np.frombuffer(mm.device_bytes(a, 0), np.float32).tolist() == [5.0] * 4


def test_write_on_one_device_stales_the_other():
    mm = _manager()
    a = np.zeros(4, np.int32)
    mm.copy_in(a, 0)
    mm.copy_in(a, 1)
    mm.mark_written(a, 1)
    assert mm.ensure_resident(a, 1)[1] == "NONE"
    assert mm.ensure_resident(a, 0)[1] == "COPY_IN"


def test_record_transfers_count_entry_bytes():
    mm = _manager()
    rec = _offset(bias=2.0)
    s = build_schema("Offset", OFFSET_FIELDS, {"bias": (True, False), "count": (False, True)})
    mm.set_layout(rec, s)
    assert mm.copy_in(rec, 0, {"bias"}) == 4
    assert mm.copy_in(rec, 0, {"bias"}) == 0
    mm.mark_written(rec, 0, {"count"})
    assert mm.copy_out(rec, 0, {"count"}) == 4
    assert mm.log.total_bytes("in") == 4 and mm.log.total_bytes("out") == 4


def test_registry_names():
    mm = _manager()
    a, b = np.zeros(2), np.zeros(2)
    assert mm.register(a, "A") == "A"
    with pytest.raises(InvalidArgument, match="already taken"):
        mm.register(b, "A")
    name = mm.register(b)
    assert name != "A" and mm.register(b) == name
    with pytest.raises(InvalidArgument, match="only arrays and records"):
        mm.register([1, 2])


def test_copy_out_needs_residency_and_release_frees():
    mm = _manager()
    a = np.zeros(4, np.float32)
    with pytest.raises(InvalidArgument, match="not resident"):
        mm.copy_out(a, 0)
    mm.copy_in(a, 0)
    assert len(mm.devices[0].live_buffers()) == 1
    mm.release(a)
    assert mm.devices[0].live_buffers() == []
    with pytest.raises(InvalidArgument, match="unknown device"):
        mm.copy_in(a, 5)
