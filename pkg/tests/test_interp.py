import numpy as np
import pytest

from jaccsim.bench.kernels import library
from jaccsim.bench.suite import interpret_kernel, simulate_kernel
from jaccsim.interp import HostEnv, atomic_identity, interpret
from jaccsim.types import F32, I32, AtomicOp

from conftest import ONE_D, unit_of


def test_float_reduction():
    out = interpret_kernel(library(), "reduce", {"a": np.arange(1, 101, dtype=np.float32)})
    assert float(out["this"]._values["result"]) == 5050.0


def test_uniform_histogram():
    data = np.tile(np.arange(256, dtype=np.int32), 8)
    out = interpret_kernel(library(), "histogram", {"data": data})
    bins = np.asarray(out["this"]._values["bins"])
    assert bins.shape == (256,)
    assert np.all(bins == 8)


def test_identity_matmul():
    n = 8
    a = np.arange(n * n, dtype=np.float32)
    eye = np.eye(n, dtype=np.float32).ravel()
    out = interpret_kernel(library(), "matmul", {"a": a, "b": eye, "c": np.zeros(n * n, np.float32), "n": n})
    assert np.array_equal(out["c"], a)


def test_inputs_are_not_mutated():
    x = np.ones(4, np.float32)
    env = HostEnv({"x": x, "alpha": 3.0})
    after = interpret(library().kernel("scale"), env, library())
    assert np.all(x == 1.0)
    assert np.all(after.bindings["x"] == 3.0)


def test_missing_binding():
    with pytest.raises(KeyError, match="alpha"):
        interpret(library().kernel("scale"), HostEnv({"x": np.ones(2, np.float32)}), library())


SEMANTICS = ONE_D + """kernel s(@read a: i32[], @read b: i32[], @read f: f32[], @write q: i32[], @write r: i32[], @write w: i32[], @write c: i32[]) {
  for i in 0..len(a) {
    q[i] = a[i] / b[i];
    r[i] = a[i] % b[i];
    w[i] = a[i] * 65536 * 65536 + a[i] * 2147483647;
    c[i] = i32(f[i]);
  }
}"""


def test_integer_semantics_match_device():
    u = unit_of(SEMANTICS)
    z = np.zeros(4, np.int32)
    args = dict(
        a=np.array([7, -7, 5, 2147483647], np.int32),
        b=np.array([2, 2, 0, -1], np.int32),
        f=np.array([1e20, -1e20, np.nan, -2.7], np.float32),
        q=z, r=z, w=z, c=z,
    )
    want = {
        "q": [3, -3, 0, -2147483647],  # truncation, x/0 = 0
        "r": [1, -1, 0, 0],
        "w": [2147483641, -2147483641, 2147483643, 1],  # two's-complement wrap
        "c": [2147483647, -2147483648, 0, -2],  # saturating conversion, NaN -> 0
    }
    host = interpret_kernel(u, "s", args)
    dev = simulate_kernel(u, "s", args, 4)
    for k, v in want.items():
        assert host[k].tolist() == v
        assert dev[k].tolist() == v


def test_atomic_and_starts_from_all_ones():
    assert atomic_identity(AtomicOp.AND, I32) == -1
    assert atomic_identity(AtomicOp.ADD, F32) == 0.0
    u = unit_of(ONE_D + "kernel a(@read x: i32[]) { @atomic(op=AND) field m: i32; for i in 0..len(x) { m = x[i]; } }")
    x = np.array([-1, -3, -5], np.int32)
    assert int(interpret_kernel(u, "a", {"x": x})["this"]._values["m"]) == -7
    assert int(simulate_kernel(u, "a", {"x": x}, 3)["this"]._values["m"]) == -7
