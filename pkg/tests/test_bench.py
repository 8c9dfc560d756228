import csv
import io
import math

import numpy as np
import pytest

from jaccsim.bench import NAMES, SPECS, emit_report, run_benchmark
from jaccsim.bench.mtx import banded_csr, read_mtx, write_mtx
from jaccsim.bench.report import COLUMNS
from jaccsim.bench.suite import black_scholes, build_case, conv_reference, correlation_reference, scaled_error
from jaccsim.errors import InvalidArgument

SMALL = {"vadd": 4096, "reduction": 4096, "histogram": 4096, "matmul": 16, "spmv": 64, "conv": 32, "blackscholes": 4096, "correlation": 128}


@pytest.fixture(scope="module")
def small_reports():
    return {n: run_benchmark(n, SMALL[n], iterations=2) for n in NAMES}


def test_every_benchmark_passes_at_small_size(small_reports):
    for name, r in small_reports.items():
        assert r.passed, (name, r.failures)
        assert r.iterations == 2


def test_bytes_moved_is_log_sum(small_reports):
    for r in small_reports.values():
        assert r.bytes_moved == sum(t.nbytes for t in r.transfers) > 0
        assert r.transfer_count == len(r.transfers)


def test_report_csv_columns(small_reports):
    text = emit_report(small_reports.values(), "csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == COLUMNS
    assert [row["benchmark"] for row in rows] == list(NAMES)
    assert all(row["correct"] == "pass" for row in rows)
    assert int(rows[0]["bytes_moved"]) == small_reports["vadd"].bytes_moved


def test_empty_report_is_header_only():
    assert emit_report([], "csv") == ",".join(COLUMNS) + "\n"
    table = emit_report([])
    assert table.splitlines()[0].split() == list(COLUMNS)
    assert len(table.splitlines()) == 2
    with pytest.raises(ValueError, match="unknown report format"):
        emit_report([], "xml")


def test_console_table_aligns(small_reports):
    lines = emit_report(small_reports.values()).splitlines()
    assert len(lines) == 2 + len(NAMES)
    assert len({len(l) for l in lines}) == 1


def test_same_seed_same_outputs():
    a = run_benchmark("histogram", 2048, iterations=1, seed=4, check_interpreter=False)
    b = run_benchmark("histogram", 2048, iterations=1, seed=4, check_interpreter=False)
    for k in a.outputs:
        assert a.outputs[k].tobytes() == b.outputs[k].tobytes()
    assert a.bytes_moved == b.bytes_moved


def test_larger_than_desk_size():
    n = 4 * SPECS["vadd"].desk_size
    r = run_benchmark("vadd", n, iterations=1, check_interpreter=False)
    assert r.passed and r.size == n
    assert r.metrics.global_stores == n


def test_unknown_benchmark_and_bad_iterations():
    with pytest.raises(InvalidArgument, match="unknown benchmark"):
        run_benchmark("fft")
    with pytest.raises(InvalidArgument, match="at least 1"):
        run_benchmark("vadd", 64, iterations=0)


def test_black_scholes_textbook_value():
    call, put = black_scholes(np.array([100.0]), np.array([100.0]), np.array([1.0]), 0.05, 0.2)
    assert call[0] == pytest.approx(10.450583572185565, rel=1e-12)
    # put-call parity
    assert call[0] - put[0] == pytest.approx(100 - 100 * math.exp(-0.05), rel=1e-12)


def test_black_scholes_kernel_spot_check():
    from jaccsim.bench.kernels import library
    from jaccsim.bench.suite import simulate_kernel

    one = lambda v: np.array([v], np.float32)  # noqa: E731
    out = simulate_kernel(
        library(), "blackscholes",
        {"price": one(100), "strike": one(100), "years": one(1), "call": one(0), "put": one(0), "rate": 0.05, "vol": 0.2},
        1,
    )
    assert abs(float(out["call"][0]) - 10.4505836) < 1e-4


def test_conv_reference_on_impulse():
    img = np.zeros(25, np.float32)
    img[12] = 1.0
    filt = np.arange(9, dtype=np.float32)
    out = conv_reference(img, filt, 5, 5, 3).reshape(5, 5)
    # a centred impulse reproduces the filter, mirrored
    assert np.array_equal(out[1:4, 1:4].ravel(), filt[::-1])


def test_correlation_reference_counts_shared_bits():
    bits = np.array([0b1011, 0b0110], dtype=np.int64)
    counts = correlation_reference(bits, 2, 1).reshape(2, 2)
    assert counts.tolist() == [[3, 1], [1, 2]]


def test_mtx_round_trip(tmp_path):
    rowptr, cols, vals = banded_csr(12, 2, np.random.default_rng(0))
    p = tmp_path / "m.mtx"
    write_mtx(str(p), rowptr, cols, vals, (12, 12))
    r2, c2, v2, shape = read_mtx(str(p))
    assert shape == (12, 12)
    assert np.array_equal(r2, rowptr) and np.array_equal(c2, cols) and np.array_equal(v2, vals)


def test_mtx_symmetric_pattern_and_duplicates(tmp_path):
    p = tmp_path / "s.mtx"
    p.write_text("%%MatrixMarket matrix coordinate pattern symmetric\n% comment\n3 3 3\n1 1\n2 1\n3 2\n")
    rowptr, cols, vals, _ = read_mtx(str(p))
    dense = np.zeros((3, 3))
    for r in range(3):
        dense[r, cols[rowptr[r]:rowptr[r + 1]]] = vals[rowptr[r]:rowptr[r + 1]]
    assert dense.tolist() == [[1, 1, 0], [1, 0, 1], [0, 1, 0]]
    q = tmp_path / "d.mtx"
    q.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1.5\n1 2 2.5\n")
    _, _, v, _ = read_mtx(str(q))
    assert v.tolist() == [4.0]


@pytest.mark.parametrize(
    "text, needle",
    [
        ("hello\n", "not a Matrix Market"),
        ("%%MatrixMarket matrix array real general\n2 2\n", "coordinate"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n", "promises 3"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", "outside"),
    ],
)
def test_mtx_errors(tmp_path, text, needle):
    p = tmp_path / "bad.mtx"
    p.write_text(text)
    with pytest.raises(InvalidArgument, match=needle):
        read_mtx(str(p))


def test_spmv_from_matrix_file(tmp_path):
    rowptr, cols, vals = banded_csr(40, 3, np.random.default_rng(1))
    p = tmp_path / "b.mtx"
    write_mtx(str(p), rowptr, cols, vals, (40, 40))
    r = run_benchmark("spmv", iterations=1, matrix=str(p))
    assert r.passed, r.failures
    assert r.tasks == 2


def test_scaled_error_ignores_tiny_denominators():
    assert scaled_error(np.array([1e-7], np.float32), np.array([0.0])) < 1e-6
    assert scaled_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_case_shapes():
    c = build_case("reduction", 1024)
    assert [t.kernel for t in c.tasks] == ["reduce", "reduce_int"]
    c = build_case("spmv", 50)
    assert [t.kernel for t in c.tasks] == ["spmv", "spmv"]
