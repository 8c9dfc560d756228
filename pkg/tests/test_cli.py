import io
import re

import numpy as np
import pytest

from jaccsim.cli import main

VADD = """@jacc(iterationSpace=ONE_DIMENSION)
kernel vadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
  for i in 0..len(c) {
    c[i] = a[i] + b[i];
  }
}
"""

CHAIN = """# two tasks sharing one array
buffer A f32 1024 init=iota
task scale dev=0 global=1024 group=128 args=A:readwrite,2.0
task scale dev=0 global=1024 group=128 args=A:readwrite,0.5
"""


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


@pytest.fixture
def work(tmp_path):
    (tmp_path / "k.jacc").write_text(VADD)
    np.arange(64, dtype="<f4").tofile(tmp_path / "a.bin")
    np.full(64, 0.5, dtype="<f4").tofile(tmp_path / "b.bin")
    np.zeros(64, dtype="<f4").tofile(tmp_path / "c.bin")
    (tmp_path / "chain.graph").write_text(CHAIN)
    return tmp_path


def test_compile_then_exec(work):
    code, _ = run("compile", str(work / "k.jacc"), "-o", str(work / "k.vka"))
    assert code == 0
    assert (work / "k.vka").read_text().startswith(".version 1.0\n.kernel vadd\n")
    binds = [f"--bind={n}={work / (n + '.bin')}" for n in "abc"]
    code, text = run("exec", str(work / "k.vka"), "--global", "64", "--group", "16", "--out", str(work / "o"), *binds)
    assert code == 0
    assert "c: 0.5 1.5 2.5" in text
    assert re.search(r"^global_stores 64$", text, re.M)
    got = np.fromfile(work / "o" / "c.bin", dtype="<f4")
    assert np.array_equal(got, np.arange(64, dtype=np.float32) + 0.5)


def test_interp_writes_outputs(work):
    binds = [f"--bind={n}={work / (n + '.bin')}" for n in "abc"]
    code, text = run("interp", str(work / "k.jacc"), "--out", str(work / "i"), *binds)
    assert code == 0 and "c: 0.5 1.5" in text
    assert np.array_equal(np.fromfile(work / "i" / "c.bin", dtype="<f4"), np.arange(64, dtype=np.float32) + 0.5)


def test_compile_dumps(work):
    code, text = run("compile", str(work / "k.jacc"), "--dump-after", "parallelize")
    assert code == 0 and "global_id(0)" in text
    code, text = run("compile", str(work / "k.jacc"), "--emit", "hir")
    assert "kernel vadd" in text
    code, text = run("compile", str(work / "k.jacc"), "--disable", "dce", "--emit", "lir")
    assert code == 0 and "$L" in text


def test_dump_schema_from_library(tmp_path):
    from jaccsim.bench.kernels import SOURCE

    (tmp_path / "lib.jacc").write_text(SOURCE)
    code, text = run("compile", str(tmp_path / "lib.jacc"), "--dump-schema", "Offset")
    assert code == 0
    assert "schema Offset size=16" in text
    assert re.search(r"bias\s+f32\s+8\s+4\s+r-", text)


def _counts(text):
    kinds = re.findall(r"^\d+: (\w+)", text, re.M)
    return kinds.count("COPY_IN"), kinds.count("COPY_OUT")


def test_graph_dump_actions_diff(work):
    code, naive = run("graph", str(work / "chain.graph"), "--dump-actions", "--no-optimize")
    assert code == 0 and _counts(naive) == (2, 2)
    code, opt = run("graph", str(work / "chain.graph"), "--dump-actions")
    assert code == 0 and _counts(opt) == (1, 1)
    assert "A in" not in opt  # dumping alone does not run


def test_graph_run_reports_transfers(work):
    code, text = run("graph", str(work / "chain.graph"))
    assert code == 0
    assert text.splitlines()[:3] == ["A in 4096", "A out 4096", "bytes_moved 8192"]
    code, full = run("graph", str(work / "chain.graph"), "--full-transfers")
    moved = int(re.search(r"bytes_moved (\d+)", full).group(1))
    assert moved > 8192


def test_bench_exit_code_and_csv(tmp_path):
    code, text = run("bench", "vadd", "--size", "1024", "--iterations", "1", "--csv", str(tmp_path / "r.csv"))
    assert code == 0
    assert "vadd" in text and "pass" in text
    assert (tmp_path / "r.csv").read_text().startswith("benchmark,size,iterations")


@pytest.mark.parametrize(
    "argv, needle",
    [
        (("exec", "{k}", "--global", "64"), "missing --bind"),
        (("compile", "{missing}"), "No such file"),
        (("bench", "fft"), "unknown benchmark"),
        (("bench", "vadd", "--matrix", "x.mtx"), "only applies to spmv"),
    ],
)
def test_errors_exit_2(work, capsys, argv, needle):
    (work / "k.vka").write_text(run("compile", str(work / "k.jacc"))[1])
    argv = [a.format(k=work / "k.vka", missing=work / "nope.jacc") for a in argv]
    code = main(argv, io.StringIO())
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("jaccsim: error:") and needle in err
