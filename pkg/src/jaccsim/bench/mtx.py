"""Matrix Market coordinate files and the synthetic banded matrix."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument


def read_mtx(path: str) -> tuple:
    """(rowptr i32, cols i32, vals f32, (rows, cols)) for a coordinate .mtx file.

    Handles `real`, `integer` and `pattern` fields, and expands `symmetric`
    storage to both triangles. Duplicate entries are summed.
    """
    with open(path) as f:
        header = f.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[1].lower() != "matrix":
            raise InvalidArgument(f"{path}: not a Matrix Market file")
        fmt, field, symmetry = (h.lower() for h in header[2:5])
        if fmt != "coordinate":
            raise InvalidArgument(f"{path}: only coordinate format is supported, got {fmt}")
        if field not in ("real", "integer", "pattern"):
            raise InvalidArgument(f"{path}: unsupported field type {field}")
        if symmetry not in ("general", "symmetric"):
            raise InvalidArgument(f"{path}: unsupported symmetry {symmetry}")
        line = f.readline()
        while line.startswith("%") or not line.strip():
            line = f.readline()
            if not line:
                raise InvalidArgument(f"{path}: missing size line")
        try:
            nrows, ncols, nnz = (int(x) for x in line.split())
        except ValueError:
            raise InvalidArgument(f"{path}: bad size line {line.strip()!r}") from None
        body = np.loadtxt(f, ndmin=2, comments="%") if nnz else np.zeros((0, 3))
    if len(body) != nnz:
        raise InvalidArgument(f"{path}: header promises {nnz} entries, found {len(body)}")
    r = body[:, 0].astype(np.int64) - 1
    c = body[:, 1].astype(np.int64) - 1
    v = np.ones(nnz) if field == "pattern" else body[:, 2]
    if nnz and (r.min() < 0 or c.min() < 0 or r.max() >= nrows or c.max() >= ncols):
        raise InvalidArgument(f"{path}: entry outside the {nrows}x{ncols} matrix")
    if symmetry == "symmetric":
        off = r != c
        r, c, v = np.concatenate([r, c[off]]), np.concatenate([c, r[off]]), np.concatenate([v, v[off]])
    dense_key = r * ncols + c
    keys, inv = np.unique(dense_key, return_inverse=True)
    sums = np.zeros(len(keys))
    np.add.at(sums, inv, v)
    rows = keys // ncols
    cols = (keys % ncols).astype(np.int32)
    rowptr = np.zeros(nrows + 1, np.int64)
    np.add.at(rowptr, rows + 1, 1)
    return np.cumsum(rowptr).astype(np.int32), cols, sums.astype(np.float32), (nrows, ncols)


def banded_csr(n: int, half: int, rng) -> tuple:
    """Square CSR matrix with random values on the band |i - j| <= half."""
    rowptr = [0]
    cols = []
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        cols.extend(range(lo, hi))
        rowptr.append(len(cols))
    vals = rng.random(len(cols), dtype=np.float32)
    return np.asarray(rowptr, np.int32), np.asarray(cols, np.int32), vals


def write_mtx(path: str, rowptr, cols, vals, shape) -> None:
    """Write CSR data as a `coordinate real general` file."""
    with open(path, "w") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        f.write(f"{shape[0]} {shape[1]} {len(vals)}\n")
        for r in range(shape[0]):
            for p in range(rowptr[r], rowptr[r + 1]):
                f.write(f"{r + 1} {cols[p] + 1} {float(vals[p])!r}\n")
