"""Benchmark report tables."""

from __future__ import annotations

import csv
import io

COLUMNS = ("benchmark", "size", "iterations", "tasks", "correct", "max_abs_error", "instructions", "transfers", "bytes_moved")


def report_row(r) -> dict:
    return {
        "benchmark": r.name,
        "size": r.size,
        "iterations": r.iterations,
        "tasks": r.tasks,
        "correct": "pass" if r.passed else "FAIL",
        "max_abs_error": f"{r.max_error:.6g}",
        "instructions": r.instructions,
        "transfers": r.transfer_count,
        "bytes_moved": r.bytes_moved,
    }


def emit_report(reports, fmt: str = "console") -> str:
    """One row per report, as CSV or as an aligned table."""
    rows = [report_row(r) for r in reports]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "console":
        raise ValueError(f"unknown report format {fmt!r}")
    cells = [list(COLUMNS)] + [[str(row[c]) for c in COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(COLUMNS))]
    lines = []
    for n, r in enumerate(cells):
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
