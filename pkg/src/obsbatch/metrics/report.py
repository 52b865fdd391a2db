"""CSV output: report fields in declaration order, one data row per run."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, fields, is_dataclass
from typing import Iterable, TextIO

from .throughput import SweepRow


def _cell(value) -> str:
    if isinstance(value, list):
        return ";".join(_cell(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_rows(items: Iterable) -> tuple[list[str], list[list[str]]]:
    """Flatten reports (or sweep rows) into a header and string rows."""
    items = list(items)
    if not items:
        raise ValueError("no reports")
    header: list[str] = []
    rows: list[list[str]] = []
    for item in items:
        if isinstance(item, SweepRow):
            record = {"parameter": item.parameter, "value": item.value, "error": item.error or ""}
            if item.report is not None:
                record = {**asdict(item.report), **record}
            names = [f.name for f in fields(item.report)] if item.report is not None else []
            names += ["parameter", "value", "error"]
        elif is_dataclass(item):
            record = asdict(item)
            names = [f.name for f in fields(item)]
        else:
            raise TypeError(f"cannot tabulate {type(item).__name__}")
        for n in names:
            if n not in header:
                header.append(n)
        rows.append([_cell(record[n]) if n in record else "" for n in header])
    width = len(header)
    return header, [r + [""] * (width - len(r)) for r in rows]


def write_csv(items: Iterable, out: TextIO | None = None) -> str:
    header, rows = report_rows(items)
    buf = out if out is not None else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue() if out is None else ""
