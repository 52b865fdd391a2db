"""Text-format ingestion: CSV (dense) and ``row col value`` triplets (CSR)."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..store import CsrBlock, DenseBlock, Store, create_store

_ROWS_PER_APPEND = 1 << 16


class IngestError(ValueError):
    """Malformed input file; the message names the offending line."""


def ingest_csv(src, out, *, value_dtype: str = "f32", chunk_rows: int = 1024,
               chunks_per_shard: int = 128, codec: str = "none") -> Store:
    src = Path(src)
    with open(src, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{src}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        store = create_store(out, header, "dense", value_dtype, chunk_rows, chunks_per_shard, codec)
        rows: list[list[float]] = []
        try:
            for line_no, rec in enumerate(reader, start=2):
                if not rec or (len(rec) == 1 and not rec[0].strip()):
                    continue
                if len(rec) != len(header):
                    raise IngestError(f"{src}:{line_no}: {len(rec)} fields, header has {len(header)}")
                try:
                    rows.append([float(x) for x in rec])
                except ValueError as exc:
                    raise IngestError(f"{src}:{line_no}: {exc}") from None
                if len(rows) >= _ROWS_PER_APPEND:
                    store.append(DenseBlock(np.asarray(rows).reshape(len(rows), len(header))))
                    rows = []
            if rows:
                store.append(DenseBlock(np.asarray(rows).reshape(len(rows), len(header))))
        except BaseException:
            store.close()
            raise
    store.close()
    return store


def read_triplets(src) -> tuple[int, int, np.ndarray, np.ndarray, np.ndarray]:
    """Parse a triplet file into sorted COO arrays; rejects duplicates and bad indices."""
    src = Path(src)
    rows, cols, vals, lines = [], [], [], []
    with open(src, encoding="utf-8") as fh:
        first = fh.readline()
        parts = first.split()
        if len(parts) != 2:
            raise IngestError(f"{src}:1: expected 'n_obs n_var'")
        try:
            n_obs, n_var = int(parts[0]), int(parts[1])
        except ValueError:
            raise IngestError(f"{src}:1: expected integer 'n_obs n_var'") from None
        if n_obs < 0 or n_var < 1:
            raise IngestError(f"{src}:1: bad shape {n_obs} x {n_var}")
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise IngestError(f"{src}:{line_no}: expected 'row col value'")
            try:
                r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise IngestError(f"{src}:{line_no}: unparseable entry {line.strip()!r}") from None
            if not (0 <= r < n_obs and 0 <= c < n_var):
                raise IngestError(f"{src}:{line_no}: entry ({r}, {c}) outside {n_obs} x {n_var}")
            rows.append(r)
            cols.append(c)
            vals.append(v)
            lines.append(line_no)
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((c, r))
    r, c = r[order], c[order]
    line_arr = np.asarray(lines, dtype=np.int64)[order]
    dup = np.flatnonzero((np.diff(r) == 0) & (np.diff(c) == 0))
    if dup.size:
        k = dup[0]
        a, b = sorted((int(line_arr[k]), int(line_arr[k + 1])))
        raise IngestError(f"{src}:{b}: duplicate entry ({r[k]}, {c[k]}), first given on line {a}")
    return n_obs, n_var, r, c, np.asarray(vals, dtype=np.float64)[order]


def ingest_triplet(src, out, *, value_dtype: str = "f32", index_dtype: str | None = None, chunk_rows: int = 1024,
                   chunks_per_shard: int = 128, codec: str = "none") -> Store:
    n_obs, n_var, r, c, v = read_triplets(src)
    names = [f"v{i}" for i in range(n_var)]
    store = create_store(out, names, "csr", value_dtype, chunk_rows, chunks_per_shard, codec, index_dtype)
    indptr = np.zeros(n_obs + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n_obs), out=indptr[1:])
    with store:
        if n_obs:
            store.append(CsrBlock(n_var, indptr, c, v))
    return store
