"""Shard files: concatenated encoded chunk records followed by an index footer.

Footer layout (all little-endian)::

    chunks_per_shard x (offset: u64, nbytes: u64)   # empty slot -> offset = 2^64-1
    b"SHRDIDX1"

The footer sits at the end so a shard can be written in one forward pass.
"""

from __future__ import annotations

import mmap
import os
import threading
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SHARD_MAGIC = b"SHRDIDX1"
EMPTY_SLOT = 2**64 - 1
_ENTRY = np.dtype("<u8")
_ALIGN = 4096
_O_DIRECT = getattr(os, "O_DIRECT", 0)


class StoreCorruptError(IOError):
    """A shard or chunk failed validation; ``chunk_id`` names the culprit when known."""

    def __init__(self, message: str, *, chunk_id: int | None = None, shard_id: int | None = None):
        where = []
        if shard_id is not None:
            where.append(f"shard {shard_id}")
        if chunk_id is not None:
            where.append(f"chunk {chunk_id}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.chunk_id = chunk_id
        self.shard_id = shard_id


@dataclass
class IOStats:
    read_ops: int = 0
    bytes_read: int = 0
    chunk_decodes: int = 0
    index_reads: int = 0
    cache_bypass_requested: bool = False
    cache_bypass_honored: bool = False

    def add(self, other: IOStats) -> None:
        for f in fields(self):
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            setattr(self, f.name, (mine or theirs) if isinstance(mine, bool) else mine + theirs)


def footer_size(chunks_per_shard: int) -> int:
    return 16 * chunks_per_shard + len(SHARD_MAGIC)


def shard_file(shard_dir: Path, shard_id: int) -> Path:
    return Path(shard_dir) / f"s{shard_id:08d}.bin"


def read_footer(path: Path, chunks_per_shard: int, shard_id: int) -> np.ndarray:
    """Return the ``(chunks_per_shard, 2)`` offset/length table of a finalized shard."""
    fsize = footer_size(chunks_per_shard)
    try:
        size = os.path.getsize(path)
    except FileNotFoundError:
        raise StoreCorruptError("shard file is missing", shard_id=shard_id) from None
    if size < fsize:
        raise StoreCorruptError(f"shard is {size} bytes, shorter than its {fsize}-byte footer", shard_id=shard_id)
    with open(path, "rb") as fh:
        fh.seek(size - fsize)
        raw = fh.read(fsize)
    if raw[-len(SHARD_MAGIC):] != SHARD_MAGIC:
        raise StoreCorruptError("footer magic missing (truncated or unfinished shard)", shard_id=shard_id)
    table = np.frombuffer(raw[: -len(SHARD_MAGIC)], dtype=_ENTRY).reshape(chunks_per_shard, 2)
    data_end = size - fsize
    used = table[:, 0] != EMPTY_SLOT
    ends = table[used, 0].astype(object) + table[used, 1].astype(object)
    if any(e > data_end for e in ends):
        raise StoreCorruptError("footer points past the chunk data region", shard_id=shard_id)
    return table


class ShardWriter:
    """Streams chunk records into shard files, sealing each shard when full.

    ``next_chunk`` > 0 resumes an existing store: the shard holding that chunk
    is reopened, slots at or beyond it are discarded and the file truncated.
    """

    def __init__(self, shard_dir: Path, chunks_per_shard: int, next_chunk: int = 0):
        self.shard_dir = Path(shard_dir)
        self.shard_dir.mkdir(parents=True, exist_ok=True)
        self.chunks_per_shard = chunks_per_shard
        self.next_chunk = next_chunk
        self._fh = None
        self._table: np.ndarray | None = None
        slot = next_chunk % chunks_per_shard
        if slot:
            shard_id = next_chunk // chunks_per_shard
            path = shard_file(self.shard_dir, shard_id)
            table = read_footer(path, chunks_per_shard, shard_id).copy()
            table[slot:] = EMPTY_SLOT
            end = int(max(table[:slot, 0] + table[:slot, 1]))
            self._fh = open(path, "r+b")
            self._fh.truncate(end)
            self._fh.seek(end)
            self._table = table

    def write_chunk(self, chunk_id: int, record: bytes) -> None:
        if chunk_id != self.next_chunk:
            raise ValueError(f"chunks must be written in order: expected {self.next_chunk}, got {chunk_id}")
        shard_id, slot = divmod(chunk_id, self.chunks_per_shard)
        if self._fh is None:
            self._fh = open(shard_file(self.shard_dir, shard_id), "wb")
            self._table = np.full((self.chunks_per_shard, 2), EMPTY_SLOT, dtype=_ENTRY)
        offset = self._fh.tell()
        self._fh.write(record)
        self._table[slot] = (offset, len(record))
        self.next_chunk += 1
        if slot == self.chunks_per_shard - 1:
            self.seal()

    def seal(self) -> None:
        """Write the footer of the open shard (if any) and close it."""
        if self._fh is None:
            return
        self._fh.write(self._table.astype(_ENTRY).tobytes())
        self._fh.write(SHARD_MAGIC)
        self._fh.close()
        self._fh = None
        self._table = None


class ShardReader:
    """Thread-safe positional reader over the shards of one chunked array."""

    def __init__(self, shard_dir: Path, chunks_per_shard: int, chunk_count: int):
        self.shard_dir = Path(shard_dir)
        self.chunks_per_shard = chunks_per_shard
        self.chunk_count = chunk_count
        self._tables: dict[int, np.ndarray] = {}
        self._fds: dict[tuple[int, bool], int] = {}
        self._direct_ok = _O_DIRECT != 0
        self._lock = threading.Lock()

    def close(self) -> None:
        with self._lock:
            for fd in self._fds.values():
                os.close(fd)
            self._fds.clear()

    def table(self, shard_id: int, stats: IOStats | None = None) -> np.ndarray:
        with self._lock:
            table = self._tables.get(shard_id)
        if table is not None:
            return table
        table = read_footer(shard_file(self.shard_dir, shard_id), self.chunks_per_shard, shard_id)
        first = shard_id * self.chunks_per_shard
        n_expected = min(self.chunks_per_shard, self.chunk_count - first)
        missing = np.flatnonzero(table[:n_expected, 0] == EMPTY_SLOT)
        if missing.size:
            raise StoreCorruptError("footer has no entry for this chunk", shard_id=shard_id, chunk_id=first + int(missing[0]))
        if stats is not None:
            stats.index_reads += 1
        with self._lock:
            self._tables.setdefault(shard_id, table)
        return table

    def _fd(self, shard_id: int, direct: bool) -> int:
        key = (shard_id, direct)
        with self._lock:
            fd = self._fds.get(key)
            if fd is None:
                flags = os.O_RDONLY | (_O_DIRECT if direct else 0)
                fd = os.open(shard_file(self.shard_dir, shard_id), flags)
                self._fds[key] = fd
            return fd

    def _pread(self, shard_id: int, offset: int, length: int, cache_bypass: bool, stats: IOStats) -> bytes:
        stats.read_ops += 1
        if cache_bypass and self._direct_ok:
            try:
                data = self._pread_direct(shard_id, offset, length, stats)
                stats.cache_bypass_honored = True
                return data
            except OSError:
                # filesystem refuses O_DIRECT (e.g. tmpfs); stay buffered from now on
                self._direct_ok = False
        fd = self._fd(shard_id, False)
        data = os.pread(fd, length, offset)
        if cache_bypass and hasattr(os, "posix_fadvise"):
            os.posix_fadvise(fd, offset, length, os.POSIX_FADV_DONTNEED)
        stats.bytes_read += len(data)
        if len(data) != length:
            raise StoreCorruptError(f"short read: wanted {length} bytes at {offset}, got {len(data)}", shard_id=shard_id)
        return data

    def _pread_direct(self, shard_id: int, offset: int, length: int, stats: IOStats) -> bytes:
        fd = self._fd(shard_id, True)
        start = offset - offset % _ALIGN
        span = offset + length - start
        span += -span % _ALIGN
        buf = mmap.mmap(-1, span)
        try:
            got = os.preadv(fd, [buf], start)
            stats.bytes_read += got
            if got < offset + length - start:
                raise StoreCorruptError(f"short read: wanted {length} bytes at {offset}", shard_id=shard_id)
            return bytes(buf[offset - start: offset - start + length])
        finally:
            buf.close()

    def read_chunks(self, chunk_ids: Iterable[int], stats: IOStats, cache_bypass: bool = False) -> Iterator[tuple[int, bytes]]:
        """Yield ``(chunk_id, record)`` pairs, merging byte-adjacent chunks into one read."""
        by_shard: dict[int, list[int]] = {}
        for cid in sorted(set(chunk_ids)):
            if not 0 <= cid < self.chunk_count:
                raise IndexError(f"chunk {cid} out of range [0, {self.chunk_count})")
            by_shard.setdefault(cid // self.chunks_per_shard, []).append(cid)
        if cache_bypass:
            stats.cache_bypass_requested = True
        for shard_id, cids in by_shard.items():
            table = self.table(shard_id, stats)
            spans = sorted(
                (int(table[c % self.chunks_per_shard, 0]), int(table[c % self.chunks_per_shard, 1]), c) for c in cids
            )
            run: list[tuple[int, int, int]] = []
            for span in spans:
                if run and run[-1][0] + run[-1][1] != span[0]:
                    yield from self._read_run(shard_id, run, stats, cache_bypass)
                    run = []
                run.append(span)
            if run:
                yield from self._read_run(shard_id, run, stats, cache_bypass)

    def _read_run(self, shard_id, run, stats, cache_bypass):
        start = run[0][0]
        data = self._pread(shard_id, start, run[-1][0] + run[-1][1] - start, cache_bypass, stats)
        view = memoryview(data)
        for offset, nbytes, cid in run:
            yield cid, view[offset - start: offset - start + nbytes]
