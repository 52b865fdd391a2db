from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import codec as _codec
from .blocks import Block, BlockError, CsrBlock, DenseBlock, concat_blocks
from .manifest import FORMAT_VERSION, MANIFEST_NAME, StoreManifest
from .shard import IOStats, ShardReader, ShardWriter, StoreCorruptError

SHARD_DIR = "shards"
INCOMPLETE_MARKER = ".incomplete"
_CSR_HEADER = struct.Struct("<IQ")


class StoreExistsError(FileExistsError):
    pass


class StoreModeError(RuntimeError):
    """Operation not allowed in the store's open mode."""


class RowRange(NamedTuple):
    start: int
    end: int


@dataclass
class ChunkRead:
    chunk_id: int
    # (within_chunk_start, within_chunk_end, output_offset), half-open
    slices: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class ReadPlan:
    chunks: list[ChunkRead]
    n_rows: int

    @property
    def chunk_ids(self) -> list[int]:
        return [c.chunk_id for c in self.chunks]


def _as_ranges(ranges: Iterable) -> list[RowRange]:
    return [RowRange(int(r[0]), int(r[1])) for r in ranges]


def plan_read(manifest: StoreManifest, ranges: Iterable) -> ReadPlan:
    """Map row ranges onto chunks, touching every needed chunk exactly once.

    Output rows follow the order in which ``ranges`` are given.
    """
    ranges = _as_ranges(ranges)
    n_obs, cr = manifest.n_obs, manifest.chunk_rows
    for r in ranges:
        if not 0 <= r.start < r.end <= n_obs:
            raise IndexError(f"range [{r.start}, {r.end}) outside [0, {n_obs}) or empty")
    ordered = sorted(ranges)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ValueError(f"ranges [{a.start}, {a.end}) and [{b.start}, {b.end}) overlap")

    chunks: dict[int, ChunkRead] = {}
    out = 0
    for r in ranges:
        pos = r.start
        while pos < r.end:
            cid = pos // cr
            base = cid * cr
            stop = min(r.end, base + cr)
            chunks.setdefault(cid, ChunkRead(cid)).slices.append((pos - base, stop - base, out))
            out += stop - pos
            pos = stop
    return ReadPlan([chunks[c] for c in sorted(chunks)], out)


def encode_chunk(manifest: StoreManifest, block: Block) -> bytes:
    if isinstance(block, DenseBlock):
        raw = np.ascontiguousarray(block.values, dtype=manifest.np_value_dtype).tobytes()
    else:
        ip = block.indptr.astype(np.int64)
        ip = ip - ip[0]
        nnz = int(ip[-1])
        idt = manifest.np_index_dtype
        if nnz > np.iinfo(idt).max:
            raise BlockError(f"chunk holds {nnz} entries, too many for index dtype {manifest.index_dtype}")
        raw = b"".join((
            _CSR_HEADER.pack(block.n_rows, nnz),
            ip.astype(idt).tobytes(),
            block.indices.astype(idt).tobytes(),
            block.data.astype(manifest.np_value_dtype).tobytes(),
        ))
    return _codec.encode(manifest.codec, raw)


def decode_chunk(manifest: StoreManifest, chunk_id: int, record) -> Block:
    try:
        raw = _codec.decode(manifest.codec, record)
    except _codec.CodecError as exc:
        raise StoreCorruptError(str(exc), chunk_id=chunk_id) from exc
    n_rows = manifest.rows_in_chunk(chunk_id)
    vdt = manifest.np_value_dtype
    if manifest.layout == "dense":
        expected = n_rows * manifest.n_var * vdt.itemsize
        if len(raw) != expected:
            raise StoreCorruptError(f"dense chunk is {len(raw)} bytes, expected {expected}", chunk_id=chunk_id)
        return DenseBlock(np.frombuffer(raw, dtype=vdt).reshape(n_rows, manifest.n_var))

    if len(raw) < _CSR_HEADER.size:
        raise StoreCorruptError("csr chunk shorter than its header", chunk_id=chunk_id)
    rec_rows, nnz = _CSR_HEADER.unpack_from(raw)
    idt = manifest.np_index_dtype
    expected = _CSR_HEADER.size + (n_rows + 1 + nnz) * idt.itemsize + nnz * vdt.itemsize
    if rec_rows != n_rows or len(raw) != expected:
        raise StoreCorruptError(
            f"csr chunk header/length mismatch (rows {rec_rows} vs {n_rows}, {len(raw)} vs {expected} bytes)",
            chunk_id=chunk_id,
        )
    pos = _CSR_HEADER.size
    indptr = np.frombuffer(raw, dtype=idt, count=n_rows + 1, offset=pos)
    pos += (n_rows + 1) * idt.itemsize
    indices = np.frombuffer(raw, dtype=idt, count=nnz, offset=pos)
    pos += nnz * idt.itemsize
    data = np.frombuffer(raw, dtype=vdt, count=nnz, offset=pos)
    if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr.astype(np.int64)) < 0):
        raise StoreCorruptError("csr chunk has an invalid indptr", chunk_id=chunk_id)
    return CsrBlock(manifest.n_var, indptr, indices, data)


def _write_manifest(root: Path, manifest: StoreManifest) -> None:
    tmp = root / (MANIFEST_NAME + ".tmp")
    tmp.write_text(manifest.to_json(), encoding="utf-8")
    os.replace(tmp, root / MANIFEST_NAME)


def read_manifest(path) -> StoreManifest:
    mpath = Path(path) / MANIFEST_NAME
    if not mpath.exists():
        if (Path(path) / INCOMPLETE_MARKER).exists():
            raise StoreCorruptError(f"{path} is an unfinished store (writer did not complete)")
        raise FileNotFoundError(f"no store manifest at {mpath}")
    return StoreManifest.from_json(mpath.read_text(encoding="utf-8"))


class Store:
    """A chunked, sharded observation matrix on disk.

    Open with :func:`create_store` (fresh, writable), or :func:`open_store`
    with ``mode="r"`` (shareable across reader threads) or ``mode="a"``
    (single writer appending rows).
    """

    def __init__(self, path, manifest: StoreManifest, mode: str, *, deferred: bool = False):
        self.path = Path(path)
        self.manifest = manifest
        self.mode = mode
        self._deferred = deferred
        self._closed = False
        self._reader: ShardReader | None = None
        self._writer: ShardWriter | None = None
        self._pending: list[Block] = []
        self._pending_rows = 0
        if mode == "r":
            self._reader = ShardReader(self.shard_dir, manifest.chunks_per_shard, manifest.chunk_count)
        else:
            self._start_writer()

    # --- properties -----------------------------------------------------
    @property
    def shard_dir(self) -> Path:
        return self.path / SHARD_DIR

    @property
    def n_obs(self) -> int:
        return self.manifest.n_obs + self._pending_rows

    @property
    def n_var(self) -> int:
        return self.manifest.n_var

    @property
    def layout(self) -> str:
        return self.manifest.layout

    @property
    def var_names(self) -> list[str]:
        return self.manifest.var_names

    def __repr__(self) -> str:
        m = self.manifest
        return f"Store({str(self.path)!r}, {m.layout}, {self.n_obs}x{m.n_var}, {m.value_dtype}, mode={self.mode!r})"

    def __enter__(self) -> Store:
        return self

    def __exit__(self, exc_type, *exc) -> None:
        self.close()

    # --- writing --------------------------------------------------------
    def _start_writer(self) -> None:
        m = self.manifest
        full = m.n_obs // m.chunk_rows
        if m.n_obs % m.chunk_rows:
            # reopen the trailing partial chunk so it can be filled up
            reader = ShardReader(self.shard_dir, m.chunks_per_shard, m.chunk_count)
            try:
                (cid, record), = reader.read_chunks([full], IOStats())
                tail = decode_chunk(m, cid, bytes(record))
            finally:
                reader.close()
            self._pending = [_own(tail)]
            self._pending_rows = tail.n_rows
            self.manifest = replace(m, n_obs=full * m.chunk_rows)
        self._writer = ShardWriter(self.shard_dir, m.chunks_per_shard, next_chunk=full)

    def append(self, block: Block) -> int:
        """Append rows; returns the new row count."""
        if self.mode == "r" or self._closed:
            raise StoreModeError(f"store {self.path} is not open for writing")
        m = self.manifest
        if block.n_var != m.n_var:
            raise BlockError(f"block has {block.n_var} columns, store has {m.n_var}")
        if isinstance(block, DenseBlock):
            if m.layout != "dense":
                raise BlockError("cannot append a dense block to a csr store")
        elif isinstance(block, CsrBlock):
            if m.layout != "csr":
                raise BlockError("cannot append a csr block to a dense store")
            block.validate()
        else:
            raise TypeError(f"expected DenseBlock or CsrBlock, got {type(block).__name__}")
        if block.n_rows == 0:
            return self.n_obs
        self._pending.append(block)
        self._pending_rows += block.n_rows
        if self._pending_rows >= m.chunk_rows:
            self._emit_full_chunks()
        return self.n_obs

    def _emit_full_chunks(self) -> None:
        m = self.manifest
        merged = concat_blocks(self._pending)
        n_full = merged.n_rows // m.chunk_rows
        for k in range(n_full):
            chunk = merged.slice(k * m.chunk_rows, (k + 1) * m.chunk_rows)
            self._writer.write_chunk(self.manifest.chunk_count, encode_chunk(m, chunk))
            self.manifest = replace(self.manifest, n_obs=self.manifest.n_obs + m.chunk_rows)
        rest = merged.n_rows - n_full * m.chunk_rows
        self._pending = [_own(merged.slice(merged.n_rows - rest, merged.n_rows))] if rest else []
        self._pending_rows = rest

    def flush(self) -> None:
        """Write the partial tail chunk, seal the open shard and publish the manifest.

        After flushing, further appends rewrite the tail chunk in place.
        """
        if self.mode == "r":
            return
        if self._pending_rows:
            tail = concat_blocks(self._pending)
            n_obs = self.manifest.n_obs + tail.n_rows
            m = replace(self.manifest, n_obs=n_obs)
            self._writer.write_chunk(m.chunk_count - 1, encode_chunk(m, tail))
            self.manifest = m
            self._pending, self._pending_rows = [], 0
        self._writer.seal()
        _write_manifest(self.path, self.manifest)
        if self._deferred:
            (self.path / INCOMPLETE_MARKER).unlink(missing_ok=True)
            self._deferred = False
        if not self._closed:
            self._start_writer()

    def set_has_provenance(self, value: bool = True) -> None:
        if self.mode == "r":
            raise StoreModeError("read-only store")
        self.manifest = replace(self.manifest, has_provenance=value)

    def close(self) -> None:
        if self._closed:
            return
        if self.mode != "r":
            self._closed = True
            self.flush()
        else:
            self._closed = True
            self._reader.close()

    def abandon(self) -> None:
        """Drop a writer without publishing (leaves any deferred store marked unfinished)."""
        if self._writer is not None:
            self._writer.seal()
        self._closed = True

    # --- reading --------------------------------------------------------
    def plan(self, ranges: Iterable) -> ReadPlan:
        return plan_read(self.manifest, ranges)

    def read_rows(self, ranges: Iterable, cache_bypass: bool = False) -> tuple[Block, IOStats]:
        if self.mode != "r":
            raise StoreModeError("store is open for writing; close it and reopen read-only")
        plan = self.plan(ranges)
        m = self.manifest
        stats = IOStats()
        if plan.n_rows == 0:
            return _empty_block(m), stats
        by_id = {c.chunk_id: c for c in plan.chunks}
        dense = m.layout == "dense"
        if dense:
            out = np.empty((plan.n_rows, m.n_var), dtype=m.np_value_dtype)
        else:
            pieces: list[tuple[int, CsrBlock]] = []
        for cid, record in self._reader.read_chunks(by_id, stats, cache_bypass):
            chunk = decode_chunk(m, cid, record)
            stats.chunk_decodes += 1
            for lo, hi, dst in by_id[cid].slices:
                if dense:
                    out[dst:dst + hi - lo] = chunk.values[lo:hi]
                else:
                    pieces.append((dst, _own(chunk.slice(lo, hi))))
        if dense:
            return DenseBlock(out), stats
        pieces.sort(key=lambda p: p[0])
        return concat_blocks([p[1] for p in pieces]), stats

    def read_all(self, cache_bypass: bool = False) -> Block:
        if self.n_obs == 0:
            return _empty_block(self.manifest)
        return self.read_rows([(0, self.n_obs)], cache_bypass)[0]


def _own(block: Block) -> Block:
    """Copy a block so it no longer aliases a decoded chunk buffer."""
    if isinstance(block, DenseBlock):
        return DenseBlock(block.values.copy())
    return CsrBlock(block.n_var, block.indptr.astype(np.int64), block.indices.copy(), block.data.copy())


def _empty_block(m: StoreManifest) -> Block:
    if m.layout == "dense":
        return DenseBlock.empty(m.n_var, m.np_value_dtype)
    return CsrBlock.empty(m.n_var, m.np_value_dtype, m.np_index_dtype)


def create_store(
    path,
    var_names: Sequence[str],
    layout: str = "dense",
    value_dtype: str = "f32",
    chunk_rows: int = 1024,
    chunks_per_shard: int = 128,
    codec: str = "none",
    index_dtype: str | None = None,
    *,
    deferred: bool = False,
) -> Store:
    """Create an empty writable store at ``path``.

    With ``deferred=True`` the manifest is only written when the store is
    closed; until then an ``.incomplete`` marker flags the directory.
    """
    root = Path(path)
    if (root / MANIFEST_NAME).exists() or (root / INCOMPLETE_MARKER).exists():
        raise StoreExistsError(f"{root} already holds a store; refusing to overwrite")
    if layout == "csr" and index_dtype is None:
        index_dtype = "u32" if len(var_names) <= 2**32 else "u64"
    manifest = StoreManifest(
        format_version=FORMAT_VERSION,
        layout=layout,
        n_obs=0,
        n_var=len(var_names),
        value_dtype=value_dtype,
        index_dtype=index_dtype,
        chunk_rows=int(chunk_rows),
        chunks_per_shard=int(chunks_per_shard),
        codec=codec,
        var_names=[str(v) for v in var_names],
        has_provenance=False,
    )
    root.mkdir(parents=True, exist_ok=True)
    (root / SHARD_DIR).mkdir(exist_ok=True)
    if deferred:
        (root / INCOMPLETE_MARKER).touch()
    else:
        _write_manifest(root, manifest)
    return Store(root, manifest, "w", deferred=deferred)


def open_store(path, mode: str = "r") -> Store:
    if mode not in ("r", "a"):
        raise ValueError(f"mode must be 'r' or 'a', got {mode!r}")
    return Store(path, read_manifest(path), mode)


def append_rows(store: Store, block: Block) -> int:
    return store.append(block)


def read_rows(store: Store, ranges: Iterable, cache_bypass: bool = False) -> tuple[Block, IOStats]:
    return store.read_rows(ranges, cache_bypass)
