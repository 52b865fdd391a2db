"""Provenance sidecar: one ``(dataset_id: u32, source_row: u64)`` record per output row.

Lives at ``<store>/provenance/`` and reuses the store's shard layout; each
chunk record holds the chunk's dataset ids followed by its source rows.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..store import codec as _codec
from ..store.shard import IOStats, ShardReader, ShardWriter, StoreCorruptError

PROVENANCE_DIR = "provenance"
_DS = np.dtype("<u4")
_ROW = np.dtype("<u8")


class MissingProvenanceError(FileNotFoundError):
    pass


@dataclass
class ProvenanceMap:
    dataset_ids: np.ndarray
    source_rows: np.ndarray
    meta: dict

    def __len__(self) -> int:
        return self.dataset_ids.size

    def global_rows(self, offsets_by_id: dict[int, int] | None = None) -> np.ndarray:
        """Source rows expressed in the collection's concatenated row space.

        Offsets default to the source order recorded by the shuffle.
        """
        if offsets_by_id is None:
            offsets_by_id, acc = {}, 0
            for src in self.meta["shuffle"]["sources"]:
                offsets_by_id[src["dataset_id"]] = acc
                acc += src["n_obs"]
        base = np.zeros(self.dataset_ids.size, dtype=np.int64)
        for did, off in offsets_by_id.items():
            base[self.dataset_ids == did] = off
        return base + self.source_rows.astype(np.int64)


class ProvenanceWriter:
    def __init__(self, store_root, chunk_rows: int, chunks_per_shard: int, codec: str):
        self.root = Path(store_root) / PROVENANCE_DIR
        self.chunk_rows = chunk_rows
        self.chunks_per_shard = chunks_per_shard
        self.codec = codec
        self._shards = ShardWriter(self.root / "shards", chunks_per_shard)
        self._ds: list[np.ndarray] = []
        self._rows: list[np.ndarray] = []
        self._pending = 0
        self.n_obs = 0

    def append(self, dataset_ids: np.ndarray, source_rows: np.ndarray) -> None:
        self._ds.append(np.asarray(dataset_ids, dtype=_DS))
        self._rows.append(np.asarray(source_rows, dtype=_ROW))
        self._pending += len(dataset_ids)
        if self._pending >= self.chunk_rows:
            self._emit(final=False)

    def _emit(self, final: bool) -> None:
        ds = np.concatenate(self._ds) if self._ds else np.zeros(0, _DS)
        rows = np.concatenate(self._rows) if self._rows else np.zeros(0, _ROW)
        pos = 0
        while ds.size - pos >= self.chunk_rows or (final and pos < ds.size):
            end = min(pos + self.chunk_rows, ds.size)
            record = ds[pos:end].tobytes() + rows[pos:end].tobytes()
            self._shards.write_chunk(self._shards.next_chunk, _codec.encode(self.codec, record))
            self.n_obs += end - pos
            pos = end
        self._ds, self._rows = [ds[pos:]], [rows[pos:]]
        self._pending = ds.size - pos

    def close(self, meta: dict) -> None:
        self._emit(final=True)
        self._shards.seal()
        manifest = {
            "format_version": 1,
            "n_obs": self.n_obs,
            "chunk_rows": self.chunk_rows,
            "chunks_per_shard": self.chunks_per_shard,
            "codec": self.codec,
            "record": ["dataset_id:u32", "source_row:u64"],
            **meta,
        }
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, self.root / "manifest.json")


def read_provenance(store_root) -> ProvenanceMap:
    root = Path(store_root) / PROVENANCE_DIR
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise MissingProvenanceError(f"no provenance sidecar at {root}")
    meta = json.loads(mpath.read_text(encoding="utf-8"))
    n_obs, cr, cps = meta["n_obs"], meta["chunk_rows"], meta["chunks_per_shard"]
    n_chunks = math.ceil(n_obs / cr)
    ds = np.empty(n_obs, dtype=_DS)
    rows = np.empty(n_obs, dtype=_ROW)
    reader = ShardReader(root / "shards", cps, n_chunks)
    try:
        for cid, record in reader.read_chunks(range(n_chunks), IOStats()):
            try:
                raw = _codec.decode(meta["codec"], record)
            except _codec.CodecError as exc:
                raise StoreCorruptError(f"provenance: {exc}", chunk_id=cid) from exc
            lo = cid * cr
            k = min(cr, n_obs - lo)
            if len(raw) != k * (_DS.itemsize + _ROW.itemsize):
                raise StoreCorruptError("provenance chunk length mismatch", chunk_id=cid)
            ds[lo:lo + k] = np.frombuffer(raw, dtype=_DS, count=k)
            rows[lo:lo + k] = np.frombuffer(raw, dtype=_ROW, count=k, offset=k * _DS.itemsize)
    finally:
        reader.close()
    return ProvenanceMap(ds, rows, meta)
