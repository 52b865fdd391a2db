from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._rng import RNG_NAME
from ..store import Block, IOStats, Store, concat_blocks, create_store, open_store
from .collection import DatasetCollection
from .plan import ShufflePlan
from .provenance import ProvenanceMap, ProvenanceWriter, read_provenance

log = logging.getLogger(__name__)


@dataclass
class ResidencyMeter:
    """Counts observation rows held by the shuffler (round buffer plus rows in flight)."""

    held: int = 0
    peak: int = 0

    def acquire(self, n: int) -> None:
        self.held += n
        self.peak = max(self.peak, self.held)

    def release(self, n: int) -> None:
        self.held -= n


@dataclass
class ShuffleStats:
    meter: ResidencyMeter = field(default_factory=ResidencyMeter)
    io: IOStats = field(default_factory=IOStats)
    # per round: chunk decodes performed vs distinct input chunks the round touches
    round_decodes: list[int] = field(default_factory=list)
    round_chunks: list[int] = field(default_factory=list)


def _split_round(plan: ShufflePlan, round_index: int, offsets: np.ndarray):
    """Per dataset index: local row ranges (in round order) and their round positions."""
    per_ds: dict[int, tuple[list[tuple[int, int]], list[tuple[int, int]]]] = {}
    pos = 0
    for b in plan.rounds[round_index]:
        lo, hi = plan.block_range(b)
        k = int(np.searchsorted(offsets, lo, side="right")) - 1
        while lo < hi:
            stop = min(hi, int(offsets[k + 1]))
            ranges, positions = per_ds.setdefault(k, ([], []))
            ranges.append((lo - int(offsets[k]), stop - int(offsets[k])))
            positions.append((pos, pos + stop - lo))
            pos += stop - lo
            lo = stop
            k += 1
    return per_ds, pos


def _gather(pieces: list[Block], piece_of: np.ndarray, row_of: np.ndarray, sel: np.ndarray) -> Block:
    parts, where = [], []
    owner = piece_of[sel]
    for p in np.unique(owner):
        mask = np.flatnonzero(owner == p)
        parts.append(pieces[p].take(row_of[sel[mask]]))
        where.append(mask)
    merged = concat_blocks(parts)
    if len(parts) == 1:
        return merged
    return merged.take(np.argsort(np.concatenate(where), kind="stable"))


def run_shuffle(
    collection: DatasetCollection,
    plan: ShufflePlan,
    out_path,
    *,
    chunk_rows: int = 1024,
    chunks_per_shard: int = 128,
    codec: str = "none",
    workers: int = 0,
    stats: ShuffleStats | None = None,
) -> tuple[Store, ProvenanceMap]:
    """Write a shuffled copy of ``collection`` to ``out_path`` following ``plan``.

    Each round reads its blocks (every input chunk decoded at most once per
    round), reprojects columns onto the unified vars, permutes the rows and
    appends them with matching provenance records. The output manifest is
    only published once every round has been written.
    """
    if plan.total_rows != collection.total_rows:
        raise ValueError(f"plan covers {plan.total_rows} rows, collection has {collection.total_rows}")
    if not collection.datasets:
        raise ValueError("collection is empty")
    out = Path(out_path)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output path {out} is not empty")
    stats = stats if stats is not None else ShuffleStats()
    meter = stats.meter

    first = collection.datasets[0][1].manifest
    out_store = create_store(
        out,
        collection.unified_var_names,
        layout=first.layout,
        value_dtype=first.value_dtype,
        chunk_rows=chunk_rows,
        chunks_per_shard=chunks_per_shard,
        codec=codec,
        index_dtype=first.index_dtype,
        deferred=True,
    )
    prov = ProvenanceWriter(out, chunk_rows, chunks_per_shard, codec)
    offsets = collection.offsets
    ids = np.asarray([d for d, _ in collection.datasets], dtype=np.uint32)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    try:
        for r in range(len(plan.rounds)):
            per_ds, n_round = _split_round(plan, r, offsets)
            order = sorted(per_ds)

            def load(k: int):
                did, store = collection.datasets[k]
                block, io = store.read_rows(per_ds[k][0])
                return collection.reproject(did, block), io, len(store.plan(per_ds[k][0]).chunks)

            loaded = list(pool.map(load, order)) if pool else [load(k) for k in order]
            pieces = [blk for blk, _, _ in loaded]
            meter.acquire(n_round)
            decodes = 0
            for _, io, _ in loaded:
                stats.io.add(io)
                decodes += io.chunk_decodes
            stats.round_decodes.append(decodes)
            stats.round_chunks.append(sum(n for _, _, n in loaded))

            piece_of = np.empty(n_round, dtype=np.int64)
            row_of = np.empty(n_round, dtype=np.int64)
            src_ds = np.empty(n_round, dtype=np.uint32)
            src_row = np.empty(n_round, dtype=np.uint64)
            for p, k in enumerate(order):
                local = 0
                for (lo, hi), (a, b) in zip(*per_ds[k]):
                    piece_of[a:b] = p
                    row_of[a:b] = np.arange(local, local + b - a)
                    src_ds[a:b] = ids[k]
                    src_row[a:b] = np.arange(lo, hi, dtype=np.uint64)
                    local += b - a

            perm = plan.round_permutation(r, n_round)
            for s in range(0, n_round, plan.block_rows):
                sel = perm[s:s + plan.block_rows]
                meter.acquire(sel.size)
                out_store.append(_gather(pieces, piece_of, row_of, sel))
                prov.append(src_ds[sel], src_row[sel])
                meter.release(sel.size)
            del pieces, loaded
            meter.release(n_round)
            log.debug("round %d/%d: %d rows", r + 1, len(plan.rounds), n_round)

        out_store.set_has_provenance(True)
        prov.close({
            "shuffle": {
                "rng": RNG_NAME,
                "seed": plan.seed,
                "block_rows": plan.block_rows,
                "buffer_rows": plan.buffer_rows,
                "rounds": len(plan.rounds),
                "join_mode": collection.join_mode,
                "sources": [
                    {"dataset_id": int(d), "path": str(s.path.resolve()), "n_obs": s.n_obs}
                    for d, s in collection.datasets
                ],
            }
        })
        out_store.close()
    except BaseException:
        out_store.abandon()
        raise
    finally:
        if pool:
            pool.shutdown()
    return open_store(out), read_provenance(out)
