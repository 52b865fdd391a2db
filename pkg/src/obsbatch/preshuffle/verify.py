from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .._rng import VERIFY_SAMPLE, derive_rng
from ..store import Block, CsrBlock, DenseBlock, Store, concat_blocks, open_store
from .collection import DatasetCollection
from .provenance import ProvenanceMap, read_provenance

_MAX_LISTED = 20
_BATCH = 1 << 15


@dataclass
class VerifyReport:
    n_rows: int
    checked_rows: int = 0
    violations: list[str] = field(default_factory=list)
    mismatched_rows: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def row_runs(rows: np.ndarray) -> list[tuple[int, int]]:
    """Collapse sorted, unique row ids into half-open ranges."""
    if rows.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(rows) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [rows.size]])
    return [(int(rows[a]), int(rows[b - 1]) + 1) for a, b in zip(starts, ends)]


def rows_equal(a: Block, b: Block) -> np.ndarray:
    """Per-row equality mask of two equally shaped blocks."""
    if isinstance(a, DenseBlock):
        x, y = a.values, b.values
        same = x == y
        if np.issubdtype(x.dtype, np.floating):
            same |= np.isnan(x) & np.isnan(y)
        return same.all(axis=1) if x.shape[1] else np.ones(x.shape[0], dtype=bool)
    assert isinstance(a, CsrBlock) and isinstance(b, CsrBlock)
    la, lb = a.row_lengths(), b.row_lengths()
    ok = la == lb
    if not ok.any():
        return ok
    keep = np.repeat(ok, la)
    kb = np.repeat(ok, lb)
    entry_ok = (a.indices[keep].astype(np.int64) == b.indices[kb].astype(np.int64)) & (a.data[keep] == b.data[kb])
    rows = np.repeat(np.flatnonzero(ok), la[ok])
    bad = np.zeros(a.n_rows, dtype=bool)
    bad[rows[~entry_ok]] = True
    return ok & ~bad


def verify_shuffle(
    store: Store,
    provenance: ProvenanceMap | None = None,
    collection: DatasetCollection | None = None,
    samples: int = 1000,
    seed: int = 0,
) -> VerifyReport:
    """Check that ``store`` is a faithful shuffle of ``collection``.

    Bijectivity is checked on the whole provenance map; row values on
    ``samples`` randomly chosen output rows (all rows if ``samples`` >= n_obs).
    Missing ``provenance``/``collection`` are reloaded from the sidecar.
    """
    if provenance is None:
        provenance = read_provenance(store.path)
    if collection is None:
        collection = collection_from_provenance(provenance)
    report = VerifyReport(n_rows=store.n_obs)
    v = report.violations

    if len(provenance) != store.n_obs:
        v.append(f"provenance has {len(provenance)} records, store has {store.n_obs} rows")
    if store.var_names != collection.unified_var_names:
        v.append("store var_names differ from the collection's unified var_names")
    offsets = collection.offsets
    index_of = {did: k for k, (did, _) in enumerate(collection.datasets)}
    total = int(offsets[-1])
    ds_idx = np.full(len(provenance), -1, dtype=np.int64)
    for did, k in index_of.items():
        ds_idx[provenance.dataset_ids == did] = k
    unknown = np.flatnonzero(ds_idx < 0)
    if unknown.size:
        v.append(f"unknown dataset ids at output rows {unknown[:_MAX_LISTED].tolist()}")
    sizes = np.diff(offsets)
    valid = ds_idx >= 0
    out_of_range = np.flatnonzero(valid & (provenance.source_rows >= sizes[np.maximum(ds_idx, 0)]))
    if out_of_range.size:
        v.append(f"source rows out of range at output rows {out_of_range[:_MAX_LISTED].tolist()}")
        valid[out_of_range] = False
    glob = offsets[np.maximum(ds_idx, 0)] + provenance.source_rows.astype(np.int64)
    counts = np.bincount(glob[valid], minlength=total)
    dup_sources = np.flatnonzero(counts > 1)
    if dup_sources.size:
        dup_out = np.flatnonzero(valid & np.isin(glob, dup_sources))
        v.append(
            f"not a bijection: {dup_sources.size} source rows claimed more than once "
            f"(output rows {dup_out[:_MAX_LISTED].tolist()})"
        )
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        v.append(f"not a bijection: {missing.size} source rows never emitted (global rows {missing[:_MAX_LISTED].tolist()})")

    n_check = min(samples, store.n_obs)
    if n_check >= store.n_obs:
        picked = np.arange(store.n_obs)
    else:
        picked = np.sort(derive_rng(seed, VERIFY_SAMPLE).choice(store.n_obs, n_check, replace=False))
    picked = picked[valid[picked]] if picked.size else picked
    for s in range(0, picked.size, _BATCH):
        sel = picked[s:s + _BATCH]
        got, _ = store.read_rows(row_runs(sel))
        want = _source_rows(collection, ds_idx[sel], provenance.source_rows[sel].astype(np.int64))
        bad = sel[~rows_equal(got, want)]
        report.mismatched_rows.extend(int(i) for i in bad)
        report.checked_rows += sel.size
    if report.mismatched_rows:
        v.append(
            f"{len(report.mismatched_rows)} output rows differ from their provenance source "
            f"(output rows {report.mismatched_rows[:_MAX_LISTED]})"
        )
    return report


def _source_rows(collection: DatasetCollection, ds_idx: np.ndarray, rows: np.ndarray) -> Block:
    parts, where = [], []
    for k in np.unique(ds_idx):
        mask = np.flatnonzero(ds_idx == k)
        uniq, inverse = np.unique(rows[mask], return_inverse=True)
        did, src = collection.datasets[int(k)]
        block, _ = src.read_rows(row_runs(uniq))
        parts.append(collection.reproject(did, block).take(inverse))
        where.append(mask)
    merged = concat_blocks(parts)
    return merged if len(parts) == 1 else merged.take(np.argsort(np.concatenate(where), kind="stable"))


def collection_from_provenance(provenance: ProvenanceMap) -> DatasetCollection:
    info = provenance.meta["shuffle"]
    collection = DatasetCollection(join_mode=info["join_mode"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for src in info["sources"]:
            collection.add(open_store(src["path"]), dataset_id=src["dataset_id"])
    return collection
