from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..store import Block, CsrBlock, DenseBlock, Store

log = logging.getLogger(__name__)

JOIN_MODES = ("inner", "outer")


class CollectionError(ValueError):
    pass


class MismatchedVarWarning(UserWarning):
    """A column is present in some but not all datasets of a collection."""


@dataclass
class DatasetCollection:
    """Lazily concatenated stores along the observation axis."""

    join_mode: str = "outer"
    datasets: list[tuple[int, Store]] = field(default_factory=list)
    unified_var_names: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    _warned: set[str] = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        if self.join_mode not in JOIN_MODES:
            raise CollectionError(f"join_mode must be one of {JOIN_MODES}, got {self.join_mode!r}")

    @property
    def layout(self) -> str | None:
        return self.datasets[0][1].layout if self.datasets else None

    @property
    def value_dtype(self) -> str | None:
        return self.datasets[0][1].manifest.value_dtype if self.datasets else None

    @property
    def total_rows(self) -> int:
        return sum(s.n_obs for _, s in self.datasets)

    @property
    def offsets(self) -> np.ndarray:
        """Global row offset of every dataset, plus the total at the end."""
        return np.concatenate([[0], np.cumsum([s.n_obs for _, s in self.datasets], dtype=np.int64)]).astype(np.int64)

    def store_for(self, dataset_id: int) -> Store:
        for did, store in self.datasets:
            if did == dataset_id:
                return store
        raise KeyError(f"no dataset with id {dataset_id}")

    def add(self, store: Store, dataset_id: int | None = None) -> DatasetCollection:
        if self.datasets:
            first = self.datasets[0][1]
            if store.layout != first.layout:
                raise CollectionError(f"layout mismatch: collection is {first.layout}, store is {store.layout}")
            if store.manifest.value_dtype != first.manifest.value_dtype:
                raise CollectionError(
                    f"value_dtype mismatch: collection is {first.manifest.value_dtype}, store is {store.manifest.value_dtype}"
                )
        if dataset_id is None:
            dataset_id = max((d for d, _ in self.datasets), default=-1) + 1
        if not 0 <= dataset_id < 2**32:
            raise CollectionError(f"dataset_id must fit in u32, got {dataset_id}")
        if any(d == dataset_id for d, _ in self.datasets):
            raise CollectionError(f"duplicate dataset_id {dataset_id}")
        self.datasets.append((dataset_id, store))
        self._unify()
        return self

    def _unify(self) -> None:
        name_sets = [s.var_names for _, s in self.datasets]
        present = [set(names) for names in name_sets]
        everywhere = set.intersection(*present)
        seen: dict[str, None] = {}
        for names in name_sets:
            seen.update(dict.fromkeys(names))
        if self.join_mode == "inner":
            self.unified_var_names = [v for v in name_sets[0] if v in everywhere]
        else:
            self.unified_var_names = list(seen)
        for name in seen:
            if name not in everywhere and name not in self._warned:
                owners = [str(d) for (d, _), names in zip(self.datasets, present) if name in names]
                msg = f"var {name!r} is present only in dataset(s) {', '.join(owners)} of {len(self.datasets)}"
                self._warned.add(name)
                self.warnings.append(msg)
                warnings.warn(msg, MismatchedVarWarning, stacklevel=3)
                log.info(msg)

    def column_map(self, dataset_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(source columns, unified columns) for the vars a dataset contributes."""
        store = self.store_for(dataset_id)
        pos = {v: i for i, v in enumerate(self.unified_var_names)}
        src, dst = [], []
        for i, v in enumerate(store.var_names):
            if v in pos:
                src.append(i)
                dst.append(pos[v])
        return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)

    def reproject(self, dataset_id: int, block: Block) -> Block:
        """Rewrite a dataset's rows onto the unified columns; missing columns become 0 / absent."""
        store = self.store_for(dataset_id)
        if store.var_names == self.unified_var_names:
            return block
        src, dst = self.column_map(dataset_id)
        width = len(self.unified_var_names)
        if isinstance(block, DenseBlock):
            out = np.zeros((block.n_rows, width), dtype=block.values.dtype)
            out[:, dst] = block.values[:, src]
            return DenseBlock(out)
        lookup = np.full(block.n_var, -1, dtype=np.int64)
        lookup[src] = dst
        new_cols = lookup[block.indices.astype(np.int64)]
        rows = np.repeat(np.arange(block.n_rows), block.row_lengths())
        keep = new_cols >= 0
        rows, new_cols, data = rows[keep], new_cols[keep], block.data[keep]
        order = np.lexsort((new_cols, rows))
        indptr = np.zeros(block.n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=block.n_rows), out=indptr[1:])
        return CsrBlock(width, indptr, new_cols[order].astype(block.indices.dtype), data[order])


def add_dataset(collection: DatasetCollection, store: Store, dataset_id: int | None = None) -> DatasetCollection:
    return collection.add(store, dataset_id)
