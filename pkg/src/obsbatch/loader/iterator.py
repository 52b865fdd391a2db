from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .._rng import EPOCH_BUFFER, derive_rng
from ..store import Block, IOStats, Store, concat_blocks
from .config import EpochPlan, LoaderConfig, plan_epoch
from .pool import CsrPool, DensePool, IndexPool

log = logging.getLogger(__name__)


class LoaderIOError(IOError):
    """Fetching a planned block failed."""

    def __init__(self, block_index: int, row_range: tuple[int, int], cause: BaseException):
        super().__init__(f"fetch of plan block {block_index} (rows [{row_range[0]}, {row_range[1]})) failed: {cause}")
        self.block_index = block_index
        self.row_range = row_range


@dataclass
class MiniBatch:
    block: Block
    global_indices: np.ndarray
    epoch_index: int
    batch_index: int

    @property
    def n_rows(self) -> int:
        return self.global_indices.size


class BatchIterator:
    """One epoch of shuffled minibatches.

    Fetch blocks arrive in plan order into a bounded row buffer; each emitted
    row is drawn uniformly from the occupied slots and its slot is backfilled
    with the newest row (swap-with-last). Whenever a whole block fits below
    capacity the next planned block is fetched. Prefetching only changes
    *when* blocks are read, never the emitted stream.
    """

    def __init__(self, store: Store | None, config: LoaderConfig, epoch_index: int = 0, *, n_obs: int | None = None):
        self.store = store
        self.config = config
        self.epoch_index = epoch_index
        if store is not None:
            n_obs = store.n_obs
        elif n_obs is None:
            raise ValueError("index-only iteration needs n_obs")
        self.plan: EpochPlan = plan_epoch(n_obs, config, epoch_index)
        self._prefix = np.concatenate([[0], np.cumsum(self.plan.sizes)])
        self.blocks_fetched = 0
        self.max_occupancy = 0
        self.io = IOStats()
        self._rng = derive_rng(config.seed, EPOCH_BUFFER, epoch_index)
        capacity = config.buffer_capacity_rows + config.fetch_block_rows
        if store is None:
            self._pool = IndexPool(capacity)
        elif store.layout == "dense":
            m = store.manifest
            self._pool = DensePool(capacity, m.n_var, m.np_value_dtype)
        else:
            m = store.manifest
            self._pool = CsrPool(capacity, m.n_var, m.np_value_dtype, m.np_index_dtype)
        self._slots: list[int] = []
        self._batch_index = 0
        self._started = False
        self._done = False
        self._queue: deque[tuple[int, Future]] = deque()
        self._submitted = 0
        depth = config.prefetch_depth if store is not None else 0
        self._executor = ThreadPoolExecutor(max_workers=depth, thread_name_prefix="obsbatch-fetch") if depth else None

    @classmethod
    def indices_only(cls, n_obs: int, config: LoaderConfig, epoch_index: int = 0) -> BatchIterator:
        """Run the sampling schedule without touching storage; batches carry only global indices."""
        return cls(None, config, epoch_index, n_obs=n_obs)

    # --- fetching -------------------------------------------------------
    def _blocks_left(self) -> bool:
        return self.blocks_fetched < len(self.plan)

    def _read(self, index: int):
        return self.store.read_rows([self.plan.block(index)], cache_bypass=self.config.cache_bypass)

    def _top_up(self) -> None:
        while self._submitted < len(self.plan) and len(self._queue) < self.config.prefetch_depth:
            self._queue.append((self._submitted, self._executor.submit(self._read, self._submitted)))
            self._submitted += 1

    def _fetch_until(self, target: int) -> None:
        """Fetch the fewest next blocks that bring occupancy to at least ``target``."""
        first = self.blocks_fetched
        want = self._prefix[first] + target - len(self._slots)
        stop = min(int(np.searchsorted(self._prefix, want, side="left")), len(self.plan))
        if self.store is None:
            starts, sizes = self.plan.starts[first:stop], self.plan.sizes[first:stop]
            offsets = np.repeat(starts - (self._prefix[first:stop] - self._prefix[first]), sizes)
            rows = offsets + np.arange(self._prefix[stop] - self._prefix[first])
            self._slots.extend(self._pool.put(None, rows.astype(np.uint64)))
            self.blocks_fetched = stop
        else:
            for index in range(first, stop):
                self._fetch_one(index)
        self.max_occupancy = max(self.max_occupancy, len(self._slots))

    def _fetch_one(self, index: int) -> None:
        rng = self.plan.block(index)
        try:
            if self._executor is None:
                block, io = self._read(index)
            else:
                self._top_up()
                queued, future = self._queue.popleft()
                assert queued == index
                block, io = future.result()
                self._top_up()
        except Exception as exc:
            self.close()
            raise LoaderIOError(index, tuple(rng), exc) from exc
        self.blocks_fetched += 1
        self.io.add(io)
        self._slots.extend(self._pool.put(block, np.arange(rng.start, rng.end, dtype=np.uint64)))

    # --- emission -------------------------------------------------------
    def _draw(self, count: int) -> list[int]:
        slots = self._slots
        n = len(slots)
        out = []
        for u in self._rng.random(count).tolist():
            j = int(u * n)
            out.append(slots[j])
            last = slots.pop()
            n -= 1
            if j < n:
                slots[j] = last
        return out

    def _materialize(self, positions: list[int], parts: list) -> None:
        if positions:
            parts.append(self._pool.take(positions))
            self._pool.release(positions)

    def next_batch(self) -> MiniBatch | None:
        """Return the next batch, or ``None`` once the epoch is exhausted (repeatably)."""
        if self._done:
            return None
        cfg = self.config
        B, f = cfg.buffer_capacity_rows, cfg.fetch_block_rows
        if not self._started:
            self._started = True
            if self._blocks_left():
                self._fetch_until(B)
        need = cfg.batch_rows
        parts: list[tuple[Block, np.ndarray]] = []
        pending: list[int] = []
        while need and self._slots:
            n = len(self._slots)
            run = min(need, n - (B - f)) if self._blocks_left() else min(need, n)
            pending.extend(self._draw(run))
            need -= run
            if self._blocks_left() and len(self._slots) <= B - f:
                self._materialize(pending, parts)
                pending = []
                self._fetch_until(B - f + 1)
        self._materialize(pending, parts)
        n_rows = sum(p[1].size for p in parts)
        if n_rows == 0 or (n_rows < cfg.batch_rows and cfg.drop_last):
            self.close()
            return None
        block = concat_blocks([p[0] for p in parts]) if self.store is not None else None
        gidx = np.concatenate([p[1] for p in parts])
        batch = MiniBatch(block, gidx, self.epoch_index, self._batch_index)
        self._batch_index += 1
        return batch

    def io_counters(self) -> tuple[int, int, int]:
        return self.io.read_ops, self.io.bytes_read, self.blocks_fetched

    def close(self) -> None:
        self._done = True
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None
        self._queue.clear()

    def __iter__(self) -> BatchIterator:
        return self

    def __next__(self) -> MiniBatch:
        batch = self.next_batch()
        if batch is None:
            raise StopIteration
        return batch

    def __enter__(self) -> BatchIterator:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_epoch(store: Store, config: LoaderConfig, epoch_index: int = 0) -> BatchIterator:
    return BatchIterator(store, config, epoch_index)


def next_batch(iterator: BatchIterator) -> MiniBatch | None:
    return iterator.next_batch()


def io_counters(iterator: BatchIterator) -> tuple[int, int, int]:
    return iterator.io_counters()
