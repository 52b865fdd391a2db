"""Fixed-capacity row storage backing the shuffle buffer.

Slots in the buffer refer to pool positions; rows never move once written,
so sampling only shuffles integers.
"""

from __future__ import annotations

import numpy as np

from ..store import Block, CsrBlock, DenseBlock


class _Pool:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.gidx = np.zeros(capacity, dtype=np.uint64)
        # stack of free positions, lowest position popped first
        self._free = list(range(capacity - 1, -1, -1))

    @property
    def used(self) -> int:
        return self.capacity - len(self._free)

    def _claim(self, n: int) -> list[int]:
        if n > len(self._free):
            raise RuntimeError(f"row pool overflow: need {n}, {len(self._free)} free of {self.capacity}")
        taken = self._free[-n:][::-1]
        del self._free[-n:]
        return taken

    def release(self, positions: list[int]) -> None:
        self._free.extend(reversed(positions))


class DensePool(_Pool):
    def __init__(self, capacity: int, n_var: int, dtype):
        super().__init__(capacity)
        self.values = np.zeros((capacity, n_var), dtype=dtype)

    def put(self, block: DenseBlock, global_rows: np.ndarray) -> list[int]:
        pos = self._claim(block.n_rows)
        idx = np.asarray(pos, dtype=np.intp)
        self.values[idx] = block.values
        self.gidx[idx] = global_rows
        return pos

    def take(self, positions: list[int]) -> tuple[Block, np.ndarray]:
        idx = np.asarray(positions, dtype=np.intp)
        return DenseBlock(self.values[idx]), self.gidx[idx]


class CsrPool(_Pool):
    def __init__(self, capacity: int, n_var: int, dtype, index_dtype):
        super().__init__(capacity)
        self.n_var = n_var
        self.dtype = dtype
        self.index_dtype = index_dtype
        self._indices: list[np.ndarray | None] = [None] * capacity
        self._data: list[np.ndarray | None] = [None] * capacity

    def put(self, block: CsrBlock, global_rows: np.ndarray) -> list[int]:
        pos = self._claim(block.n_rows)
        cuts = block.indptr[1:-1].astype(np.intp)
        for p, ind, dat in zip(pos, np.split(block.indices, cuts), np.split(block.data, cuts)):
            self._indices[p] = ind.copy()
            self._data[p] = dat.copy()
        self.gidx[np.asarray(pos, dtype=np.intp)] = global_rows
        return pos

    def take(self, positions: list[int]) -> tuple[Block, np.ndarray]:
        inds = [self._indices[p] for p in positions]
        lengths = np.fromiter((a.size for a in inds), dtype=np.int64, count=len(inds))
        indptr = np.zeros(len(inds) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if inds:
            indices = np.concatenate(inds)
            data = np.concatenate([self._data[p] for p in positions])
        else:
            indices = np.zeros(0, dtype=self.index_dtype)
            data = np.zeros(0, dtype=self.dtype)
        return CsrBlock(self.n_var, indptr, indices, data), self.gidx[np.asarray(positions, dtype=np.intp)]

    def release(self, positions: list[int]) -> None:
        for p in positions:
            self._indices[p] = None
            self._data[p] = None
        super().release(positions)


class IndexPool(_Pool):
    """Pool that tracks only global row ids (no payload); used for I/O-free simulation."""

    def put(self, block, global_rows: np.ndarray) -> list[int]:
        pos = self._claim(len(global_rows))
        self.gidx[np.asarray(pos, dtype=np.intp)] = global_rows
        return pos

    def take(self, positions: list[int]) -> tuple[None, np.ndarray]:
        return None, self.gidx[np.asarray(positions, dtype=np.intp)]
