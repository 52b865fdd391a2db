"""In-memory row blocks: dense matrices and CSR matrices with row gather/concat."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class BlockError(ValueError):
    """A block violates its structural invariants."""


@dataclass
class DenseBlock:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise BlockError(f"dense values must be 2-D, got shape {values.shape}")
        self.values = np.ascontiguousarray(values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_var(self) -> int:
        return self.values.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def take(self, rows: np.ndarray) -> DenseBlock:
        return DenseBlock(self.values[np.asarray(rows, dtype=np.intp)])

    def slice(self, start: int, end: int) -> DenseBlock:
        return DenseBlock(self.values[start:end])

    @classmethod
    def empty(cls, n_var: int, dtype) -> DenseBlock:
        return cls(np.zeros((0, n_var), dtype=dtype))


@dataclass
class CsrBlock:
    n_var: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self) -> None:
        self.indptr = np.asarray(self.indptr)
        self.indices = np.asarray(self.indices)
        self.data = np.asarray(self.data)
        if self.indptr.ndim != 1 or self.indptr.size < 1:
            raise BlockError("indptr must be a non-empty 1-D array")
        if self.indices.shape != self.data.shape or self.indices.ndim != 1:
            raise BlockError("indices and data must be 1-D arrays of equal length")

    @property
    def n_rows(self) -> int:
        return self.indptr.size - 1

    @property
    def nnz(self) -> int:
        return self.indices.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def validate(self) -> None:
        """Full O(nnz) structural check; raises :class:`BlockError`."""
        ip = self.indptr.astype(np.int64)
        if ip[0] != 0:
            raise BlockError(f"indptr[0] must be 0, got {ip[0]}")
        if np.any(np.diff(ip) < 0):
            raise BlockError("indptr must be nondecreasing")
        if ip[-1] != self.indices.size:
            raise BlockError(f"indptr[-1]={ip[-1]} but {self.indices.size} stored entries")
        if self.indices.size == 0:
            return
        idx = self.indices.astype(np.int64)
        if idx.min() < 0 or idx.max() >= self.n_var:
            bad = int(idx[(idx < 0) | (idx >= self.n_var)][0])
            raise BlockError(f"column index {bad} out of range for n_var={self.n_var}")
        # strictly increasing inside each row: every step that is not a row start must be positive
        steps = np.diff(idx)
        row_starts = np.zeros(idx.size, dtype=bool)
        row_starts[ip[:-1][ip[:-1] < idx.size]] = True
        if np.any(steps[~row_starts[1:]] <= 0):
            raise BlockError("column indices must be strictly increasing within each row")

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr.astype(np.int64))

    def take(self, rows: np.ndarray) -> CsrBlock:
        rows = np.asarray(rows, dtype=np.int64)
        ip = self.indptr.astype(np.int64)
        starts = ip[rows]
        lengths = ip[rows + 1] - starts
        new_indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(lengths, out=new_indptr[1:])
        gather = np.repeat(starts - new_indptr[:-1], lengths) + np.arange(new_indptr[-1])
        return CsrBlock(self.n_var, new_indptr, self.indices[gather], self.data[gather])

    def slice(self, start: int, end: int) -> CsrBlock:
        ip = self.indptr.astype(np.int64)
        lo, hi = ip[start], ip[end]
        return CsrBlock(self.n_var, ip[start:end + 1] - lo, self.indices[lo:hi], self.data[lo:hi])

    @classmethod
    def empty(cls, n_var: int, dtype, index_dtype=np.int64) -> CsrBlock:
        return cls(n_var, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=index_dtype), np.zeros(0, dtype=dtype))


Block = Union[DenseBlock, CsrBlock]


def concat_blocks(blocks: Sequence[Block]) -> Block:
    if not blocks:
        raise ValueError("nothing to concatenate")
    first = blocks[0]
    if any(b.n_var != first.n_var for b in blocks):
        raise BlockError("cannot concatenate blocks of different widths")
    if isinstance(first, DenseBlock):
        if len(blocks) == 1:
            return first
        return DenseBlock(np.concatenate([b.values for b in blocks], axis=0))
    if len(blocks) == 1:
        return first
    lengths = np.concatenate([b.row_lengths() for b in blocks])
    indptr = np.zeros(lengths.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    return CsrBlock(
        first.n_var,
        indptr,
        np.concatenate([b.indices for b in blocks]),
        np.concatenate([b.data for b in blocks]),
    )


def to_dense(block: CsrBlock) -> DenseBlock:
    out = np.zeros((block.n_rows, block.n_var), dtype=block.data.dtype)
    rows = np.repeat(np.arange(block.n_rows), block.row_lengths())
    out[rows, block.indices.astype(np.intp)] = block.data
    return DenseBlock(out)


def to_csr(block: DenseBlock, index_dtype=np.int64) -> CsrBlock:
    """Compress a dense block; exact zeros are dropped."""
    rows, cols = np.nonzero(block.values)
    indptr = np.zeros(block.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=block.n_rows), out=indptr[1:])
    return CsrBlock(block.n_var, indptr, cols.astype(index_dtype), block.values[rows, cols])


def blocks_equal(a: Block, b: Block) -> bool:
    if type(a) is not type(b) or a.n_var != b.n_var or a.n_rows != b.n_rows:
        return False
    if isinstance(a, DenseBlock):
        return a.values.dtype == b.values.dtype and np.array_equal(a.values, b.values)
    return (
        np.array_equal(a.row_lengths(), b.row_lengths())
        and np.array_equal(a.indices.astype(np.int64), b.indices.astype(np.int64))
        and a.data.dtype == b.data.dtype
        and np.array_equal(a.data, b.data)
    )
