from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._rng import SHUFFLE_PLAN, SHUFFLE_ROUND, check_seed, derive_rng


@dataclass(frozen=True)
class ShufflePlan:
    """Randomized schedule of contiguous source blocks, packed into bounded rounds."""

    seed: int
    block_rows: int
    buffer_rows: int
    rounds: tuple[tuple[int, ...], ...]
    total_rows: int

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.total_rows / self.block_rows)

    def block_range(self, block_id: int) -> tuple[int, int]:
        start = block_id * self.block_rows
        return start, min(start + self.block_rows, self.total_rows)

    def round_rows(self, round_index: int) -> np.ndarray:
        """Global source rows of a round, blocks laid out in scheduled order."""
        parts = [np.arange(*self.block_range(b), dtype=np.int64) for b in self.rounds[round_index]]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def round_permutation(self, round_index: int, n_rows: int) -> np.ndarray:
        return derive_rng(self.seed, SHUFFLE_ROUND, round_index).permutation(n_rows)

    def output_order(self) -> np.ndarray:
        """Global source row for every output row (what the provenance map will record)."""
        out = []
        for r in range(len(self.rounds)):
            rows = self.round_rows(r)
            out.append(rows[self.round_permutation(r, rows.size)])
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def plan_shuffle(total_rows: int, block_rows: int, buffer_rows: int, seed: int) -> ShufflePlan:
    if block_rows < 1:
        raise ValueError(f"block_rows must be >= 1, got {block_rows}")
    if buffer_rows < block_rows:
        raise ValueError(f"buffer_rows ({buffer_rows}) must be >= block_rows ({block_rows})")
    if total_rows < 0:
        raise ValueError("total_rows must be non-negative")
    seed = check_seed(seed)
    n_blocks = math.ceil(total_rows / block_rows)
    order = derive_rng(seed, SHUFFLE_PLAN).permutation(n_blocks)
    rounds: list[tuple[int, ...]] = []
    current: list[int] = []
    held = 0
    for b in order.tolist():
        size = min(block_rows, total_rows - b * block_rows)
        if held + size > buffer_rows:
            rounds.append(tuple(current))
            current, held = [], 0
        current.append(b)
        held += size
    if current:
        rounds.append(tuple(current))
    return ShufflePlan(seed, block_rows, buffer_rows, tuple(rounds), total_rows)
