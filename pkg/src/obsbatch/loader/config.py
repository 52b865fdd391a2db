from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._rng import EPOCH_BLOCKS, check_seed, derive_rng
from ..store import RowRange


@dataclass(frozen=True)
class LoaderConfig:
    fetch_block_rows: int = 1024
    buffer_capacity_rows: int = 16384
    batch_rows: int = 256
    seed: int = 0
    prefetch_depth: int = 2
    drop_last: bool = False
    cache_bypass: bool = False

    def __post_init__(self) -> None:
        f, B, b = self.fetch_block_rows, self.buffer_capacity_rows, self.batch_rows
        if f < 1:
            raise ValueError(f"fetch_block_rows must be >= 1, got {f}")
        if B < f:
            raise ValueError(f"buffer_capacity_rows ({B}) must be >= fetch_block_rows ({f})")
        if not 1 <= b <= B:
            raise ValueError(f"batch_rows must be in [1, buffer_capacity_rows={B}], got {b}")
        if self.prefetch_depth < 0:
            raise ValueError("prefetch_depth must be >= 0")
        check_seed(self.seed)


class EpochPlan:
    """Fetch blocks of one epoch, in the order they will be read."""

    def __init__(self, starts: np.ndarray, ends: np.ndarray, epoch_index: int):
        self.starts = starts
        self.ends = ends
        self.epoch_index = epoch_index

    def __len__(self) -> int:
        return self.starts.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EpochPlan)
            and self.epoch_index == other.epoch_index
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.ends, other.ends)
        )

    def __repr__(self) -> str:
        return f"EpochPlan(epoch_index={self.epoch_index}, blocks={len(self)})"

    def block(self, i: int) -> RowRange:
        return RowRange(int(self.starts[i]), int(self.ends[i]))

    @property
    def blocks(self) -> list[RowRange]:
        return [RowRange(a, b) for a, b in zip(self.starts.tolist(), self.ends.tolist())]

    @property
    def sizes(self) -> np.ndarray:
        return self.ends - self.starts


def plan_epoch(n_obs: int, config: LoaderConfig, epoch_index: int) -> EpochPlan:
    """Seeded permutation of the contiguous fetch blocks covering ``[0, n_obs)``."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    f = config.fetch_block_rows
    order = derive_rng(config.seed, EPOCH_BLOCKS, epoch_index).permutation(math.ceil(n_obs / f))
    starts = order.astype(np.int64) * f
    return EpochPlan(starts, np.minimum(starts + f, n_obs), epoch_index)
