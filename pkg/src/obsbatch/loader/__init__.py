"""Shuffled minibatch streaming from a store via randomized contiguous fetches."""

from .config import EpochPlan, LoaderConfig, plan_epoch
from .iterator import BatchIterator, LoaderIOError, MiniBatch, io_counters, next_batch, open_epoch

__all__ = [
    "BatchIterator",
    "EpochPlan",
    "LoaderConfig",
    "LoaderIOError",
    "MiniBatch",
    "io_counters",
    "next_batch",
    "open_epoch",
    "plan_epoch",
]
