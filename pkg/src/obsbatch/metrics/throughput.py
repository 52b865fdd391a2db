from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .._rng import ROW_RANDOM, derive_rng
from ..loader import LoaderConfig, open_epoch
from ..store import IOStats, Store

log = logging.getLogger(__name__)

STRATEGIES = ("chunked", "row_random")
CACHE_MODES = ("warm", "cold_best_effort")


@dataclass
class ThroughputReport:
    samples_per_sec: float
    batches_per_sec: float
    bytes_read: int
    read_ops: int
    wall_seconds: float
    epochs_measured: int
    warmup_epochs_discarded: int
    cache_mode: str
    # context beyond the core schema; CSV columns follow the ones above
    strategy: str = "chunked"
    rows_emitted: int = 0
    batches_emitted: int = 0
    n_obs: int = 0
    cache_bypass_honored: bool = False
    epoch_samples_per_sec: list[float] = field(default_factory=list)


@dataclass
class _EpochResult:
    rows: int
    batches: int
    seconds: float
    io: IOStats


def _chunked_epoch(store: Store, config: LoaderConfig, epoch: int) -> _EpochResult:
    rows = batches = 0
    t0 = time.perf_counter()
    with open_epoch(store, config, epoch) as it:
        for batch in it:
            rows += batch.n_rows
            batches += 1
        io = it.io
    return _EpochResult(rows, batches, time.perf_counter() - t0, io)


def _row_random_epoch(store: Store, config: LoaderConfig, epoch: int) -> _EpochResult:
    """One read call per row, rows visited in a seeded random order."""
    io = IOStats()
    rows = batches = 0
    order = derive_rng(config.seed, ROW_RANDOM, epoch).permutation(store.n_obs)
    b = config.batch_rows
    t0 = time.perf_counter()
    for start in range(0, order.size, b):
        sel = order[start:start + b]
        if sel.size < b and config.drop_last:
            break
        for i in sel.tolist():
            _, stats = store.read_rows([(i, i + 1)], cache_bypass=config.cache_bypass)
            io.add(stats)
        rows += sel.size
        batches += 1
    return _EpochResult(rows, batches, time.perf_counter() - t0, io)


def run_throughput(
    store: Store,
    config: LoaderConfig,
    epochs: int = 1,
    warmup: int = 0,
    strategy: str = "chunked",
    cache_mode: str = "warm",
) -> ThroughputReport:
    """Time ``warmup + epochs`` epochs and report on the last ``epochs`` of them.

    ``cold_best_effort`` requests unbuffered reads; whether the platform
    honored that is recorded in the report rather than assumed.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if cache_mode not in CACHE_MODES:
        raise ValueError(f"cache_mode must be one of {CACHE_MODES}")
    if cache_mode == "cold_best_effort":
        config = replace(config, cache_bypass=True)
    run_epoch = _chunked_epoch if strategy == "chunked" else _row_random_epoch
    measured: list[_EpochResult] = []
    for e in range(warmup + epochs):
        result = run_epoch(store, config, e)
        if e >= warmup:
            measured.append(result)
        log.debug("%s epoch %d: %d rows in %.3fs", strategy, e, result.rows, result.seconds)

    io = IOStats()
    for r in measured:
        io.add(r.io)
    wall = sum(r.seconds for r in measured)
    rows = sum(r.rows for r in measured)
    batches = sum(r.batches for r in measured)
    return ThroughputReport(
        samples_per_sec=rows / wall if wall > 0 else float("inf"),
        batches_per_sec=batches / wall if wall > 0 else float("inf"),
        bytes_read=io.bytes_read,
        read_ops=io.read_ops,
        wall_seconds=wall,
        epochs_measured=epochs,
        warmup_epochs_discarded=warmup,
        cache_mode=cache_mode,
        strategy=strategy,
        rows_emitted=rows,
        batches_emitted=batches,
        n_obs=store.n_obs,
        cache_bypass_honored=io.cache_bypass_honored,
        epoch_samples_per_sec=[r.rows / r.seconds if r.seconds > 0 else float("inf") for r in measured],
    )


SWEEP_PARAMETERS = ("batch_rows", "fetch_block_rows", "buffer_capacity_rows")


@dataclass
class SweepRow:
    parameter: str
    value: int
    report: ThroughputReport | None
    error: str | None = None


def sweep(
    store: Store,
    parameter: str,
    values,
    fixed_config: LoaderConfig,
    epochs: int = 1,
    warmup: int = 0,
    strategy: str = "chunked",
    cache_mode: str = "warm",
) -> list[SweepRow]:
    """Run the same protocol once per value of one loader parameter.

    Grid points that make an invalid config are kept as rows with ``error`` set.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMETERS}")
    values = list(values)
    if not values:
        raise ValueError("values must be nonempty")
    rows = []
    for v in values:
        try:
            config = replace(fixed_config, **{parameter: int(v)})
        except ValueError as exc:
            log.warning("skipping %s=%s: %s", parameter, v, exc)
            rows.append(SweepRow(parameter, int(v), None, str(exc)))
            continue
        rows.append(SweepRow(parameter, int(v), run_throughput(store, config, epochs, warmup, strategy, cache_mode)))
    return rows
