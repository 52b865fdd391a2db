"""Block-locality statistics for an emitted stream of source row indices.

The headline number is the fraction of row pairs inside windows of ``w``
consecutive emitted rows that come from the same source block of ``c`` rows. This
pair-collision metric is a choice of this package, not a standard measure;
its null model is a uniform permutation, under which a pair of distinct
positions collides with probability ``sum_b s_b (s_b - 1) / (n (n - 1))``,
i.e. ``(c - 1) / (n - 1)`` when ``c`` divides ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .._rng import SIMULATION, derive_rng
from ..preshuffle import ProvenanceMap

METRIC_LABEL = "same-block pair collisions in consecutive w-row windows (uniform-permutation null)"
_DECILES = 10


@dataclass
class RandomnessReport:
    window_rows: int
    same_block_pair_rate: float
    expected_rate: float
    z_score: float
    rank_correlation: float
    chi_square_stat: float
    # extras beyond the core schema
    block_rows: int = 1
    n: int = 0
    null_std: float = float("nan")
    simulations: int = 0
    chi_square_dof: int = 0
    chi_square_pvalue: float = float("nan")
    metric: str = METRIC_LABEL

    def rejects(self, alpha: float) -> bool:
        """Two-sided test of the collision rate against the uniform null."""
        if not math.isfinite(self.z_score):
            return False
        return 2 * stats.norm.sf(abs(self.z_score)) < alpha


def same_block_pair_rate(block_ids: np.ndarray, w: int) -> float:
    """Fraction of row pairs sharing a block, over consecutive windows of ``w`` rows.

    Windows advance by ``w`` (the last one may be shorter); with ``w`` equal to
    the block size an unshuffled stream scores exactly 1.
    """
    n = block_ids.size
    if not 2 <= w <= n:
        raise ValueError(f"need 2 <= window ({w}) <= stream length ({n})")
    window = np.arange(n, dtype=np.int64) // w
    key = window * (int(block_ids.max()) + 1) + block_ids
    _, counts = np.unique(key, return_counts=True)
    hits = int((counts * (counts - 1)).sum()) // 2
    sizes = np.bincount(window)
    total = int((sizes * (sizes - 1)).sum()) // 2
    return hits / total


def expected_pair_rate(n: int, block_rows: int) -> float:
    full, rest = divmod(n, block_rows)
    same = full * block_rows * (block_rows - 1) + rest * (rest - 1)
    return same / (n * (n - 1))


def randomness_report(
    stream,
    block_rows: int,
    window_rows: int,
    simulations: int = 100,
    seed: int = 0,
) -> RandomnessReport:
    """Summarize how well a stream of source indices is mixed.

    ``stream`` is a permutation of ``0..n-1`` in emission order: a loader's
    global indices, or a :class:`ProvenanceMap` (mapped to collection rows).
    ``simulations`` uniform permutations estimate the null spread for the
    z-score; pass 0 to skip it.
    """
    if block_rows < 1:
        raise ValueError("block_rows must be >= 1")
    if isinstance(stream, ProvenanceMap):
        stream = stream.global_rows()
    src = np.asarray(stream, dtype=np.int64)
    n = src.size
    if not 2 <= window_rows <= n:
        raise ValueError(f"need 2 <= window_rows ({window_rows}) <= n ({n})")
    blocks = src // block_rows
    rate = same_block_pair_rate(blocks, window_rows)
    expected = expected_pair_rate(n, block_rows)

    null_std = float("nan")
    z = float("nan")
    if simulations > 0:
        rng = derive_rng(seed, SIMULATION, n, block_rows, window_rows)
        ids = np.arange(n) // block_rows
        sims = np.array([same_block_pair_rate(rng.permutation(ids), window_rows) for _ in range(simulations)])
        null_std = float(sims.std(ddof=1)) if simulations > 1 else float("nan")
        if null_std > 0:
            z = (rate - expected) / null_std
        elif rate == expected:
            z = 0.0

    ranks = np.empty(n, dtype=np.float64)
    ranks[np.argsort(src, kind="stable")] = np.arange(n)
    positions = np.arange(n, dtype=np.float64)
    rho = float(np.corrcoef(positions, ranks)[0, 1]) if n > 1 else float("nan")

    # decile composition of consecutive non-overlapping windows
    n_batches = n // window_rows
    chi2_stat, dof, pval = float("nan"), 0, float("nan")
    if n_batches >= 2:
        decile = np.minimum((ranks * _DECILES // n).astype(np.int64), _DECILES - 1)
        used = decile[: n_batches * window_rows].reshape(n_batches, window_rows)
        counts = np.stack([(used == d).sum(axis=1) for d in range(_DECILES)], axis=1)
        col = counts.sum(axis=0)
        keep = col > 0
        expected_counts = np.outer(counts.sum(axis=1), col[keep]) / counts.sum()
        chi2_stat = float(((counts[:, keep] - expected_counts) ** 2 / expected_counts).sum())
        dof = (n_batches - 1) * (int(keep.sum()) - 1)
        pval = float(stats.chi2.sf(chi2_stat, dof)) if dof > 0 else float("nan")

    return RandomnessReport(
        window_rows=window_rows,
        same_block_pair_rate=rate,
        expected_rate=expected,
        z_score=z,
        rank_correlation=rho,
        chi_square_stat=chi2_stat,
        block_rows=block_rows,
        n=n,
        null_std=null_std,
        simulations=simulations,
        chi_square_dof=dof,
        chi_square_pvalue=pval,
    )
