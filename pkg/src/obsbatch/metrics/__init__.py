"""Throughput benchmarking and randomness-quality reports."""

from .randomness import RandomnessReport, expected_pair_rate, randomness_report, same_block_pair_rate
from .report import report_rows, write_csv
from .throughput import STRATEGIES, SWEEP_PARAMETERS, SweepRow, ThroughputReport, run_throughput, sweep

__all__ = [
    "RandomnessReport",
    "STRATEGIES",
    "SWEEP_PARAMETERS",
    "SweepRow",
    "ThroughputReport",
    "expected_pair_rate",
    "randomness_report",
    "report_rows",
    "run_throughput",
    "same_block_pair_rate",
    "sweep",
    "write_csv",
]
