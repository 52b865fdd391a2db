"""Command-line orchestration plus text ingestion and synthetic data."""

from .chunking import suggest_chunking
from .ingest import IngestError, ingest_csv, ingest_triplet, read_triplets
from .main import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, build_parser, main, parse_count
from .synth import DiskBudgetError, estimate_bytes, synth_store

__all__ = [
    "DiskBudgetError",
    "EXIT_IO",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_VERIFY",
    "IngestError",
    "build_parser",
    "estimate_bytes",
    "ingest_csv",
    "ingest_triplet",
    "main",
    "parse_count",
    "read_triplets",
    "suggest_chunking",
    "synth_store",
]
