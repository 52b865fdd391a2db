"""Bounded-memory shuffling of store collections into one shuffled store."""

from .collection import CollectionError, DatasetCollection, MismatchedVarWarning, add_dataset
from .plan import ShufflePlan, plan_shuffle
from .provenance import MissingProvenanceError, ProvenanceMap, read_provenance
from .run import ResidencyMeter, ShuffleStats, run_shuffle
from .verify import VerifyReport, collection_from_provenance, verify_shuffle

__all__ = [
    "CollectionError",
    "DatasetCollection",
    "MismatchedVarWarning",
    "MissingProvenanceError",
    "ProvenanceMap",
    "ResidencyMeter",
    "ShufflePlan",
    "ShuffleStats",
    "VerifyReport",
    "add_dataset",
    "collection_from_provenance",
    "plan_shuffle",
    "read_provenance",
    "run_shuffle",
    "verify_shuffle",
]
