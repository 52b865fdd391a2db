"""Chunked, sharded on-disk storage for dense and CSR observation matrices."""

from .blocks import Block, BlockError, CsrBlock, DenseBlock, blocks_equal, concat_blocks, to_csr, to_dense
from .codec import CodecError
from .manifest import ManifestError, StoreManifest
from .shard import IOStats, StoreCorruptError
from .store import (
    ChunkRead,
    ReadPlan,
    RowRange,
    Store,
    StoreExistsError,
    StoreModeError,
    append_rows,
    create_store,
    open_store,
    plan_read,
    read_manifest,
    read_rows,
)

__all__ = [
    "Block",
    "BlockError",
    "ChunkRead",
    "CodecError",
    "CsrBlock",
    "DenseBlock",
    "IOStats",
    "ManifestError",
    "ReadPlan",
    "RowRange",
    "Store",
    "StoreCorruptError",
    "StoreExistsError",
    "StoreManifest",
    "StoreModeError",
    "append_rows",
    "blocks_equal",
    "concat_blocks",
    "create_store",
    "open_store",
    "plan_read",
    "read_manifest",
    "read_rows",
    "to_csr",
    "to_dense",
]
