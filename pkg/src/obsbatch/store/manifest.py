from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

LAYOUTS = ("dense", "csr")
VALUE_DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "u8": "u1"}
INDEX_DTYPES = {"u32": "<u4", "u64": "<u8"}
CODECS = ("none", "deflate")


class ManifestError(ValueError):
    """Raised for an invalid or unparseable manifest."""


@dataclass
class StoreManifest:
    format_version: int
    layout: str
    n_obs: int
    n_var: int
    value_dtype: str
    index_dtype: str | None
    chunk_rows: int
    chunks_per_shard: int
    codec: str
    var_names: list[str] = field(default_factory=list)
    has_provenance: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise ManifestError(f"unsupported format_version {self.format_version}")
        if self.layout not in LAYOUTS:
            raise ManifestError(f"unknown layout {self.layout!r}")
        if self.value_dtype not in VALUE_DTYPES:
            raise ManifestError(f"unknown value_dtype {self.value_dtype!r}")
        if self.layout == "csr":
            if self.index_dtype not in INDEX_DTYPES:
                raise ManifestError(f"csr layout needs index_dtype in {sorted(INDEX_DTYPES)}, got {self.index_dtype!r}")
            if self.index_dtype == "u32" and self.n_var > 2**32:
                raise ManifestError("u32 indices cannot address more than 2^32 columns")
        elif self.index_dtype is not None:
            raise ManifestError("index_dtype is only valid for the csr layout")
        if self.codec not in CODECS:
            raise ManifestError(f"unknown codec {self.codec!r}")
        if self.chunk_rows < 1:
            raise ManifestError(f"chunk_rows must be >= 1, got {self.chunk_rows}")
        if self.chunks_per_shard < 1:
            raise ManifestError(f"chunks_per_shard must be >= 1, got {self.chunks_per_shard}")
        if self.n_obs < 0 or self.n_var < 0:
            raise ManifestError("n_obs and n_var must be non-negative")
        if len(self.var_names) != self.n_var:
            raise ManifestError(f"{len(self.var_names)} var_names for n_var={self.n_var}")
        if len(set(self.var_names)) != len(self.var_names):
            raise ManifestError("var_names must be unique")

    @property
    def np_value_dtype(self) -> np.dtype:
        return np.dtype(VALUE_DTYPES[self.value_dtype])

    @property
    def np_index_dtype(self) -> np.dtype | None:
        return None if self.index_dtype is None else np.dtype(INDEX_DTYPES[self.index_dtype])

    @property
    def chunk_count(self) -> int:
        return math.ceil(self.n_obs / self.chunk_rows)

    @property
    def shard_count(self) -> int:
        return math.ceil(self.chunk_count / self.chunks_per_shard)

    @property
    def shard_capacity_rows(self) -> int:
        return self.chunk_rows * self.chunks_per_shard

    def rows_in_chunk(self, chunk_id: int) -> int:
        if not 0 <= chunk_id < self.chunk_count:
            raise IndexError(f"chunk {chunk_id} out of range [0, {self.chunk_count})")
        return min(self.chunk_rows, self.n_obs - chunk_id * self.chunk_rows)

    def to_json(self) -> str:
        # canonical form: field order, 2-space indent, trailing newline
        return json.dumps(asdict(self), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> StoreManifest:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ManifestError("manifest must be a JSON object")
        expected = {f.name for f in fields(cls)}
        if set(raw) != expected:
            missing = sorted(expected - set(raw))
            extra = sorted(set(raw) - expected)
            raise ManifestError(f"manifest keys mismatch: missing={missing} extra={extra}")
        return cls(**raw)
