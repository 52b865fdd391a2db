from __future__ import annotations

DEFAULT_CHUNKS_PER_SHARD = 128


def suggest_chunking(layout: str, target_elements: int, *, mean_nnz_per_row: float | None = None,
                     n_var: int | None = None, chunks_per_shard: int = DEFAULT_CHUNKS_PER_SHARD) -> tuple[int, int]:
    """Translate an element-count chunk target into ``(chunk_rows, chunks_per_shard)``.

    CSR divides by the mean stored entries per row, dense by the row width.
    """
    if target_elements < 1:
        raise ValueError("target_elements must be >= 1")
    if layout == "csr":
        if not mean_nnz_per_row:
            raise ValueError("csr chunking needs a nonzero mean_nnz_per_row")
        per_row = mean_nnz_per_row
    elif layout == "dense":
        if not n_var:
            raise ValueError("dense chunking needs n_var >= 1")
        per_row = n_var
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return max(1, round(target_elements / per_row)), chunks_per_shard
