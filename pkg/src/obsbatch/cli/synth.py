from __future__ import annotations

import numpy as np

from .._rng import SYNTH, derive_rng
from ..store import CsrBlock, DenseBlock, Store, create_store
from ..store.manifest import INDEX_DTYPES, VALUE_DTYPES

# largest row index each value dtype represents exactly
_IDENTITY_LIMIT = {"f32": 2**24, "f64": 2**53, "i32": 2**31 - 1, "u8": 255}
_ELEMENTS_PER_BATCH = 1 << 22


class DiskBudgetError(ValueError):
    pass


def estimate_bytes(n_obs: int, n_var: int, layout: str, density: float, value_dtype: str,
                   index_dtype: str = "u32") -> int:
    vsize = np.dtype(VALUE_DTYPES[value_dtype]).itemsize
    if layout == "dense":
        return n_obs * n_var * vsize
    isize = np.dtype(INDEX_DTYPES[index_dtype]).itemsize
    nnz = n_obs * max(1.0, density * n_var)
    return int(nnz * (vsize + isize) + (n_obs + 1) * isize)


def synth_store(
    out,
    n_obs: int,
    n_var: int,
    layout: str = "dense",
    density: float = 1.0,
    seed: int = 0,
    *,
    value_dtype: str = "f32",
    index_dtype: str | None = None,
    chunk_rows: int = 1024,
    chunks_per_shard: int = 128,
    codec: str = "none",
    disk_budget: int | None = None,
) -> Store:
    """Write a seeded synthetic store whose column 0 holds each row's global index.

    CSR rows always store column 0 (explicitly, even when the value is 0); the
    remaining columns are Bernoulli with a rate chosen so the expected row
    length is ``density * n_var``.
    """
    if n_var < 1 or n_obs < 0:
        raise ValueError("need n_var >= 1 and n_obs >= 0")
    if layout == "csr" and not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if n_obs > _IDENTITY_LIMIT[value_dtype] + 1:
        raise ValueError(f"{value_dtype} cannot hold row indices up to {n_obs - 1} exactly")
    if disk_budget is not None:
        need = estimate_bytes(n_obs, n_var, layout, density, value_dtype, index_dtype or "u32")
        if need > disk_budget:
            raise DiskBudgetError(f"synthetic store needs ~{need} bytes, over the disk budget of {disk_budget}")

    store = create_store(out, [f"f{i}" for i in range(n_var)], layout, value_dtype, chunk_rows,
                         chunks_per_shard, codec, index_dtype)
    vdt = store.manifest.np_value_dtype
    integer = np.issubdtype(vdt, np.integer)
    rows_per_batch = max(1, _ELEMENTS_PER_BATCH // n_var)
    other_p = 0.0 if n_var == 1 else min(1.0, max(0.0, (density * n_var - 1) / (n_var - 1)))
    with store:
        for k, start in enumerate(range(0, n_obs, rows_per_batch)):
            stop = min(n_obs, start + rows_per_batch)
            rng = derive_rng(seed, SYNTH, k)
            n = stop - start
            ids = np.arange(start, stop)
            if layout == "dense":
                if integer:
                    vals = rng.integers(1, 100, size=(n, n_var)).astype(vdt)
                else:
                    vals = rng.random((n, n_var), dtype=np.float64 if vdt.itemsize == 8 else np.float32).astype(vdt)
                vals[:, 0] = ids
                store.append(DenseBlock(vals))
            else:
                mask = rng.random((n, n_var - 1), dtype=np.float32) < other_p
                row_of, col = np.nonzero(mask)
                col = col + 1
                rows_all = np.concatenate([np.arange(n), row_of])
                cols_all = np.concatenate([np.zeros(n, dtype=np.int64), col])
                if integer:
                    other = rng.integers(1, 100, size=col.size)
                else:
                    other = 1.0 - rng.random(col.size)
                vals_all = np.concatenate([ids, other]).astype(vdt)
                order = np.lexsort((cols_all, rows_all))
                indptr = np.zeros(n + 1, dtype=np.int64)
                np.cumsum(np.bincount(rows_all, minlength=n), out=indptr[1:])
                store.append(CsrBlock(n_var, indptr, cols_all[order], vals_all[order]))
    return store
