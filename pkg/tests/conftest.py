from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from obsbatch.store import CsrBlock, DenseBlock, create_store

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {status}  {detail}")


def identity_dense(start: int, stop: int, n_var: int, dtype=np.float32) -> DenseBlock:
    """Rows whose every value equals the row index."""
    rows = np.arange(start, stop, dtype=np.float64)
    return DenseBlock(np.repeat(rows[:, None], n_var, axis=1).astype(dtype))


def random_dense(rng: np.random.Generator, n: int, n_var: int, dtype=np.float32, density: float = 1.0) -> DenseBlock:
    if np.issubdtype(np.dtype(dtype), np.integer):
        vals = rng.integers(0, 100, size=(n, n_var))
    else:
        vals = rng.standard_normal((n, n_var))
    vals[rng.random((n, n_var)) >= density] = 0
    return DenseBlock(vals.astype(dtype))


def csr_from_scipy(m) -> CsrBlock:
    m = sp.csr_matrix(m)
    m.sort_indices()
    return CsrBlock(m.shape[1], m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data)


def random_csr(rng: np.random.Generator, n: int, n_var: int, dtype=np.float32, density: float = 0.2) -> CsrBlock:
    dense = random_dense(rng, n, n_var, dtype, density).values
    return csr_from_scipy(dense)


def dense_of(block) -> np.ndarray:
    """Independent densification through scipy for CSR blocks."""
    if isinstance(block, CsrBlock):
        return sp.csr_matrix((block.data, block.indices, block.indptr), shape=(block.n_rows, block.n_var)).toarray()
    return np.asarray(block.values)


@pytest.fixture
def make_store(tmp_path):
    counter = iter(range(10**6))

    def _make(blocks=(), var_names=None, n_var=None, layout="dense", **kw):
        n_var = n_var if n_var is not None else (len(var_names) if var_names else blocks[0].n_var)
        names = var_names or [f"g{i}" for i in range(n_var)]
        path = tmp_path / f"store{next(counter)}"
        store = create_store(path, names, layout, **kw)
        for b in blocks:
            store.append(b)
        store.close()
        return path

    return _make
