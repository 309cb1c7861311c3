"""Hot numeric kernels with numba acceleration and pure-numpy fallbacks.

The numba path is used when numba imports cleanly and the environment
variable SDEREC_FORCE_NUMPY is unset/falsy. Both implementations accumulate
in identical (row-major, edge-order) sequence so results agree bitwise and
repeated runs are deterministic.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

_FORCE_NUMPY = os.environ.get("SDEREC_FORCE_NUMPY", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

USING_NUMBA = HAS_NUMBA and not _FORCE_NUMPY


def backend() -> str:
    return "numba" if USING_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# CSR sparse @ dense


def csr_matmul_numpy(row_offsets, col_indices, values, dense):
    n_rows = row_offsets.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    if col_indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(row_offsets))
    np.add.at(out, rows, values[:, None] * dense[col_indices])
    return out


if HAS_NUMBA:

    @numba.njit(cache=True)
    def _csr_matmul_jit(row_offsets, col_indices, values, dense, out):
        n_rows = row_offsets.shape[0] - 1
        d = dense.shape[1]
        for i in range(n_rows):
            for p in range(row_offsets[i], row_offsets[i + 1]):
                j = col_indices[p]
                v = values[p]
                for k in range(d):
                    out[i, k] += v * dense[j, k]
        return out

    def csr_matmul_numba(row_offsets, col_indices, values, dense):
        out = np.zeros((row_offsets.shape[0] - 1, dense.shape[1]), dtype=np.float64)
        return _csr_matmul_jit(row_offsets, col_indices, values, dense, out)

else:
    csr_matmul_numba = None


# ---------------------------------------------------------------------------
# Row scatter-add (backward of a row gather)


def scatter_add_rows_numpy(out, idx, rows):
    np.add.at(out, idx, rows)
    return out


if HAS_NUMBA:

    @numba.njit(cache=True)
    def _scatter_add_jit(out, idx, rows):
        d = rows.shape[1]
        for e in range(idx.shape[0]):
            i = idx[e]
            for k in range(d):
                out[i, k] += rows[e, k]
        return out

    def scatter_add_rows_numba(out, idx, rows):
        return _scatter_add_jit(out, idx, rows)

else:
    scatter_add_rows_numba = None


# ---------------------------------------------------------------------------
# Per-edge inner products  <emb[rows[e]], emb[cols[e]]>


def edge_rowdot_numpy(emb, rows, cols):
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    out = np.zeros(rows.shape[0], dtype=np.float64)
    # accumulate feature-by-feature so the summation order matches the jit loop
    for k in range(emb.shape[1]):
        out += emb[rows, k] * emb[cols, k]
    return out


if HAS_NUMBA:

    @numba.njit(cache=True)
    def _edge_rowdot_jit(emb, rows, cols, out):
        d = emb.shape[1]
        for e in range(rows.shape[0]):
            s = 0.0
            for k in range(d):
                s += emb[rows[e], k] * emb[cols[e], k]
            out[e] = s
        return out

    def edge_rowdot_numba(emb, rows, cols):
        out = np.zeros(rows.shape[0], dtype=np.float64)
        return _edge_rowdot_jit(emb, rows, cols, out)

else:
    edge_rowdot_numba = None


if USING_NUMBA:
    csr_matmul = csr_matmul_numba
    scatter_add_rows = scatter_add_rows_numba
    edge_rowdot = edge_rowdot_numba
else:
    csr_matmul = csr_matmul_numpy
    scatter_add_rows = scatter_add_rows_numpy
    edge_rowdot = edge_rowdot_numpy
