"""Timing comparison of the numba kernels against their numpy fallbacks.

Builds a synthetic CSR graph plus dense operands, checks both backends
agree bitwise, then reports best-of-N wall times and the speedup. Run
with SDEREC_FORCE_NUMPY=1 to confirm the fallback path is what the
package would use without numba.
"""

import argparse
import time

import numpy as np

from sderec import kernels


def make_csr(n_rows, avg_degree, rng):
    counts = rng.poisson(avg_degree, size=n_rows).astype(np.int64)
    counts = np.maximum(counts, 1)
    row_offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    nnz = int(row_offsets[-1])
    col_indices = rng.integers(0, n_rows, size=nnz, dtype=np.int64)
    values = rng.standard_normal(nnz)
    return row_offsets, col_indices, values


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--degree", type=int, default=16)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    row_offsets, col_indices, values = make_csr(args.rows, args.degree, rng)
    dense = rng.standard_normal((args.rows, args.dim))
    nnz = col_indices.shape[0]
    edge_rows = rng.integers(0, args.rows, size=nnz, dtype=np.int64)
    edge_cols = rng.integers(0, args.rows, size=nnz, dtype=np.int64)
    scatter_rows = rng.standard_normal((nnz, args.dim))

    print(f"rows={args.rows} nnz={nnz} dim={args.dim} "
          f"(active backend: {kernels.backend()})")

    if not kernels.HAS_NUMBA:
        print("numba unavailable; nothing to compare")
        return

    cases = [
        ("csr_matmul",
         lambda: kernels.csr_matmul_numpy(row_offsets, col_indices, values, dense),
         lambda: kernels.csr_matmul_numba(row_offsets, col_indices, values, dense)),
        ("scatter_add_rows",
         lambda: kernels.scatter_add_rows_numpy(
             np.zeros((args.rows, args.dim)), edge_rows, scatter_rows),
         lambda: kernels.scatter_add_rows_numba(
             np.zeros((args.rows, args.dim)), edge_rows, scatter_rows)),
        ("edge_rowdot",
         lambda: kernels.edge_rowdot_numpy(dense, edge_rows, edge_cols),
         lambda: kernels.edge_rowdot_numba(dense, edge_rows, edge_cols)),
    ]

    for name, np_fn, nb_fn in cases:
        a, b = np_fn(), nb_fn()  # also warms the jit cache
        if not np.array_equal(a, b):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_of(np_fn, args.repeats)
        t_nb = best_of(nb_fn, args.repeats)
        print(f"{name:18s} numpy {t_np * 1e3:8.2f} ms   "
              f"numba {t_nb * 1e3:8.2f} ms   x{t_np / t_nb:5.2f}")


if __name__ == "__main__":
    main()
