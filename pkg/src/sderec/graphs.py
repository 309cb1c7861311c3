"""CSR sparse matrices, adjacency builders, and curriculum sparsification."""

from dataclasses import dataclass, replace

import numpy as np

from . import kernels


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable CSR matrix. Column indices are strictly increasing per row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.asarray(self.row_offsets, dtype=np.int64)
        ci = np.asarray(self.col_indices, dtype=np.int64)
        va = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if ro.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if ro[0] != 0 or ro[-1] != ci.shape[0] or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing from 0 to nnz")
        if ci.shape != va.shape:
            raise ValueError("col_indices and values must have equal length")
        if ci.shape[0]:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row
            same_row = np.repeat(np.arange(self.n_rows), np.diff(ro))
            bad = (np.diff(ci) <= 0) & (same_row[1:] == same_row[:-1])
            if np.any(bad):
                raise ValueError("columns must be strictly increasing within a row")

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def row_ids(self):
        """Row index of every stored entry, in storage order."""
        return np.repeat(
            np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets)
        )

    def matmul(self, dense):
        dense = np.ascontiguousarray(dense, dtype=np.float64)
        if dense.shape[0] != self.n_cols:
            raise ValueError("dimension mismatch in sparse @ dense")
        return kernels.csr_matmul(
            self.row_offsets, self.col_indices, self.values, dense
        )

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        out[self.row_ids(), self.col_indices] = self.values
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_coo(
            self.col_indices, self.row_ids(), self.values, self.n_cols, self.n_rows
        )

    def row_degrees(self):
        return np.diff(self.row_offsets)

    def is_symmetric(self) -> bool:
        if self.n_rows != self.n_cols:
            return False
        t = self.transpose()
        return (
            np.array_equal(t.row_offsets, self.row_offsets)
            and np.array_equal(t.col_indices, self.col_indices)
            and np.array_equal(t.values, self.values)
        )

    def undirected_pairs(self):
        """(i, j) with i < j for a symmetric binary pattern, sorted lexicographically."""
        rows = self.row_ids()
        cols = self.col_indices
        keep = rows < cols
        return rows[keep], cols[keep]

    def dump_triples(self, path):
        rows = self.row_ids()
        with open(path, "w") as fh:
            for r, c, v in zip(rows, self.col_indices, self.values):
                fh.write(f"{r} {c} {float(v)!r}\n")

    @classmethod
    def from_coo(cls, rows, cols, vals, n_rows: int, n_cols: int) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.shape != cols.shape or rows.shape != vals.shape:
            raise ValueError("coo arrays must have equal length")
        if rows.shape[0]:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.shape[0] > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if np.any(dup):
                raise ValueError("duplicate coordinates")
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def from_undirected_edges(cls, rows, cols, n: int) -> "SparseMatrix":
        """Binary symmetric adjacency from an edge list; dedups and symmetrizes."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keep = rows != cols
        rows, cols = rows[keep], cols[keep]
        all_r = np.concatenate([rows, cols])
        all_c = np.concatenate([cols, rows])
        if all_r.shape[0]:
            pairs = np.unique(np.stack([all_r, all_c], axis=1), axis=0)
            all_r, all_c = pairs[:, 0], pairs[:, 1]
        return cls.from_coo(all_r, all_c, np.ones(all_r.shape[0]), n, n)


def build_social_adjacency(edges, n_users: int) -> SparseMatrix:
    """Binary symmetric user-user adjacency from (u, v) trust pairs.

    Self-loops are dropped; duplicates collapse to a single entry. Indices
    outside [0, n_users) are fatal.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0]:
        if edges.min() < 0 or edges.max() >= n_users:
            raise ValueError("social edge index out of range")
    return SparseMatrix.from_undirected_edges(edges[:, 0], edges[:, 1], n_users)


def sym_normalize(adj: SparseMatrix) -> SparseMatrix:
    """D^{-1/2} A D^{-1/2}; rows/cols of isolated nodes stay all-zero."""
    if adj.n_rows != adj.n_cols:
        raise ValueError("sym_normalize needs a square matrix")
    deg = np.zeros(adj.n_rows, dtype=np.float64)
    rows = adj.row_ids()
    np.add.at(deg, rows, adj.values)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    vals = adj.values * inv_sqrt[rows] * inv_sqrt[adj.col_indices]
    return SparseMatrix(
        adj.n_rows, adj.n_cols, adj.row_offsets, adj.col_indices, vals
    )


def build_interaction_matrix(pairs, n_users: int, m_items: int) -> SparseMatrix:
    """Binary user x item matrix from (user, item) pairs (duplicates collapse)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0]:
        if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= n_users:
            raise ValueError("user index out of range")
        if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= m_items:
            raise ValueError("item index out of range")
        uniq = np.unique(pairs, axis=0)
    else:
        uniq = pairs
    return SparseMatrix.from_coo(
        uniq[:, 0], uniq[:, 1], np.ones(uniq.shape[0]), n_users, m_items
    )


def build_bipartite_adjacency(interactions: SparseMatrix) -> SparseMatrix:
    """Symmetrically normalized (n+m) x (n+m) adjacency [[0, R], [R^T, 0]]."""
    n, m = interactions.shape
    ur = interactions.row_ids()
    ic = interactions.col_indices
    rows = np.concatenate([ur, ic + n])
    cols = np.concatenate([ic + n, ur])
    vals = np.concatenate([interactions.values, interactions.values])
    block = SparseMatrix.from_coo(rows, cols, vals, n + m, n + m)
    return sym_normalize(block)


# ---------------------------------------------------------------------------
# Sparsification


def sparsify_topk(
    social: SparseMatrix, emb, rho: float, scope: str = "user"
) -> SparseMatrix:
    """Similarity-driven edge filter on a binary symmetric social graph.

    scope="user": every user u keeps edges to its k_u = max(1, ceil(rho * d_u))
    most similar neighbors (inner product of emb rows, ties to the smaller
    neighbor index); the kept directed edges are then union-symmetrized.
    scope="global": the top ceil(rho * |E|) undirected edges by similarity are
    kept overall, ties to lexicographically smaller (i, j).
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    rows = social.row_ids()
    cols = social.col_indices
    sims = kernels.edge_rowdot(emb, rows, cols)
    n = social.n_rows
    if scope == "global":
        keep = rows < cols
        ur, uc, us = rows[keep], cols[keep], sims[keep]
        k = int(np.ceil(rho * ur.shape[0]))
        order = np.lexsort((uc, ur, -us))
        ur, uc = ur[order][:k], uc[order][:k]
        return SparseMatrix.from_undirected_edges(ur, uc, n)
    if scope != "user":
        raise ValueError(f"unknown sparsify scope: {scope!r}")
    deg = social.row_degrees()
    k_per = np.maximum(1, np.ceil(rho * deg).astype(np.int64))
    # group by source row, then similarity descending, then neighbor ascending
    order = np.lexsort((cols, -sims, rows))
    r_sorted, c_sorted = rows[order], cols[order]
    starts = social.row_offsets[:-1]
    rank_in_row = np.arange(rows.shape[0], dtype=np.int64) - starts[r_sorted]
    keep = rank_in_row < k_per[r_sorted]
    return SparseMatrix.from_undirected_edges(r_sorted[keep], c_sorted[keep], n)


def sparsify_random(social: SparseMatrix, rho_hat: float, seed: int) -> SparseMatrix:
    """Keep a random ceil(rho_hat * |E|) subset of undirected edges.

    rho_hat = 1 reproduces the input exactly. Same seed, same subset.
    """
    if not 0.0 < rho_hat <= 1.0:
        raise ValueError("rho_hat must be in (0, 1]")
    ur, uc = social.undirected_pairs()
    k = int(np.ceil(rho_hat * ur.shape[0]))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(ur.shape[0])[:k]
    return SparseMatrix.from_undirected_edges(ur[chosen], uc[chosen], social.n_rows)


@dataclass(frozen=True)
class CurriculumState:
    """Rolling schedule of graph refreshes: N epochs top-k, then M epochs random."""

    n_topk: int
    m_random: int
    rho: float
    rho_hat: float
    seed: int
    scope: str = "user"
    stage: str = "topk"
    active: SparseMatrix | None = None


def curriculum_step(
    state: CurriculumState, epoch: int, social: SparseMatrix, user_emb
) -> CurriculumState:
    """Advance the curriculum to `epoch`, refreshing the active graph if due.

    The top-k stage re-derives the graph from the current collaborative user
    embeddings at the start of each period; the random stage redraws with a
    seed tied to (base seed, epoch) so runs are reproducible.
    """
    if state.n_topk < 1 or state.m_random < 1:
        raise ValueError("curriculum lengths must satisfy N >= 1, M >= 1")
    period = state.n_topk + state.m_random
    if epoch == 0 or epoch % period == 0:
        sparse = sparsify_topk(social, user_emb, state.rho, state.scope)
        return replace(state, stage="topk", active=sym_normalize(sparse))
    if epoch % period == state.n_topk:
        sparse = sparsify_random(social, state.rho_hat, state.seed + epoch)
        return replace(state, stage="random", active=sym_normalize(sparse))
    if state.active is None:
        raise ValueError("curriculum must be initialized at epoch 0")
    return state
