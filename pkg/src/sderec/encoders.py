"""Graph encoders: weighted social GCN and LightGCN-style collaborative
propagation over the normalized bipartite graph."""

import math

import numpy as np

from . import autodiff as ad
from .graphs import SparseMatrix


def init_embedding(rows: int, dim: int, rng) -> np.ndarray:
    """Seeded uniform init in [-a, a], a = sqrt(6/(rows+dim))."""
    a = math.sqrt(6.0 / (rows + dim))
    return rng.uniform(-a, a, size=(rows, dim))


def social_encode(
    p_s,
    adj_norm: SparseMatrix,
    weights,
    activation: str = "leaky_relu",
    slope: float = 0.01,
) -> ad.Tensor:
    """L rounds of E <- phi(A E W_l) starting from the base table P_S.

    `weights` is the list of per-layer d x d matrices; activation is applied
    after every layer ("identity" disables it, which makes the encoder linear
    in P_S).
    """
    e = p_s if isinstance(p_s, ad.Tensor) else ad.const(p_s)
    if adj_norm.n_rows != adj_norm.n_cols or adj_norm.n_cols != e.value.shape[0]:
        raise ValueError("adjacency and embedding table disagree on n_users")
    for w in weights:
        w_t = w if isinstance(w, ad.Tensor) else ad.const(w)
        if w_t.value.shape != (e.value.shape[1], e.value.shape[1]):
            raise ValueError("layer weight must be d x d")
        e = ad.matmul(ad.spmm(adj_norm, e, adj_t=adj_norm), w_t)
        if activation == "leaky_relu":
            e = ad.leaky_relu(e, slope)
        elif activation != "identity":
            raise ValueError(f"unknown activation: {activation!r}")
    return e


def collab_encode(p_r, q, adj_norm: SparseMatrix, n_layers: int):
    """Parameter-free propagation of the stacked table [P_R; Q]: the output is
    the mean of layers 0..L, split back into the user and item blocks."""
    p_t = p_r if isinstance(p_r, ad.Tensor) else ad.const(p_r)
    q_t = q if isinstance(q, ad.Tensor) else ad.const(q)
    n = p_t.value.shape[0]
    m = q_t.value.shape[0]
    if adj_norm.shape != (n + m, n + m):
        raise ValueError("bipartite adjacency must be (n+m) x (n+m)")
    if n_layers < 0:
        raise ValueError("n_layers must be >= 0")
    e = ad.vstack(p_t, q_t)
    acc = e
    cur = e
    for _ in range(n_layers):
        cur = ad.spmm(adj_norm, cur, adj_t=adj_norm)
        acc = ad.add(acc, cur)
    out = ad.scale(acc, 1.0 / (n_layers + 1))
    return ad.rows(out, 0, n), ad.rows(out, n, n + m)
