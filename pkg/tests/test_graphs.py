"""Sparse matrix construction, normalization, and sparsifier behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sderec.graphs import (
    CurriculumState,
    SparseMatrix,
    build_bipartite_adjacency,
    build_interaction_matrix,
    build_social_adjacency,
    curriculum_step,
    sparsify_random,
    sparsify_topk,
    sym_normalize,
)


def edge_set(mat: SparseMatrix):
    return set(zip(mat.row_ids().tolist(), mat.col_indices.tolist()))


class TestSparseMatrix:
    def test_from_coo_sorts_and_validates(self):
        m = SparseMatrix.from_coo([1, 0, 0], [0, 2, 1], [3.0, 1.0, 2.0], 2, 3)
        assert m.nnz == 3
        np.testing.assert_array_equal(m.row_offsets, [0, 2, 3])
        np.testing.assert_array_equal(m.col_indices, [1, 2, 0])
        np.testing.assert_array_equal(m.values, [2.0, 1.0, 3.0])

    def test_duplicate_coordinates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparseMatrix.from_coo([0, 0], [1, 1], [1.0, 1.0], 2, 2)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            SparseMatrix.from_coo([0], [5], [1.0], 2, 3)

    def test_dense_roundtrip_and_transpose(self):
        rng = np.random.default_rng(0)
        dense = np.where(rng.random((6, 4)) < 0.4, rng.standard_normal((6, 4)), 0.0)
        rows, cols = np.nonzero(dense)
        m = SparseMatrix.from_coo(rows, cols, dense[rows, cols], 6, 4)
        np.testing.assert_array_equal(m.to_dense(), dense)
        np.testing.assert_array_equal(m.transpose().to_dense(), dense.T)

    def test_matmul_matches_dense(self):
        rng = np.random.default_rng(1)
        dense = np.where(rng.random((5, 7)) < 0.5, rng.standard_normal((5, 7)), 0.0)
        rows, cols = np.nonzero(dense)
        m = SparseMatrix.from_coo(rows, cols, dense[rows, cols], 5, 7)
        x = rng.standard_normal((7, 3))
        np.testing.assert_allclose(m.matmul(x), dense @ x, rtol=1e-12, atol=1e-13)

    def test_dump_triples(self, tmp_path):
        m = SparseMatrix.from_coo([0, 1], [1, 0], [0.5, 2.0], 2, 2)
        path = tmp_path / "m.txt"
        m.dump_triples(path)
        assert path.read_text().splitlines() == ["0 1 0.5", "1 0 2.0"]


class TestBuilders:
    def test_single_edge(self):
        s = build_social_adjacency([(0, 1)], 2)
        assert edge_set(s) == {(0, 1), (1, 0)}
        assert np.all(s.values == 1.0)

    def test_reverse_duplicate_collapses(self):
        s = build_social_adjacency([(0, 1), (1, 0)], 2)
        assert edge_set(s) == {(0, 1), (1, 0)}

    def test_triangle_has_six_entries(self):
        s = build_social_adjacency([(0, 1), (1, 2), (0, 2)], 3)
        assert s.nnz == 6

    def test_out_of_range_fatal(self):
        with pytest.raises(ValueError):
            build_social_adjacency([(0, 3)], 2)

    def test_self_loop_dropped(self):
        s = build_social_adjacency([(1, 1), (0, 1)], 2)
        assert edge_set(s) == {(0, 1), (1, 0)}


class TestSymNormalize:
    def test_unit_degrees(self):
        s = build_social_adjacency([(0, 1)], 2)
        n = sym_normalize(s)
        assert n.to_dense()[0, 1] == 1.0

    def test_triangle_all_half(self):
        s = build_social_adjacency([(0, 1), (1, 2), (0, 2)], 3)
        dense = sym_normalize(s).to_dense()
        np.testing.assert_allclose(dense[dense > 0], 0.5)

    def test_isolated_row_stays_zero(self):
        s = build_social_adjacency([(0, 1)], 3)
        dense = sym_normalize(s).to_dense()
        assert np.all(dense[2] == 0) and np.all(dense[:, 2] == 0)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        n = 12
        mask = np.triu(rng.random((n, n)) < 0.3, k=1)
        adj = (mask | mask.T).astype(float)
        rows, cols = np.nonzero(adj)
        s = SparseMatrix.from_coo(rows, cols, adj[rows, cols], n, n)
        deg = adj.sum(axis=1)
        inv = np.where(deg > 0, 1 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        want = adj * inv[:, None] * inv[None, :]
        np.testing.assert_allclose(sym_normalize(s).to_dense(), want, rtol=1e-12)

    def test_spectral_radius_at_most_one(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            n = int(rng.integers(5, 60))
            mask = np.triu(rng.random((n, n)) < 0.2, k=1)
            adj = (mask | mask.T).astype(float)
            rows, cols = np.nonzero(adj)
            if rows.size == 0:
                continue
            s = SparseMatrix.from_coo(rows, cols, adj[rows, cols], n, n)
            eigs = np.linalg.eigvalsh(sym_normalize(s).to_dense())
            assert np.max(np.abs(eigs)) <= 1 + 1e-6


class TestBipartite:
    def test_one_user_one_item(self):
        r = build_interaction_matrix([(0, 0)], 1, 1)
        dense = build_bipartite_adjacency(r).to_dense()
        np.testing.assert_allclose(dense, [[0, 1], [1, 0]])

    def test_degree_two_user(self):
        # user 0 with items 0 and 1, each item only hers
        r = build_interaction_matrix([(0, 0), (0, 1)], 1, 2)
        dense = build_bipartite_adjacency(r).to_dense()
        np.testing.assert_allclose(dense[0, 1:], 1 / np.sqrt(2))

    def test_empty_interactions(self):
        r = build_interaction_matrix(np.zeros((0, 2), dtype=np.int64), 2, 3)
        dense = build_bipartite_adjacency(r).to_dense()
        assert dense.shape == (5, 5)
        assert np.all(dense == 0)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        n, m = 6, 9
        mask = rng.random((n, m)) < 0.3
        pairs = np.argwhere(mask)
        if pairs.size == 0:
            pairs = np.array([[0, 0]])
        r = build_interaction_matrix(pairs, n, m)
        block = np.zeros((n + m, n + m))
        dense_r = np.zeros((n, m))
        dense_r[pairs[:, 0], pairs[:, 1]] = 1.0
        block[:n, n:] = dense_r
        block[n:, :n] = dense_r.T
        deg = block.sum(axis=1)
        inv = np.where(deg > 0, 1 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        want = block * inv[:, None] * inv[None, :]
        np.testing.assert_allclose(
            build_bipartite_adjacency(r).to_dense(), want, rtol=1e-12
        )


class TestSparsifyTopk:
    def test_rho_one_is_identity_on_edges(self):
        rng = np.random.default_rng(5)
        s = build_social_adjacency(
            [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)], 4
        )
        emb = rng.standard_normal((4, 6))
        out = sparsify_topk(s, emb, 1.0)
        assert edge_set(out) == edge_set(s)

    def test_keeps_most_similar_neighbor(self):
        # 0 prefers 1 over 2; 2 prefers 3 over 0; edge (0,2) vanishes
        s = build_social_adjacency([(0, 1), (0, 2), (2, 3)], 4)
        emb = np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.9, 0.0, 0.0, 0.0],
                [0.1, 1.0, 0.0, 0.0],
                [0.0, 0.8, 0.0, 0.0],
            ]
        )
        out = sparsify_topk(s, emb, 0.5)
        assert edge_set(out) == {(0, 1), (1, 0), (2, 3), (3, 2)}

    def test_tie_breaks_to_smaller_index(self):
        # user 0 ties between neighbors 2 and 5; 5 has a better partner
        s = build_social_adjacency([(0, 2), (0, 5), (4, 5)], 6)
        emb = np.zeros((6, 3))
        emb[0] = [1.0, 0.0, 0.0]
        emb[2] = [0.5, 0.0, 0.0]
        emb[4] = [0.0, 1.0, 0.0]
        emb[5] = [0.5, 1.0, 0.0]
        out = sparsify_topk(s, emb, 0.5)
        assert edge_set(out) == {(0, 2), (2, 0), (4, 5), (5, 4)}

    def test_global_scope_keeps_top_fraction(self):
        s = build_social_adjacency([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
        emb = np.eye(4)
        emb[1, 0] = 2.0  # edge (0,1) has the highest inner product
        out = sparsify_topk(s, emb, 0.25, scope="global")
        assert edge_set(out) == {(0, 1), (1, 0)}

    def test_invalid_rho(self):
        s = build_social_adjacency([(0, 1)], 2)
        with pytest.raises(ValueError):
            sparsify_topk(s, np.eye(2), 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 1.0))
    def test_edges_always_subset(self, seed, rho):
        rng = np.random.default_rng(seed)
        n = 8
        mask = np.triu(rng.random((n, n)) < 0.4, k=1)
        pairs = np.argwhere(mask)
        if pairs.size == 0:
            return
        s = build_social_adjacency(pairs, n)
        emb = rng.standard_normal((n, 4))
        out = sparsify_topk(s, emb, rho)
        assert edge_set(out) <= edge_set(s)
        # per-user floor of one neighbor
        assert np.all(out.row_degrees()[s.row_degrees() > 0] >= 1)


class TestSparsifyRandom:
    def make(self):
        return build_social_adjacency(
            [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5), (0, 5), (2, 5), (3, 5)],
            6,
        )

    def test_rho_one_identity(self):
        s = self.make()
        out = sparsify_random(s, 1.0, seed=0)
        assert edge_set(out) == edge_set(s)
        np.testing.assert_array_equal(out.row_offsets, s.row_offsets)
        np.testing.assert_array_equal(out.col_indices, s.col_indices)

    def test_exact_count(self):
        s = self.make()  # 10 undirected edges
        out = sparsify_random(s, 0.8, seed=1)
        assert len(edge_set(out)) == 16  # 8 undirected edges stored twice

    def test_same_seed_same_edges(self):
        s = self.make()
        a = sparsify_random(s, 0.5, seed=42)
        b = sparsify_random(s, 0.5, seed=42)
        assert edge_set(a) == edge_set(b)

    def test_subset(self):
        s = self.make()
        out = sparsify_random(s, 0.3, seed=3)
        assert edge_set(out) <= edge_set(s)


class TestCurriculum:
    def run_schedule(self, n, m, epochs):
        rng = np.random.default_rng(0)
        s = build_social_adjacency(
            [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 4)], 5
        )
        emb = rng.standard_normal((5, 4))
        state = CurriculumState(n_topk=n, m_random=m, rho=0.6, rho_hat=0.6, seed=9)
        events = {}
        for epoch in range(epochs):
            prev = state.active
            state = curriculum_step(state, epoch, s, emb)
            if state.active is not prev:
                events[epoch] = state.stage
        return events

    def test_schedule_n3_m2(self):
        assert self.run_schedule(3, 2, 10) == {
            0: "topk",
            3: "random",
            5: "topk",
            8: "random",
        }

    def test_schedule_n1_m1(self):
        events = self.run_schedule(1, 1, 4)
        assert events == {0: "topk", 1: "random", 2: "topk", 3: "random"}

    def test_replay_reproduces_matrices(self):
        def run():
            rng = np.random.default_rng(1)
            s = build_social_adjacency([(0, 1), (1, 2), (0, 2), (2, 3)], 4)
            emb = rng.standard_normal((4, 3))
            state = CurriculumState(n_topk=2, m_random=2, rho=0.5, rho_hat=0.5, seed=5)
            mats = []
            for epoch in range(8):
                state = curriculum_step(state, epoch, s, emb)
                mats.append(state.active.to_dense().copy())
            return mats

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_uninitialized_midstream_fails(self):
        s = build_social_adjacency([(0, 1)], 2)
        state = CurriculumState(n_topk=2, m_random=2, rho=1.0, rho_hat=1.0, seed=0)
        with pytest.raises(ValueError):
            curriculum_step(state, 1, s, np.eye(2))
