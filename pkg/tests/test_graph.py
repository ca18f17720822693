"""Adjacency assembly and normalization against dense-matrix oracles."""

import logging

import numpy as np
import pytest

from crossrec.graph import (
    GraphBuildError,
    InteractionGraph,
    KnowledgeLinkage,
    SparseGraph,
    assemble_adjacency,
    normalize_symmetric,
    scope_entity_edges,
)


def dense_block_oracle(graph, kg):
    """Independent dense construction of the block adjacency."""
    item_entity = kg.item_entity_for(graph.domain_tag)
    n_u, n_i, n_e = graph.user_count, graph.item_count, kg.entity_count
    n = n_u + n_i + n_e
    dense = np.zeros((n, n))
    for u, i in graph.edges:
        dense[u, n_u + i] = 1
        dense[n_u + i, u] = 1
    for i, e in item_entity:
        dense[n_u + i, n_u + n_i + e] = 1
        dense[n_u + n_i + e, n_u + i] = 1
    for a, b in kg.entity_edges:
        if a == b:
            continue
        dense[n_u + n_i + a, n_u + n_i + b] = 1
        dense[n_u + n_i + b, n_u + n_i + a] = 1
    return dense


def dense_normalize_oracle(dense):
    deg = (dense != 0).sum(axis=1).astype(float)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.diag(inv) @ dense @ np.diag(inv)


def random_instance(rng, max_users=6, max_items=8, max_entities=6):
    n_u = int(rng.integers(1, max_users + 1))
    n_i = int(rng.integers(1, max_items + 1))
    n_e = int(rng.integers(1, max_entities + 1))
    pairs = [(u, i) for u in range(n_u) for i in range(n_i)]
    take = rng.permutation(len(pairs))[: max(1, int(0.4 * len(pairs)))]
    edges = [pairs[t] for t in take]
    links = [(i, int(rng.integers(n_e))) for i in range(n_i) if rng.random() < 0.7]
    entity_edges = [
        (a, b) for a in range(n_e) for b in range(n_e) if a != b and rng.random() < 0.3
    ]
    graph = InteractionGraph("source", n_u, n_i, edges)
    kg = KnowledgeLinkage(
        n_e,
        np.asarray(entity_edges, dtype=np.int64).reshape(len(entity_edges), 2),
        np.asarray(links, dtype=np.int64).reshape(len(links), 2),
        np.zeros((0, 2)),
    )
    return graph, kg


class TestAssembleAdjacency:
    def test_single_triple_chain(self):
        graph = InteractionGraph("source", 1, 1, [(0, 0)])
        kg = KnowledgeLinkage(1, np.zeros((0, 2)), [(0, 0)], np.zeros((0, 2)))
        result = assemble_adjacency(graph, kg)
        dense = result.matrix.toarray()
        assert result.nnz == 4
        expected = {(0, 1), (1, 0), (1, 2), (2, 1)}
        assert {tuple(idx) for idx in np.argwhere(dense)} == expected

    def test_empty_inputs(self):
        graph = InteractionGraph("source", 2, 2, np.zeros((0, 2)))
        result = assemble_adjacency(graph, KnowledgeLinkage.empty())
        assert result.nnz == 0
        assert result.node_count == 4

    def test_block_count_oracle(self):
        # 2 users, 3 items, 2 entities, 4 interactions, 2 links, 1 entity edge
        graph = InteractionGraph("source", 2, 3, [(0, 0), (0, 1), (1, 1), (1, 2)])
        kg = KnowledgeLinkage(2, [(0, 1)], [(0, 0), (2, 1)], np.zeros((0, 2)))
        result = assemble_adjacency(graph, kg)
        assert result.nnz == 2 * 4 + 2 * 2 + 2 * 1
        assert np.array_equal(
            result.matrix.toarray(), dense_block_oracle(graph, kg)
        )

    def test_matches_dense_oracle_randomized(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            graph, kg = random_instance(rng)
            result = assemble_adjacency(graph, kg)
            assert np.array_equal(result.matrix.toarray(), dense_block_oracle(graph, kg))

    def test_out_of_range_rejected_with_edge(self):
        with pytest.raises(GraphBuildError, match=r"\(0, 5\)"):
            InteractionGraph("source", 2, 3, [(0, 5)])

    def test_duplicates_collapse_with_warning(self, caplog):
        graph = InteractionGraph("source", 2, 2, [(0, 0), (0, 0), (1, 1)])
        with caplog.at_level(logging.WARNING):
            result = assemble_adjacency(graph, KnowledgeLinkage.empty())
        assert result.nnz == 4
        assert "1 duplicate interaction" in caplog.text

    def test_entity_self_loops_dropped(self, caplog):
        graph = InteractionGraph("source", 1, 1, [(0, 0)])
        kg = KnowledgeLinkage(2, [(0, 0), (0, 1)], [(0, 0)], np.zeros((0, 2)))
        with caplog.at_level(logging.WARNING):
            result = assemble_adjacency(graph, kg)
        assert np.all(result.matrix.diagonal() == 0)
        assert "self-loops" in caplog.text

    def test_diagonal_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            graph, kg = random_instance(rng)
            result = assemble_adjacency(graph, kg)
            assert np.all(result.matrix.diagonal() == 0)


class TestNormalizeSymmetric:
    def test_single_edge_unit_weight(self):
        graph = InteractionGraph("source", 1, 1, [(0, 0)])
        normalized = normalize_symmetric(assemble_adjacency(graph, KnowledgeLinkage.empty()))
        dense = normalized.matrix.toarray()
        assert dense[0, 1] == 1.0 and dense[1, 0] == 1.0

    def test_hub_weights(self):
        # user 0 interacts with 4 items, each of degree 1
        graph = InteractionGraph("source", 1, 4, [(0, i) for i in range(4)])
        normalized = normalize_symmetric(assemble_adjacency(graph, KnowledgeLinkage.empty()))
        assert np.allclose(normalized.values, 0.5)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            graph, kg = random_instance(rng)
            raw = assemble_adjacency(graph, kg)
            normalized = normalize_symmetric(raw)
            oracle = dense_normalize_oracle(raw.matrix.toarray())
            assert np.abs(normalized.matrix.toarray() - oracle).max() <= 1e-12

    def test_pattern_preserved_and_values_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            graph, kg = random_instance(rng)
            raw = assemble_adjacency(graph, kg)
            normalized = normalize_symmetric(raw)
            assert np.array_equal(raw.matrix.indptr, normalized.matrix.indptr)
            assert np.array_equal(raw.matrix.indices, normalized.matrix.indices)
            dense = normalized.matrix.toarray()
            assert np.array_equal(dense, dense.T)

    def test_degree_identity(self):
        # for each node a: sum_b value(a, b) * sqrt(deg(b)) == sqrt(deg(a))
        rng = np.random.default_rng(13)
        for _ in range(10):
            graph, kg = random_instance(rng)
            raw = assemble_adjacency(graph, kg)
            normalized = normalize_symmetric(raw)
            deg = raw.degrees().astype(float)
            lhs = normalized.matrix @ np.sqrt(deg)
            assert np.allclose(lhs[deg > 0], np.sqrt(deg[deg > 0]), atol=1e-12)

    def test_zero_degree_rows_skipped(self):
        graph = InteractionGraph("source", 2, 2, [(0, 0)])
        kg = KnowledgeLinkage(3, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))
        normalized = normalize_symmetric(assemble_adjacency(graph, kg))
        assert np.isfinite(normalized.values).all()
        assert normalized.degrees()[1] == 0  # user 1 has no edges

    def test_requires_symmetry(self):
        import scipy.sparse as sp

        lopsided = SparseGraph(1, 1, 0, sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))
        with pytest.raises(GraphBuildError):
            normalize_symmetric(lopsided)


class TestEntityScoping:
    def test_radius_one_keeps_seed_neighborhood(self):
        # entities: 0 linked by an item; chain 0-1-2-3
        kg = KnowledgeLinkage(
            4, [(0, 1), (1, 2), (2, 3)], [(0, 0)], np.zeros((0, 2))
        )
        scoped, dropped = scope_entity_edges(kg, hop_radius=1)
        assert dropped == 2
        assert scoped.entity_edges.tolist() == [[0, 1]]
        assert scoped.entity_count == 4  # index space unchanged

    def test_radius_two_extends(self):
        kg = KnowledgeLinkage(
            4, [(0, 1), (1, 2), (2, 3)], [(0, 0)], np.zeros((0, 2))
        )
        scoped, dropped = scope_entity_edges(kg, hop_radius=2)
        assert dropped == 1
        assert scoped.entity_edges.tolist() == [[0, 1], [1, 2]]

    def test_no_edges_noop(self):
        kg = KnowledgeLinkage.empty()
        scoped, dropped = scope_entity_edges(kg, 1)
        assert dropped == 0 and scoped is kg
