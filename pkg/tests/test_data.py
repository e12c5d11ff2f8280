"""Tests for interaction loading, filtering, splitting, and propagation."""

import numpy as np
import pytest

from dualintent import data as dt
from dualintent.errors import EmptyDatasetError, InvariantError, ParseError, ShapeError

from helpers import dense_propagation_oracle, random_bipartite_edges


def write_tsv(tmp_path, rows, name="interactions.tsv"):
    path = tmp_path / name
    path.write_text("\n".join("\t".join(str(f) for f in row) for row in rows) + "\n")
    return path


class TestLoadInteractions:
    def test_rating_filter_and_reindexing(self, tmp_path):
        path = write_tsv(tmp_path, [("a", "x", 5), ("a", "y", 2), ("b", "x", 4)])
        edges = dt.load_interactions(path, min_rating=3)
        assert edges.user_count == 2 and edges.item_count == 1
        assert sorted(map(tuple, edges.pairs.tolist())) == [(0, 0), (1, 0)]

    def test_duplicates_collapse(self, tmp_path):
        path = write_tsv(tmp_path, [("a", "x"), ("a", "x"), ("b", "y")])
        edges = dt.load_interactions(path)
        assert len(edges) == 2

    def test_missing_item_token_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tx\nb\n")
        with pytest.raises(ParseError) as excinfo:
            dt.load_interactions(path)
        assert excinfo.value.line_number == 2

    def test_bad_rating_is_parse_error(self, tmp_path):
        path = write_tsv(tmp_path, [("a", "x", "high")])
        with pytest.raises(ParseError):
            dt.load_interactions(path)

    def test_empty_result_raises(self, tmp_path):
        path = write_tsv(tmp_path, [("a", "x", 1)])
        with pytest.raises(EmptyDatasetError):
            dt.load_interactions(path, min_rating=3)

    def test_rating_free_rows_ignore_min_rating(self, tmp_path):
        path = write_tsv(tmp_path, [("a", "x"), ("b", "y")])
        edges = dt.load_interactions(path, min_rating=3)
        assert len(edges) == 2


class TestKCore:
    def test_star_graph_collapses(self):
        pairs = np.array([[0, i] for i in range(5)])
        edges = dt.EdgeList(pairs, 1, 5)
        with pytest.raises(EmptyDatasetError):
            dt.k_core_filter(edges, 2)

    def test_complete_bipartite_fixpoint(self):
        pairs = np.array([[u, v] for u in range(3) for v in range(3)])
        edges = dt.EdgeList(pairs, 3, 3)
        out = dt.k_core_filter(edges, 3)
        assert len(out) == 9

    def test_chain_peeling_matches_oracle(self):
        # u1-i1, u1-i2, u2-i2 with k=2: peeling i1 drops u1 below 2, then
        # everything unravels. Brute-force peeling confirms the empty result.
        pairs = np.array([[0, 0], [0, 1], [1, 1]])
        edges = dt.EdgeList(pairs, 2, 2)
        assert self._peel_oracle(pairs, 2, 2, 2) == []
        with pytest.raises(EmptyDatasetError):
            dt.k_core_filter(edges, 2)

    @staticmethod
    def _peel_oracle(pairs, users, items, k):
        alive = {tuple(p) for p in pairs.tolist()}
        while True:
            du = {}
            dv = {}
            for u, v in alive:
                du[u] = du.get(u, 0) + 1
                dv[v] = dv.get(v, 0) + 1
            doomed = {
                (u, v) for u, v in alive if du[u] < k or dv[v] < k
            }
            if not doomed:
                return sorted(alive)
            alive -= doomed

    def test_random_graphs_match_peel_oracle_and_fixpoint(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            edges = random_bipartite_edges(rng, 8, 8, 20)
            k = int(rng.integers(1, 4))
            expect = self._peel_oracle(edges.pairs, edges.user_count, edges.item_count, k)
            try:
                out = dt.k_core_filter(edges, k)
            except EmptyDatasetError:
                assert expect == []
                continue
            assert len(out) == len(expect)
            again = dt.k_core_filter(out, k)
            assert np.array_equal(again.pairs, out.pairs)


class TestLargestComponent:
    def test_two_disjoint_edges_tiebreak(self):
        edges = dt.EdgeList(np.array([[0, 0], [1, 1]]), 2, 2)
        out = dt.largest_connected_component(edges)
        assert len(out) == 1
        assert out.pairs.tolist() == [[0, 0]]

    def test_path_beats_isolated_edge(self):
        # path u0-i0-u1-i1 (4 nodes) plus isolated edge u2-i2
        edges = dt.EdgeList(np.array([[0, 0], [1, 0], [1, 1], [2, 2]]), 3, 3)
        out = dt.largest_connected_component(edges)
        assert len(out) == 3
        assert out.user_count == 2 and out.item_count == 2

    def test_random_graph_matches_union_find(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            edges = random_bipartite_edges(rng, 10, 10, 50)
            got = dt.largest_connected_component(edges)
            assert len(got) == self._union_find_oracle(edges)

    @staticmethod
    def _union_find_oracle(edges):
        m = edges.user_count
        parent = list(range(m + edges.item_count))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v in edges.pairs:
            parent[find(u)] = find(m + v)
        comps = {}
        for u, v in edges.pairs:
            comps.setdefault(find(u), [set(), 0])
            comps[find(u)][0].update({u, m + v})
            comps[find(u)][1] += 1
        best = max(comps.values(), key=lambda entry: (len(entry[0]), entry[1]))
        return best[1]


class TestSplit:
    def test_five_interactions_split_exactly(self):
        pairs = np.array([[0, v] for v in range(5)] + [[1, v] for v in range(5)])
        edges = dt.EdgeList(pairs, 2, 5)
        split = dt.split_dataset(edges, seed=0)
        counts = np.bincount(split.train.pairs[:, 0], minlength=2)
        assert counts.tolist() == [3, 3]
        assert len(split.validation) == 2 and len(split.test) == 2

    def test_four_interactions_remainder_to_train(self):
        pairs = np.array([[0, v] for v in range(4)] + [[1, v] for v in range(4)])
        edges = dt.EdgeList(pairs, 2, 4)
        split = dt.split_dataset(edges, seed=1)
        assert np.bincount(split.train.pairs[:, 0], minlength=2).tolist() == [3, 3]
        assert np.bincount(split.validation.pairs[:, 0], minlength=2).tolist() == [1, 1]
        assert len(split.test) == 0

    def test_determinism_and_seed_sensitivity(self):
        rng = np.random.default_rng(3)
        edges = random_bipartite_edges(rng, 40, 40, 1000)
        a = dt.split_dataset(edges, seed=5)
        b = dt.split_dataset(edges, seed=5)
        c = dt.split_dataset(edges, seed=6)
        assert np.array_equal(a.train.pairs, b.train.pairs)
        assert np.array_equal(a.test.pairs, b.test.pairs)
        assert not np.array_equal(a.train.pairs, c.train.pairs)

    def test_partition_and_coverage_invariants(self):
        rng = np.random.default_rng(4)
        for trial in range(25):
            edges = random_bipartite_edges(rng, 12, 12, 60)
            split = dt.split_dataset(edges, seed=trial)
            parts = [split.train, split.validation, split.test]
            rows = {tuple(p) for part in parts for p in part.pairs.tolist()}
            assert len(rows) == sum(len(p) for p in parts) == len(edges)
            assert rows == {tuple(p) for p in edges.pairs.tolist()}
            train_users = set(split.train.pairs[:, 0].tolist())
            train_items = set(split.train.pairs[:, 1].tolist())
            for part in (split.validation, split.test):
                assert set(part.pairs[:, 0].tolist()) <= train_users
                assert set(part.pairs[:, 1].tolist()) <= train_items


class TestGraph:
    def test_single_edge_weight_one(self):
        graph = dt.build_graph(dt.EdgeList(np.array([[0, 0]]), 1, 1))
        assert graph.fwd_weights[0] == pytest.approx(1.0)

    def test_hand_degree_weights(self):
        # u0-{i0,i1}, u1-i0: weight(u0,i0) = 1/sqrt(2*2)
        graph = dt.build_graph(dt.EdgeList(np.array([[0, 0], [0, 1], [1, 0]]), 2, 2))
        w = dict()
        for u in range(2):
            for slot in range(graph.fwd_indptr[u], graph.fwd_indptr[u + 1]):
                w[(u, int(graph.fwd_indices[slot]))] = graph.fwd_weights[slot]
        assert w[(0, 0)] == pytest.approx(0.5)
        assert w[(0, 1)] == pytest.approx(1.0 / np.sqrt(2))
        assert w[(1, 0)] == pytest.approx(1.0 / np.sqrt(2))

    def test_zero_degree_node_rejected(self):
        bad = dt.EdgeList(np.array([[0, 0]]), 2, 1)  # user 1 has no edges
        with pytest.raises(InvariantError):
            dt.build_graph(bad)

    def test_weights_match_dense_oracle(self):
        rng = np.random.default_rng(9)
        edges = random_bipartite_edges(rng, 8, 8, 30)
        graph = dt.build_graph(edges)
        m = edges.user_count
        dense = np.zeros((m + edges.item_count, m + edges.item_count))
        for u, v in edges.pairs:
            dense[u, m + v] = dense[m + v, u] = 1.0
        d = dense.sum(axis=1)
        norm = dense / np.sqrt(np.outer(d, d))
        for u in range(m):
            for slot in range(graph.fwd_indptr[u], graph.fwd_indptr[u + 1]):
                v = int(graph.fwd_indices[slot])
                assert graph.fwd_weights[slot] == pytest.approx(norm[u, m + v], abs=1e-12)


class TestPropagate:
    def test_single_edge_swap(self):
        edges = dt.EdgeList(np.array([[0, 0]]), 1, 1)
        graph = dt.build_graph(edges)
        layers = dt.propagate(graph, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 1)
        np.testing.assert_allclose(layers[1][0], [[0.0, 1.0]])
        np.testing.assert_allclose(layers[1][1], [[1.0, 0.0]])

    def test_zero_hops_identity(self):
        rng = np.random.default_rng(0)
        edges = random_bipartite_edges(rng, 5, 5, 12)
        graph = dt.build_graph(edges)
        ue = rng.standard_normal((edges.user_count, 3))
        ve = rng.standard_normal((edges.item_count, 3))
        layers = dt.propagate(graph, ue, ve, 0)
        assert len(layers) == 1
        np.testing.assert_array_equal(layers[0][0], ue)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            edges = random_bipartite_edges(rng, 10, 10, 35)
            graph = dt.build_graph(edges)
            ue = rng.standard_normal((edges.user_count, 4))
            ve = rng.standard_normal((edges.item_count, 4))
            got = dt.propagate(graph, ue, ve, 3)
            want = dense_propagation_oracle(edges, ue, ve, 3)
            for layer in range(4):
                np.testing.assert_allclose(got[layer][0], want[layer][0], atol=1e-10)
                np.testing.assert_allclose(got[layer][1], want[layer][1], atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        edges = random_bipartite_edges(rng, 6, 6, 18)
        graph = dt.build_graph(edges)
        ue = rng.standard_normal((edges.user_count, 3))
        ve = rng.standard_normal((edges.item_count, 3))
        base = dt.propagate(graph, ue, ve, 2)
        scaled = dt.propagate(graph, 2.5 * ue, 2.5 * ve, 2)
        for layer in range(3):
            np.testing.assert_allclose(scaled[layer][0], 2.5 * base[layer][0], atol=1e-12)

    def test_sqrt_degree_direction_is_stationary(self):
        # On a connected bipartite graph the vector sqrt(deg) is a +1
        # eigenvector of the normalized adjacency (checked densely).
        rng = np.random.default_rng(8)
        edges = dt.EdgeList(
            np.array([[0, 0], [0, 1], [1, 0], [1, 2], [2, 1], [2, 2]]), 3, 3
        )
        graph = dt.build_graph(edges)
        stationary_u = np.sqrt(graph.user_degrees.astype(float))[:, None]
        stationary_v = np.sqrt(graph.item_degrees.astype(float))[:, None]
        layers = dt.propagate(graph, stationary_u, stationary_v, 1)
        np.testing.assert_allclose(layers[1][0], stationary_u, atol=1e-12)
        np.testing.assert_allclose(layers[1][1], stationary_v, atol=1e-12)

    def test_shape_mismatch_raises(self):
        edges = dt.EdgeList(np.array([[0, 0]]), 1, 1)
        graph = dt.build_graph(edges)
        with pytest.raises(ShapeError):
            dt.propagate(graph, np.zeros((2, 3)), np.zeros((1, 3)), 1)


def test_dataset_stats_schema():
    rng = np.random.default_rng(12)
    edges = random_bipartite_edges(rng, 10, 10, 19)
    stats = dt.dataset_stats(edges)
    density = 19 / (edges.user_count * edges.item_count)
    assert stats["interactions"] == 19
    assert stats["sparsity"] == f"{100 * (1 - density):.2f}%"


def test_split_roundtrip_via_dir(tmp_path):
    rng = np.random.default_rng(13)
    edges = random_bipartite_edges(rng, 15, 15, 120)
    split = dt.split_dataset(edges, seed=2)
    import json

    (tmp_path / "dataset_stats.json").write_text(json.dumps(dt.dataset_stats(edges)))
    dt.write_edges_tsv(tmp_path / "train.tsv", split.train)
    dt.write_edges_tsv(tmp_path / "validation.tsv", split.validation)
    dt.write_edges_tsv(tmp_path / "test.tsv", split.test)
    loaded = dt.read_split_dir(tmp_path)
    assert np.array_equal(loaded.train.pairs, split.train.pairs)
    assert np.array_equal(loaded.test.pairs, split.test.pairs)
