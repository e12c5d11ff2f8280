"""Tests for semantic vector ingestion, synthesis, and projection."""

import numpy as np
import pytest

from dualintent import autodiff as ad
from dualintent import data as dt
from dualintent import semantic as sm
from dualintent.errors import AlignmentError, FormatError, ShapeError

from helpers import gradcheck, random_bipartite_edges


class TestFiles:
    def test_binary_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.standard_normal((3, 4)).astype(np.float32)
        path = tmp_path / "user.vec"
        sm.write_semantic_vectors(path, mat)
        back = sm._read_matrix(path)
        assert back.shape == (3, 4)
        np.testing.assert_array_equal(back.astype(np.float32), mat)

    def test_tsv_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        mat = rng.standard_normal((4, 3)).astype(np.float32)
        path = tmp_path / "item.tsv"
        sm.write_semantic_vectors(path, mat)
        back = sm._read_matrix(path)
        np.testing.assert_array_equal(back.astype(np.float32), mat)

    def test_load_pair_and_dimension_inference(self, tmp_path):
        rng = np.random.default_rng(2)
        sm.write_semantic_vectors(tmp_path / "u.vec", rng.standard_normal((3, 4)))
        sm.write_semantic_vectors(tmp_path / "v.vec", rng.standard_normal((5, 4)))
        store = sm.load_semantic_vectors(tmp_path / "u.vec", tmp_path / "v.vec", 3, 5)
        assert store.source_dim == 4

    def test_row_count_mismatch(self, tmp_path):
        rng = np.random.default_rng(3)
        sm.write_semantic_vectors(tmp_path / "u.vec", rng.standard_normal((2, 4)))
        sm.write_semantic_vectors(tmp_path / "v.vec", rng.standard_normal((5, 4)))
        with pytest.raises(AlignmentError):
            sm.load_semantic_vectors(tmp_path / "u.vec", tmp_path / "v.vec", 3, 5)

    def test_ragged_tsv_is_format_error(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("1.0\t2.0\n3.0\n")
        with pytest.raises(FormatError):
            sm._read_matrix(path)

    def test_truncated_binary_is_format_error(self, tmp_path):
        path = tmp_path / "bad.vec"
        sm.write_semantic_vectors(path, np.zeros((2, 2)))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            sm._read_matrix(path)


class TestSynth:
    def _graph(self, seed=0, users=12, items=10, edges=40):
        rng = np.random.default_rng(seed)
        return dt.build_graph(random_bipartite_edges(rng, users, items, edges))

    def test_zero_noise_clusters_identical(self):
        graph = self._graph()
        store = sm.synth_semantic_vectors(graph, 8, 2, 0.0, seed=1)
        cluster0 = store.raw_item[0::2]
        np.testing.assert_allclose(
            cluster0, np.tile(cluster0[0], (len(cluster0), 1)), atol=1e-12
        )

    def test_single_cluster_user_equals_centroid(self):
        # One cluster, zero noise: every item vector is the centroid, so
        # every user mean is too.
        graph = self._graph(seed=5)
        store = sm.synth_semantic_vectors(graph, 6, 1, 0.0, seed=2)
        np.testing.assert_allclose(
            store.raw_user,
            np.tile(store.raw_item[0], (graph.user_count, 1)),
            atol=1e-12,
        )

    def test_cluster_separation_monte_carlo(self):
        graph = self._graph(seed=7, users=30, items=60, edges=200)
        store = sm.synth_semantic_vectors(graph, 64, 4, 0.1, seed=3)
        unit = store.raw_item / np.linalg.norm(store.raw_item, axis=1, keepdims=True)
        clusters = np.arange(graph.item_count) % 4
        rng = np.random.default_rng(4)
        same, cross = [], []
        for _ in range(100):
            i, j = rng.integers(0, graph.item_count, size=2)
            if i == j:
                continue
            sim = float(unit[i] @ unit[j])
            (same if clusters[i] == clusters[j] else cross).append(sim)
        assert np.mean(same) > np.mean(cross)

    def test_deterministic_for_seed(self):
        graph = self._graph(seed=9)
        a = sm.synth_semantic_vectors(graph, 8, 3, 0.2, seed=11)
        b = sm.synth_semantic_vectors(graph, 8, 3, 0.2, seed=11)
        np.testing.assert_array_equal(a.raw_item, b.raw_item)


class TestProjector:
    def test_identity_projector_passthrough(self):
        d = 4
        params = sm.ProjectorParams(
            w1=np.eye(d), b1=np.zeros(d), w2=np.eye(d), b2=np.zeros(d),
            nonlinearity="identity",
        )
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((6, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        store = sm.SemanticStore(raw_user=raw, raw_item=raw)
        s_user, s_item = sm.project_semantic(store, params)
        np.testing.assert_allclose(s_user, raw, atol=1e-9)

    def test_zero_weights_yield_normalized_bias(self):
        params = sm.ProjectorParams(
            w1=np.zeros((5, 8)), b1=np.zeros(8), w2=np.zeros((8, 3)),
            b2=np.array([3.0, 0.0, 4.0]),
        )
        store = sm.SemanticStore(
            raw_user=np.random.default_rng(6).standard_normal((4, 5)),
            raw_item=np.random.default_rng(7).standard_normal((2, 5)),
        )
        s_user, _ = sm.project_semantic(store, params)
        np.testing.assert_allclose(s_user, np.tile([0.6, 0.0, 0.8], (4, 1)), atol=1e-12)

    def test_projection_outputs_unit_norm(self):
        rng = np.random.default_rng(8)
        params = sm.init_projector(10, 4, rng)
        store = sm.SemanticStore(
            raw_user=rng.standard_normal((7, 10)), raw_item=rng.standard_normal((5, 10))
        )
        s_user, s_item = sm.project_semantic(store, params)
        np.testing.assert_allclose(np.linalg.norm(s_user, axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(s_item, axis=1), 1.0, atol=1e-6)

    def test_width_mismatch_raises(self):
        rng = np.random.default_rng(9)
        params = sm.init_projector(10, 4, rng)
        with pytest.raises(ShapeError):
            sm.project_rows(rng.standard_normal((3, 9)), params.w1, params.b1, params.w2, params.b2)

    def test_projector_gradients_match_fd(self):
        rng = np.random.default_rng(10)
        raw = rng.standard_normal((5, 6))
        arrays = {
            "w1": rng.standard_normal((6, 8)) * 0.4,
            "b1": rng.standard_normal(8) * 0.1,
            "w2": rng.standard_normal((8, 3)) * 0.4,
            "b2": rng.standard_normal(3) * 0.1,
        }

        def build(leaves):
            out = sm.project_rows(raw, leaves["w1"], leaves["b1"], leaves["w2"], leaves["b2"])
            return ad.tsum(out)

        assert gradcheck(build, arrays) < 1e-4

    def test_projection_deterministic(self):
        rng = np.random.default_rng(11)
        params = sm.init_projector(6, 3, rng)
        store = sm.SemanticStore(
            raw_user=rng.standard_normal((4, 6)), raw_item=rng.standard_normal((3, 6))
        )
        a = sm.project_semantic(store, params)
        b = sm.project_semantic(store, params)
        np.testing.assert_array_equal(a[0], b[0])
