"""k-NN graph construction and attention/fusion against loop-based oracles."""

import math

import numpy as np
import pytest

from crossreg.errors import ChannelMismatchError
from crossreg.graph import (
    GraphAttentionParams,
    KnnGraph,
    build_knn_graph,
    gated_fusion,
    knn_indices,
    light_gat_forward,
    stable_sigmoid,
)


def brute_force_knn(points: np.ndarray, k: int) -> list[list[int]]:
    """Oracle: per-point sort of (distance, index) pairs, self excluded."""
    n = len(points)
    out = []
    for i in range(n):
        ranked = sorted(
            (float(np.linalg.norm(points[i] - points[j])), j)
            for j in range(n)
            if j != i
        )
        out.append([j for _, j in ranked[: min(k, n - 1)]])
    return out


class TestKnn:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            n = int(rng.integers(5, 60))
            k = int(rng.integers(1, 12))
            pts = rng.uniform(-1, 1, (n, 3))
            got = knn_indices(pts, k)
            expected = brute_force_knn(pts, k)
            assert got.shape == (n, min(k, n - 1))
            for i in range(n):
                assert list(got[i]) == expected[i], f"trial {trial}, node {i}"

    def test_ties_prefer_smaller_index(self):
        pts = np.zeros((5, 2))  # all identical: every distance ties at 0
        got = knn_indices(pts, 3)
        assert list(got[0]) == [1, 2, 3]
        assert list(got[2]) == [0, 1, 3]
        assert list(got[4]) == [0, 1, 2]

    def test_neighbor_count_clamped(self):
        pts = np.random.default_rng(0).uniform(0, 1, (4, 3))
        assert knn_indices(pts, 10).shape == (4, 3)

    def test_distances_returned_sorted(self):
        pts = np.random.default_rng(1).uniform(0, 1, (30, 3))
        idx, dst = knn_indices(pts, 5, return_distances=True)
        assert np.all(np.diff(dst, axis=1) >= 0)
        np.testing.assert_allclose(
            dst[3], [np.linalg.norm(pts[3] - pts[j]) for j in idx[3]], atol=1e-12
        )

    def test_graph_invariants(self):
        pts = np.random.default_rng(2).uniform(0, 1, (50, 3))
        graph = build_knn_graph(pts, 6)
        assert graph.node_count == 50
        assert graph.neighbor_count == 6
        assert not np.any(graph.neighbor_indices == np.arange(50)[:, None])

    def test_rejects_self_loops(self):
        with pytest.raises(ValueError):
            KnnGraph(np.zeros((3, 2)), np.array([[0], [0], [1]]))

    def test_rejects_tiny_input(self):
        with pytest.raises(ValueError):
            knn_indices(np.zeros((1, 3)), 1)


class TestAttention:
    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(23)
        n, k, c = 7, 3, 4
        pts = rng.uniform(0, 1, (n, 2))
        feats = rng.standard_normal((n, c))
        params = GraphAttentionParams.initialize(c, seed=5)
        graph = build_knn_graph(pts, k)
        got = light_gat_forward(graph, feats, params)

        # oracle: plain python loops, math.exp softmax
        expected = np.zeros((n, c))
        for i in range(n):
            qi = params.query_proj @ feats[i]
            raw = []
            for j in graph.neighbor_indices[i]:
                kj = params.key_proj @ feats[j]
                raw.append(float(qi @ kj) / math.sqrt(c))
            m = max(raw)
            ws = [math.exp(r - m) for r in raw]
            total = sum(ws)
            for w, j in zip(ws, graph.neighbor_indices[i]):
                expected[i] += (w / total) * (params.value_proj @ feats[j])
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_identical_features_pass_through_value_proj(self):
        # all rows equal: attention output is V f regardless of weights
        rng = np.random.default_rng(3)
        f0 = rng.standard_normal(6)
        feats = np.tile(f0, (10, 1))
        params = GraphAttentionParams.initialize(6, seed=9)
        graph = build_knn_graph(rng.uniform(0, 1, (10, 3)), 4)
        out = light_gat_forward(graph, feats, params)
        np.testing.assert_allclose(out, np.tile(params.value_proj @ f0, (10, 1)), atol=1e-12)

    def test_output_in_value_convex_hull(self):
        # with V = I the output of each node is a convex combination of
        # neighbor features, so per-channel bounds hold
        rng = np.random.default_rng(4)
        feats = rng.uniform(-1, 1, (20, 5))
        params = GraphAttentionParams.initialize(5, seed=1).replace(value_proj=np.eye(5))
        graph = build_knn_graph(rng.uniform(0, 1, (20, 2)), 6)
        out = light_gat_forward(graph, feats, params)
        neigh_feats = feats[graph.neighbor_indices]
        assert np.all(out <= neigh_feats.max(axis=1) + 1e-12)
        assert np.all(out >= neigh_feats.min(axis=1) - 1e-12)

    def test_channel_mismatch_rejected(self):
        params = GraphAttentionParams.initialize(4, seed=0)
        graph = build_knn_graph(np.random.default_rng(0).uniform(0, 1, (5, 2)), 2)
        with pytest.raises(ChannelMismatchError):
            light_gat_forward(graph, np.zeros((5, 3)), params)


class TestFusion:
    def test_zero_gate_params_give_midpoint(self):
        c = 4
        params = GraphAttentionParams.initialize(c, seed=0).replace(
            gate_w1=np.zeros((c, 2 * c)),
            gate_b1=np.zeros(c),
            gate_w2=np.zeros((c, c)),
            gate_b2=np.zeros(c),
        )
        rng = np.random.default_rng(8)
        a = rng.standard_normal((6, c))
        b = rng.standard_normal((6, c))
        np.testing.assert_allclose(gated_fusion(a, b, params), 0.5 * (a + b), atol=1e-12)

    def test_large_negative_bias_keeps_original(self):
        c = 3
        params = GraphAttentionParams.initialize(c, seed=0).replace(
            gate_w1=np.zeros((c, 2 * c)),
            gate_b1=np.zeros(c),
            gate_w2=np.zeros((c, c)),
            gate_b2=np.full(c, -1000.0),
        )
        rng = np.random.default_rng(9)
        a = rng.standard_normal((5, c))
        b = rng.standard_normal((5, c))
        np.testing.assert_array_equal(gated_fusion(a, b, params), a)

    def test_large_positive_bias_keeps_refined(self):
        c = 3
        params = GraphAttentionParams.initialize(c, seed=0).replace(
            gate_w1=np.zeros((c, 2 * c)),
            gate_b1=np.zeros(c),
            gate_w2=np.zeros((c, c)),
            gate_b2=np.full(c, 1000.0),
        )
        rng = np.random.default_rng(10)
        a = rng.standard_normal((5, c))
        b = rng.standard_normal((5, c))
        np.testing.assert_array_equal(gated_fusion(a, b, params), b)

    def test_sigmoid_saturates_exactly(self):
        assert stable_sigmoid(np.array([-1000.0]))[0] == 0.0
        assert stable_sigmoid(np.array([1000.0]))[0] == 1.0
        assert stable_sigmoid(np.array([0.0]))[0] == 0.5


class TestParams:
    def test_seed_determinism(self):
        a = GraphAttentionParams.initialize(8, seed=42)
        b = GraphAttentionParams.initialize(8, seed=42)
        c = GraphAttentionParams.initialize(8, seed=43)
        np.testing.assert_array_equal(a.query_proj, b.query_proj)
        np.testing.assert_array_equal(a.gate_b2, b.gate_b2)
        assert not np.array_equal(a.query_proj, c.query_proj)

    def test_init_bounds(self):
        params = GraphAttentionParams.initialize(16, seed=7)
        bound = 1.0 / 4.0
        for arr in (params.query_proj, params.key_proj, params.value_proj,
                    params.gate_w1, params.gate_b1, params.gate_w2, params.gate_b2):
            assert np.all(np.abs(arr) <= bound)

    def test_shapes(self):
        params = GraphAttentionParams.initialize(5, seed=1)
        assert params.query_proj.shape == (5, 5)
        assert params.gate_w1.shape == (5, 10)
        assert params.gate_b1.shape == (5,)
