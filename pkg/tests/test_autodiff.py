"""Gradient checks for every tape operation against central differences."""

import numpy as np
import pytest

from dualintent import autodiff as ad
from dualintent import data as dt
from dualintent.errors import ShapeError
from dualintent.model import graph_layer_mean

from helpers import gradcheck, random_bipartite_edges

RNG = np.random.default_rng(2024)


def test_add_mul_broadcasting():
    arrays = {"a": RNG.standard_normal((4, 3)), "b": RNG.standard_normal(3)}

    def build(leaves):
        return ad.tsum(ad.mul(ad.add(leaves["a"], leaves["b"]), leaves["b"]))

    assert gradcheck(build, arrays) < 1e-6


def test_matmul_transpose_div():
    arrays = {"a": RNG.standard_normal((3, 4)), "b": RNG.standard_normal((4, 2))}

    def build(leaves):
        prod = ad.matmul(leaves["a"], leaves["b"])
        return ad.tsum(ad.div(prod, ad.add(ad.mul(prod, prod), 1.0)))

    assert gradcheck(build, arrays) < 1e-6


def test_elementwise_chain():
    arrays = {"x": RNG.standard_normal((5, 2))}

    def build(leaves):
        x = leaves["x"]
        return ad.tsum(
            ad.add(ad.tanh(ad.exp(ad.mul(x, 0.3))), ad.softplus(x))
        )

    assert gradcheck(build, arrays) < 1e-6


def test_log_sqrt_power():
    arrays = {"x": np.abs(RNG.standard_normal((4, 3))) + 0.5}

    def build(leaves):
        x = leaves["x"]
        return ad.tsum(ad.add(ad.log(x), ad.add(ad.sqrt(x), ad.power(x, 1.7))))

    assert gradcheck(build, arrays) < 1e-6


def test_reductions_axes():
    arrays = {"x": RNG.standard_normal((4, 5))}

    def build(leaves):
        x = leaves["x"]
        return ad.add(
            ad.tsum(ad.tmean(x, axis=0)),
            ad.tsum(ad.mul(ad.tsum(x, axis=1, keepdims=True), x)),
        )

    assert gradcheck(build, arrays) < 1e-6


def test_softmax_rows_sum_to_one_and_grad():
    x = RNG.standard_normal((6, 4))
    probs = ad.softmax(ad.Tensor(x), axis=1)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    arrays = {"x": x}

    def build(leaves):
        p = ad.softmax(leaves["x"], axis=1)
        weights = np.arange(24).reshape(6, 4) / 10.0
        return ad.tsum(ad.mul(p, weights))

    assert gradcheck(build, arrays) < 1e-6


def test_softmax_shift_invariance():
    x = RNG.standard_normal((3, 5))
    shifted = ad.softmax(ad.Tensor(x + 123.0), axis=1)
    plain = ad.softmax(ad.Tensor(x), axis=1)
    np.testing.assert_allclose(shifted.data, plain.data, atol=1e-12)


def test_logsumexp_matches_naive_and_grad():
    x = RNG.standard_normal((4, 6))
    got = ad.logsumexp(ad.Tensor(x), axis=1)
    np.testing.assert_allclose(got.data, np.log(np.exp(x).sum(axis=1)), atol=1e-12)

    arrays = {"x": x}

    def build(leaves):
        return ad.tsum(ad.logsumexp(leaves["x"], axis=1))

    assert gradcheck(build, arrays) < 1e-6


def test_logsumexp_with_minus_inf_mask():
    x = RNG.standard_normal((4, 4))
    mask = np.zeros((4, 4))
    np.fill_diagonal(mask, -np.inf)

    def build(leaves):
        return ad.logsumexp(ad.add(leaves["x"], mask))

    arrays = {"x": x}
    assert gradcheck(build, arrays) < 1e-6
    masked = x + mask
    naive = np.log(np.exp(masked[np.isfinite(masked)]).sum())
    got = float(build({"x": ad.Tensor(x)}).data)
    assert got == pytest.approx(naive, abs=1e-12)


def test_take_rows_accumulates_repeats():
    arrays = {"x": RNG.standard_normal((5, 3))}
    idx = np.array([0, 2, 2, 4])

    def build(leaves):
        return ad.tsum(ad.mul(ad.take_rows(leaves["x"], idx), np.arange(12).reshape(4, 3)))

    assert gradcheck(build, arrays) < 1e-6


def test_normalize_rows_unit_norm_and_grad():
    x = RNG.standard_normal((6, 4)) * 3.0
    unit = ad.normalize_rows(ad.Tensor(x))
    np.testing.assert_allclose(np.linalg.norm(unit.data, axis=1), 1.0, atol=1e-9)

    arrays = {"x": x}

    def build(leaves):
        z = ad.normalize_rows(leaves["x"])
        return ad.tsum(ad.mul(z, np.arange(24).reshape(6, 4) / 7.0))

    assert gradcheck(build, arrays) < 1e-6


def test_pairwise_sq_dists_matches_naive():
    z = RNG.standard_normal((5, 3))
    got = ad.pairwise_sq_dists(ad.Tensor(z)).data
    for i in range(5):
        for j in range(5):
            assert got[i, j] == pytest.approx(np.sum((z[i] - z[j]) ** 2), abs=1e-10)


def test_concat_rows_grad():
    arrays = {"a": RNG.standard_normal((2, 3)), "b": RNG.standard_normal((3, 3))}

    def build(leaves):
        return ad.tsum(ad.mul(ad.concat_rows(leaves["a"], leaves["b"]), np.arange(15).reshape(5, 3)))

    assert gradcheck(build, arrays) < 1e-6


def test_graph_layer_mean_adjoint():
    rng = np.random.default_rng(77)
    edges = random_bipartite_edges(rng, 6, 5, 14)
    graph = dt.build_graph(edges)
    arrays = {
        "u": rng.standard_normal((edges.user_count, 3)),
        "v": rng.standard_normal((edges.item_count, 3)),
    }
    probe = rng.standard_normal((edges.user_count + edges.item_count, 3))

    def build(leaves):
        stacked = graph_layer_mean(graph, leaves["u"], leaves["v"], 2)
        return ad.tsum(ad.mul(stacked, probe))

    assert gradcheck(build, arrays) < 1e-6


def test_graph_layer_mean_values_match_dense_mean():
    rng = np.random.default_rng(78)
    edges = random_bipartite_edges(rng, 5, 6, 13)
    graph = dt.build_graph(edges)
    ue = rng.standard_normal((edges.user_count, 2))
    ve = rng.standard_normal((edges.item_count, 2))
    stacked = graph_layer_mean(graph, ad.Tensor(ue), ad.Tensor(ve), 3).data
    layers = dt.propagate(graph, ue, ve, 3)
    mean_u, mean_v = dt.layer_mean(layers)
    np.testing.assert_allclose(stacked[: edges.user_count], mean_u, atol=1e-12)
    np.testing.assert_allclose(stacked[edges.user_count :], mean_v, atol=1e-12)


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        ad.Tensor(np.zeros(3), requires_grad=True).backward()


def test_grad_accumulates_over_reuse():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))  # x^2 + 3x -> 2x + 3 = 7
    ad.tsum(y).backward()
    assert x.grad[0] == pytest.approx(7.0)
