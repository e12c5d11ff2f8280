"""Shared test utilities: FD comparison and synthetic dataset fixtures."""

import numpy as np

from dualintent import autodiff as ad
from dualintent.data import EdgeList


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error with a small-magnitude floor on the denominator."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum.reduce(
        [np.abs(analytic), np.abs(numeric), np.full_like(analytic, 1e-3)]
    )
    return float((np.abs(analytic - numeric) / denom).max())


def gradcheck(build_loss, arrays: dict, step: float = 1e-4) -> float:
    """Worst relative error between tape gradients and central differences.

    ``build_loss`` receives a dict of leaf tensors (same keys as ``arrays``)
    and returns a scalar tensor.
    """
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = build_loss(leaves)
    loss.backward()
    worst = 0.0
    for key, arr in arrays.items():
        if leaves[key].grad is None:
            continue

        def value(_x, key=key):
            fresh = {k: ad.Tensor(v) for k, v in arrays.items()}
            return float(build_loss(fresh).data)

        fd = ad.numeric_gradient(value, arr, step=step)
        worst = max(worst, rel_err(leaves[key].grad, fd))
    return worst


def random_unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    z = rng.standard_normal((rows, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def random_bipartite_edges(
    rng: np.random.Generator, users: int, items: int, edge_count: int
) -> EdgeList:
    """Random simple bipartite edge set, re-indexed densely."""
    seen = set()
    while len(seen) < edge_count:
        u = int(rng.integers(0, users))
        v = int(rng.integers(0, items))
        seen.add((u, v))
    pairs = np.asarray(sorted(seen), dtype=np.int64)
    u_ids = np.unique(pairs[:, 0])
    v_ids = np.unique(pairs[:, 1])
    pairs = np.stack(
        [np.searchsorted(u_ids, pairs[:, 0]), np.searchsorted(v_ids, pairs[:, 1])],
        axis=1,
    )
    return EdgeList(pairs, len(u_ids), len(v_ids))


def clustered_interactions(
    users: int = 300,
    items: int = 200,
    clusters: int = 5,
    per_user: int = 30,
    in_cluster_prob: float = 0.9,
    seed: int = 0,
) -> EdgeList:
    """Synthetic interactions where each user favors one item cluster.

    Cluster membership is ``item % clusters``, matching the round-robin
    layout of the synthetic semantic vectors, so semantics and behavior
    carry the same latent structure.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    pairs = []
    for u in range(users):
        favored = u % clusters
        cluster_items = np.arange(favored, items, clusters)
        other_items = np.array([v for v in range(items) if v % clusters != favored])
        chosen: set[int] = set()
        while len(chosen) < per_user:
            if rng.uniform() < in_cluster_prob:
                v = int(rng.choice(cluster_items))
            else:
                v = int(rng.choice(other_items))
            chosen.add(v)
        pairs.extend((u, v) for v in sorted(chosen))
    edge_array = np.asarray(pairs, dtype=np.int64)
    return EdgeList(edge_array, users, items)


def dense_propagation_oracle(edges: EdgeList, user_emb, item_emb, hops: int):
    """Dense D^-1/2 A D^-1/2 matrix powers for checking sparse propagation."""
    m, n = edges.user_count, edges.item_count
    adj = np.zeros((m + n, m + n))
    for u, v in edges.pairs:
        adj[u, m + v] = 1.0
        adj[m + v, u] = 1.0
    degrees = adj.sum(axis=1)
    d_inv_sqrt = np.diag(1.0 / np.sqrt(np.maximum(degrees, 1e-300)))
    operator = d_inv_sqrt @ adj @ d_inv_sqrt
    z = np.concatenate([user_emb, item_emb], axis=0)
    layers = [(user_emb.copy(), item_emb.copy())]
    current = z
    for _ in range(hops):
        current = operator @ current
        layers.append((current[:m].copy(), current[m:].copy()))
    return layers
