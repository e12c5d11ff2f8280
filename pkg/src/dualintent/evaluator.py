"""Full-ranking top-N evaluation, sparsity groups, and significance testing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .data import DatasetSplit, EdgeList
from .errors import EmptyDatasetError, UndefinedTestError


@dataclass(frozen=True)
class EvalContext:
    """Reconstructed representations frozen for one evaluation pass."""

    user_vecs: np.ndarray  # (M, d)
    item_vecs: np.ndarray  # (N, d)


@dataclass
class MetricsReport:
    """Mean per-cutoff metrics plus optional per-sparsity-group results."""

    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    evaluated_users: int = 0
    groups: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        out: dict = {"evaluated_users": self.evaluated_users}
        for n in sorted(self.recall):
            out[f"recall@{n}"] = self.recall[n]
        for n in sorted(self.ndcg):
            out[f"ndcg@{n}"] = self.ndcg[n]
        if self.groups:
            out["groups"] = self.groups
        return out


def rank_items(ctx: EvalContext, user: int, exclude, n: int) -> np.ndarray:
    """Indices of the n highest-scoring unseen items, ties to lowest index."""
    scores = ctx.item_vecs @ ctx.user_vecs[user]
    exclude = np.asarray(sorted(exclude), dtype=np.int64)
    if n > scores.shape[0] - exclude.shape[0]:
        raise ValueError("n exceeds the number of rankable items")
    if exclude.size:
        scores = scores.copy()
        scores[exclude] = -np.inf
    order = np.argsort(-scores, kind="stable")
    return order[:n]


def recall_at_n(topn, relevant) -> float | None:
    """Fraction of relevant items retrieved; None signals 'skip this user'."""
    relevant = set(int(v) for v in relevant)
    if not relevant:
        return None
    hits = sum(1 for v in topn if int(v) in relevant)
    return hits / len(relevant)


def ndcg_at_n(topn, relevant) -> float | None:
    """Binary-relevance NDCG with a log2(rank + 1) discount."""
    relevant = set(int(v) for v in relevant)
    if not relevant:
        return None
    dcg = sum(
        1.0 / np.log2(rank + 2)
        for rank, v in enumerate(topn)
        if int(v) in relevant
    )
    ideal = min(len(topn), len(relevant))
    idcg = sum(1.0 / np.log2(rank + 2) for rank in range(ideal))
    return dcg / idcg


def _per_user_items(edges: EdgeList) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(edges.user_count)]
    for u, v in edges.pairs:
        out[u].append(int(v))
    return out


def evaluate(
    ctx: EvalContext,
    train: EdgeList,
    target: EdgeList,
    cutoffs=(5, 10, 20),
    group_map: np.ndarray | None = None,
) -> MetricsReport:
    """Average per-user metrics over users with a nonempty target set.

    Train items are masked out of every ranking. When ``group_map`` assigns
    users to sparsity buckets, per-bucket means are reported as well.
    """
    cutoffs = tuple(sorted(int(n) for n in cutoffs))
    train_items = _per_user_items(train)
    target_items = _per_user_items(target)
    max_n = cutoffs[-1]
    per_user: dict[int, dict[int, tuple[float, float]]] = {}
    for user in range(target.user_count):
        relevant = target_items[user]
        if not relevant:
            continue
        topn = rank_items(ctx, user, train_items[user], max_n)
        per_user[user] = {}
        for n in cutoffs:
            head = topn[:n]
            per_user[user][n] = (recall_at_n(head, relevant), ndcg_at_n(head, relevant))
    if not per_user:
        raise EmptyDatasetError("no user has a nonempty evaluation set")
    report = MetricsReport(evaluated_users=len(per_user))
    for n in cutoffs:
        report.recall[n] = float(np.mean([vals[n][0] for vals in per_user.values()]))
        report.ndcg[n] = float(np.mean([vals[n][1] for vals in per_user.values()]))
    if group_map is not None:
        for group in sorted(set(int(g) for g in group_map)):
            members = [u for u in per_user if group_map[u] == group]
            entry: dict = {"group": group, "users": len(members)}
            for n in cutoffs:
                entry[f"recall@{n}"] = (
                    float(np.mean([per_user[u][n][0] for u in members])) if members else 0.0
                )
                entry[f"ndcg@{n}"] = (
                    float(np.mean([per_user[u][n][1] for u in members])) if members else 0.0
                )
            report.groups.append(entry)
    return report


def sparsity_groups(train: EdgeList, group_count: int = 4) -> np.ndarray:
    """Assign users to equal-count buckets by train degree, sparsest first."""
    if group_count < 2:
        raise ValueError("group_count must be >= 2")
    if train.user_count < group_count:
        raise ValueError("fewer users than groups")
    order = np.argsort(train.user_degrees(), kind="stable")
    mapping = np.empty(train.user_count, dtype=np.int64)
    for group, chunk in enumerate(np.array_split(order, group_count)):
        mapping[chunk] = group
    return mapping


def paired_t_test(a, b) -> float:
    """Two-tailed p-value of the paired t-test between two metric series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise UndefinedTestError("need two equal-length series of size >= 2")
    diffs = a - b
    if np.allclose(diffs, 0.0, atol=0.0):
        raise UndefinedTestError("all paired differences are zero")
    sd = diffs.std(ddof=1)
    if sd == 0.0:
        return 0.0  # deterministic nonzero difference
    n = diffs.size
    t = diffs.mean() / (sd / np.sqrt(n))
    dof = n - 1
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
