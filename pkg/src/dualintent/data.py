"""Interaction loading, filtering, splitting and the propagation graph.

The pipeline mirrors the usual public-dataset preparation: optional rating
filter, k-core peeling, largest-connected-component extraction, a per-user
3:1:1 split, and a symmetric-normalized bipartite adjacency in CSR form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDatasetError,
    InvariantError,
    ParseError,
    ShapeError,
)


@dataclass(frozen=True)
class EdgeList:
    """De-duplicated user-item interactions over dense 0-based indices."""

    pairs: np.ndarray  # (E, 2) int64
    user_count: int
    item_count: int

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", np.ascontiguousarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        )

    def __len__(self):
        return self.pairs.shape[0]

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 0], minlength=self.user_count)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 1], minlength=self.item_count)

    def user_items(self) -> list[np.ndarray]:
        """Items of each user, in edge order."""
        out: list[list[int]] = [[] for _ in range(self.user_count)]
        for u, v in self.pairs:
            out[u].append(v)
        return [np.asarray(items, dtype=np.int64) for items in out]

    def validate(self, compact: bool = True):
        if len(self) == 0:
            raise EmptyDatasetError("edge list is empty")
        users, items = self.pairs[:, 0], self.pairs[:, 1]
        if users.min() < 0 or users.max() >= self.user_count:
            raise InvariantError("user index out of bounds")
        if items.min() < 0 or items.max() >= self.item_count:
            raise InvariantError("item index out of bounds")
        if len(np.unique(self.pairs, axis=0)) != len(self):
            raise InvariantError("duplicate pairs present")
        if compact:
            if users.max() + 1 != self.user_count or items.max() + 1 != self.item_count:
                raise InvariantError("indices are not compact")


@dataclass(frozen=True)
class DatasetSplit:
    train: EdgeList
    validation: EdgeList
    test: EdgeList


def _compact(pairs: np.ndarray) -> EdgeList:
    """Densely re-index pairs, preserving ascending original index order."""
    users = np.unique(pairs[:, 0])
    items = np.unique(pairs[:, 1])
    remapped = np.stack(
        [np.searchsorted(users, pairs[:, 0]), np.searchsorted(items, pairs[:, 1])],
        axis=1,
    )
    return EdgeList(remapped, len(users), len(items))


def load_interactions(path, min_rating: float | None = None) -> EdgeList:
    """Parse a UTF-8 TSV of ``user \\t item [\\t rating]`` records.

    Tokens are re-indexed to dense 0-based integers in order of first
    appearance among surviving records; duplicate pairs collapse to one.
    """
    path = Path(path)
    seen: set[tuple[int, int]] = set()
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 2 or len(fields) > 3 or not fields[0].strip() or not fields[1].strip():
                raise ParseError(path, line_number, f"expected 'user\\titem[\\trating]', got {line!r}")
            if len(fields) == 3:
                try:
                    rating = float(fields[2])
                except ValueError:
                    raise ParseError(path, line_number, f"bad rating {fields[2]!r}") from None
                if min_rating is not None and rating < min_rating:
                    continue
            user_tok, item_tok = fields[0], fields[1]
            u = users.setdefault(user_tok, len(users))
            v = items.setdefault(item_tok, len(items))
            if (u, v) in seen:
                continue
            seen.add((u, v))
            pairs.append((u, v))
    if not pairs:
        raise EmptyDatasetError(f"no interactions survived in {path}")
    # Token ids were assigned on first appearance including rows that later
    # collapsed; compact so counts match the surviving edges.
    return _compact(np.asarray(pairs, dtype=np.int64))


def k_core_filter(edges: EdgeList, k: int) -> EdgeList:
    """Iteratively drop users/items with degree < k until a fixpoint."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pairs = edges.pairs
    while True:
        if len(pairs) == 0:
            raise EmptyDatasetError(f"{k}-core filtering emptied the dataset")
        du = np.bincount(pairs[:, 0], minlength=edges.user_count)
        dv = np.bincount(pairs[:, 1], minlength=edges.item_count)
        keep = (du[pairs[:, 0]] >= k) & (dv[pairs[:, 1]] >= k)
        if keep.all():
            break
        pairs = pairs[keep]
    return _compact(pairs)


def largest_connected_component(edges: EdgeList) -> EdgeList:
    """Keep edges of the bipartite component with the most nodes.

    Ties break by most edges, then by the lowest smallest user index.
    """
    edges.validate(compact=False)
    m = edges.user_count
    total = m + edges.item_count
    # Iterative DFS over an adjacency built from the edges only.
    adjacency: list[list[int]] = [[] for _ in range(total)]
    for u, v in edges.pairs:
        adjacency[u].append(m + v)
        adjacency[m + v].append(u)
    component = np.full(total, -1, dtype=np.int64)
    next_id = 0
    for start in range(total):
        if component[start] >= 0 or not adjacency[start]:
            continue
        stack = [start]
        component[start] = next_id
        while stack:
            node = stack.pop()
            for neighbor in adjacency[node]:
                if component[neighbor] < 0:
                    component[neighbor] = next_id
                    stack.append(neighbor)
        next_id += 1
    if next_id == 0:
        raise EmptyDatasetError("no edges to extract a component from")
    node_counts = np.bincount(component[component >= 0], minlength=next_id)
    edge_comp = component[edges.pairs[:, 0]]
    edge_counts = np.bincount(edge_comp, minlength=next_id)
    min_user = np.full(next_id, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(min_user, edge_comp, edges.pairs[:, 0])
    ranking = sorted(
        range(next_id),
        key=lambda c: (-node_counts[c], -edge_counts[c], min_user[c]),
    )
    best = ranking[0]
    return _compact(edges.pairs[edge_comp == best])


def _split_sizes(n: int) -> tuple[int, int, int]:
    """3:1:1 sizes with the remainder filled in train, then val, then test."""
    base = n // 5
    rem = n % 5
    train = 3 * base + min(rem, 3)
    val = base + min(max(rem - 3, 0), 1)
    test = base + max(rem - 4, 0)
    return train, val, test


def split_dataset(edges: EdgeList, seed: int) -> DatasetSplit:
    """Per-user random 3:1:1 partition with cold-start repair.

    Every user keeps at least one train edge; any item that would appear
    only in validation/test is swapped into train (or its eval edge is
    reassigned) so that ranking evaluation never sees unseen nodes.
    """
    edges.validate(compact=True)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    assignment = np.zeros(len(edges), dtype=np.int64)  # 0 train, 1 val, 2 test
    per_user: list[list[int]] = [[] for _ in range(edges.user_count)]
    for edge_index, (u, _) in enumerate(edges.pairs):
        per_user[u].append(edge_index)
    for u in range(edges.user_count):
        edge_ids = np.asarray(per_user[u], dtype=np.int64)
        rng.shuffle(edge_ids)
        n_train, n_val, _ = _split_sizes(len(edge_ids))
        assignment[edge_ids[n_train : n_train + n_val]] = 1
        assignment[edge_ids[n_train + n_val :]] = 2

    # Cold-start repair: give every item a train edge.
    train_item_deg = np.bincount(
        edges.pairs[assignment == 0, 1], minlength=edges.item_count
    )
    user_train_edges: list[list[int]] = [[] for _ in range(edges.user_count)]
    for edge_index, (u, _) in enumerate(edges.pairs):
        if assignment[edge_index] == 0:
            user_train_edges[u].append(edge_index)
    order = np.lexsort((edges.pairs[:, 0], edges.pairs[:, 1]))  # by item, then user
    for edge_index in order:
        u, v = edges.pairs[edge_index]
        if train_item_deg[v] > 0 or assignment[edge_index] == 0:
            continue
        swap = next(
            (
                e
                for e in user_train_edges[u]
                if train_item_deg[edges.pairs[e, 1]] >= 2
            ),
            None,
        )
        if swap is not None:
            assignment[swap] = assignment[edge_index]
            train_item_deg[edges.pairs[swap, 1]] -= 1
            user_train_edges[u].remove(swap)
        assignment[edge_index] = 0
        train_item_deg[v] += 1
        user_train_edges[u].append(edge_index)

    def part(code: int) -> EdgeList:
        return EdgeList(edges.pairs[assignment == code], edges.user_count, edges.item_count)

    return DatasetSplit(part(0), part(1), part(2))


@dataclass(frozen=True)
class InteractionGraph:
    """Symmetric-normalized bipartite adjacency in CSR form (both directions)."""

    user_count: int
    item_count: int
    fwd_indptr: np.ndarray
    fwd_indices: np.ndarray
    fwd_weights: np.ndarray
    rev_indptr: np.ndarray
    rev_indices: np.ndarray
    rev_weights: np.ndarray
    user_degrees: np.ndarray
    item_degrees: np.ndarray

    def __post_init__(self):
        for field in (
            "fwd_indptr",
            "fwd_indices",
            "fwd_weights",
            "rev_indptr",
            "rev_indices",
            "rev_weights",
            "user_degrees",
            "item_degrees",
        ):
            getattr(self, field).setflags(write=False)

    @property
    def edge_count(self) -> int:
        return int(self.fwd_indices.shape[0])


def build_graph(train: EdgeList) -> InteractionGraph:
    """Build forward/reverse CSR with weights 1/sqrt(deg(u) * deg(v))."""
    train.validate(compact=False)
    du = train.user_degrees()
    dv = train.item_degrees()
    if (du == 0).any() or (dv == 0).any():
        raise InvariantError("graph has a zero-degree node")
    pairs = train.pairs
    weights = 1.0 / np.sqrt(du[pairs[:, 0]].astype(np.float64) * dv[pairs[:, 1]])

    fwd_order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    rev_order = np.lexsort((pairs[:, 0], pairs[:, 1]))
    fwd_indptr = np.concatenate([[0], np.cumsum(du)]).astype(np.int64)
    rev_indptr = np.concatenate([[0], np.cumsum(dv)]).astype(np.int64)
    return InteractionGraph(
        user_count=train.user_count,
        item_count=train.item_count,
        fwd_indptr=fwd_indptr,
        fwd_indices=pairs[fwd_order, 1].copy(),
        fwd_weights=weights[fwd_order].copy(),
        rev_indptr=rev_indptr,
        rev_indices=pairs[rev_order, 0].copy(),
        rev_weights=weights[rev_order].copy(),
        user_degrees=du.astype(np.int64),
        item_degrees=dv.astype(np.int64),
    )


def users_from_items(graph: InteractionGraph, item_mat: np.ndarray) -> np.ndarray:
    """One propagation step onto the user side."""
    contrib = graph.fwd_weights[:, None] * item_mat[graph.fwd_indices]
    return np.add.reduceat(contrib, graph.fwd_indptr[:-1], axis=0)


def items_from_users(graph: InteractionGraph, user_mat: np.ndarray) -> np.ndarray:
    """One propagation step onto the item side."""
    contrib = graph.rev_weights[:, None] * user_mat[graph.rev_indices]
    return np.add.reduceat(contrib, graph.rev_indptr[:-1], axis=0)


def propagate(
    graph: InteractionGraph,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    hops: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return the layer sequence 0..hops of norm-weighted neighbor sums."""
    if hops < 0:
        raise ValueError("layer count must be >= 0")
    user_emb = np.asarray(user_emb, dtype=np.float64)
    item_emb = np.asarray(item_emb, dtype=np.float64)
    if user_emb.shape[0] != graph.user_count or item_emb.shape[0] != graph.item_count:
        raise ShapeError("embedding row counts do not match the graph")
    if user_emb.shape[1] != item_emb.shape[1]:
        raise ShapeError("user/item embedding widths differ")
    layers = [(user_emb, item_emb)]
    for _ in range(hops):
        u_prev, v_prev = layers[-1]
        layers.append((users_from_items(graph, v_prev), items_from_users(graph, u_prev)))
    return layers


def layer_mean(layers: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean over layers 0..L for both populations."""
    count = len(layers)
    user = sum(layer[0] for layer in layers) / count
    item = sum(layer[1] for layer in layers) / count
    return user, item


def dataset_stats(edges: EdgeList) -> dict:
    """Summary matching the published statistics schema."""
    interactions = len(edges)
    density = interactions / (edges.user_count * edges.item_count)
    return {
        "users": int(edges.user_count),
        "items": int(edges.item_count),
        "interactions": int(interactions),
        "sparsity": f"{100.0 * (1.0 - density):.2f}%",
    }


def write_edges_tsv(path, edges: EdgeList):
    lines = [f"{u}\t{v}\n" for u, v in edges.pairs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_split_dir(directory) -> DatasetSplit:
    """Load the train/validation/test TSVs written by the prepare stage."""
    directory = Path(directory)
    stats = json.loads((directory / "dataset_stats.json").read_text(encoding="utf-8"))
    users, items = int(stats["users"]), int(stats["items"])

    def read_part(name: str) -> EdgeList:
        rows = []
        text = (directory / name).read_text(encoding="utf-8")
        for line_number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(directory / name, line_number, "expected two integer columns")
            rows.append((int(fields[0]), int(fields[1])))
        part = EdgeList(np.asarray(rows, dtype=np.int64).reshape(-1, 2), users, items)
        part.validate(compact=False)
        return part

    return DatasetSplit(read_part("train.tsv"), read_part("validation.tsv"), read_part("test.tsv"))
