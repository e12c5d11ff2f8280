"""Per-node semantic vectors: file ingestion, synthesis, and projection.

Vectors arrive either from precomputed embedding files (binary or TSV) or
from a clustered synthetic generator used at desk scale. A small two-layer
projector, trained jointly with the rest of the model, maps them into the
collaborative dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import InteractionGraph
from .errors import AlignmentError, FormatError, ShapeError

_HEADER = struct.Struct("<qq")  # little-endian row count, column count


@dataclass(frozen=True)
class SemanticStore:
    """Raw high-dimensional semantic vectors for every user and item."""

    raw_user: np.ndarray  # (M, D_s)
    raw_item: np.ndarray  # (N, D_s)

    @property
    def source_dim(self) -> int:
        return int(self.raw_user.shape[1])

    def __post_init__(self):
        if self.raw_user.ndim != 2 or self.raw_item.ndim != 2:
            raise ShapeError("semantic matrices must be 2-d")
        if self.raw_user.shape[1] != self.raw_item.shape[1]:
            raise ShapeError("user/item semantic widths differ")
        if not (np.isfinite(self.raw_user).all() and np.isfinite(self.raw_item).all()):
            raise FormatError("semantic vectors contain non-finite entries")


def write_semantic_vectors(path, matrix: np.ndarray):
    """Write one population's vectors; layout chosen by file extension.

    ``.tsv``/``.txt`` get tab-separated decimals, anything else the binary
    layout (8-byte LE row count, 8-byte column count, row-major float32).
    """
    path = Path(path)
    matrix = np.asarray(matrix, dtype=np.float32)
    if path.suffix in (".tsv", ".txt"):
        lines = ["\t".join(repr(float(x)) for x in row) + "\n" for row in matrix]
        path.write_text("".join(lines), encoding="utf-8")
    else:
        with path.open("wb") as handle:
            handle.write(_HEADER.pack(matrix.shape[0], matrix.shape[1]))
            handle.write(np.ascontiguousarray(matrix).tobytes())


def _read_matrix(path: Path) -> np.ndarray:
    if path.suffix in (".tsv", ".txt"):
        rows = []
        width = None
        for line_number, line in enumerate(
            path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                row = [float(x) for x in line.split("\t")]
            except ValueError:
                raise FormatError(f"{path}:{line_number}: non-numeric field") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(
                    f"{path}:{line_number}: row width {len(row)} != {width}"
                )
            rows.append(row)
        if not rows:
            raise FormatError(f"{path}: no semantic rows")
        return np.asarray(rows, dtype=np.float64)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(blob)
    if rows <= 0 or cols <= 0:
        raise FormatError(f"{path}: bad dimensions {rows}x{cols}")
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)


def load_semantic_vectors(
    user_path, item_path, expected_users: int, expected_items: int
) -> SemanticStore:
    """Load both populations; row i of each file belongs to node index i."""
    raw_user = _read_matrix(Path(user_path))
    raw_item = _read_matrix(Path(item_path))
    if raw_user.shape[0] != expected_users:
        raise AlignmentError(
            f"{user_path}: {raw_user.shape[0]} rows for {expected_users} users"
        )
    if raw_item.shape[0] != expected_items:
        raise AlignmentError(
            f"{item_path}: {raw_item.shape[0]} rows for {expected_items} items"
        )
    return SemanticStore(raw_user=raw_user, raw_item=raw_item)


def synth_semantic_vectors(
    graph: InteractionGraph,
    source_dim: int,
    cluster_count: int,
    noise_scale: float,
    seed: int,
) -> SemanticStore:
    """Clustered stand-in for text-derived vectors.

    Items are assigned round-robin to ``cluster_count`` latent clusters with
    random unit centroids; user vectors are the mean of their train items'.
    """
    if cluster_count < 1:
        raise ValueError("cluster_count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    centroids = rng.standard_normal((cluster_count, source_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    clusters = np.arange(graph.item_count) % cluster_count
    raw_item = centroids[clusters] + noise_scale * rng.standard_normal(
        (graph.item_count, source_dim)
    )
    sums = np.add.reduceat(raw_item[graph.fwd_indices], graph.fwd_indptr[:-1], axis=0)
    raw_user = sums / graph.user_degrees[:, None]
    return SemanticStore(raw_user=raw_user, raw_item=raw_item)


@dataclass
class ProjectorParams:
    """Two affine layers with an elementwise nonlinearity between them."""

    w1: np.ndarray  # (D_s, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, d)
    b2: np.ndarray  # (d,)
    nonlinearity: str = "tanh"

    def __post_init__(self):
        if self.nonlinearity not in ("tanh", "identity"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.w2.shape[1])


def init_projector(
    source_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    hidden: int | None = None,
    nonlinearity: str = "tanh",
) -> ProjectorParams:
    """Glorot-uniform weights, zero biases, hidden width 4*d by default."""
    hidden = 4 * out_dim if hidden is None else hidden

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return ProjectorParams(
        w1=glorot(source_dim, hidden),
        b1=np.zeros(hidden),
        w2=glorot(hidden, out_dim),
        b2=np.zeros(out_dim),
        nonlinearity=nonlinearity,
    )


def project_rows(raw, w1, b1, w2, b2, nonlinearity: str = "tanh") -> ad.Tensor:
    """Project rows into the collaborative space and unit-normalize them.

    Accepts tensors for the weights so gradients can flow when training.
    """
    raw = ad.as_tensor(raw)
    if raw.shape[1] != ad.as_tensor(w1).shape[0]:
        raise ShapeError(
            f"semantic width {raw.shape[1]} != projector input {ad.as_tensor(w1).shape[0]}"
        )
    hidden = ad.add(ad.matmul(raw, w1), b1)
    if nonlinearity == "tanh":
        hidden = ad.tanh(hidden)
    elif nonlinearity != "identity":
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    out = ad.add(ad.matmul(hidden, w2), b2)
    return ad.normalize_rows(out)


def project_semantic(store: SemanticStore, params: ProjectorParams):
    """Project the whole store; returns (user, item) numpy matrices."""
    s_user = project_rows(
        store.raw_user, params.w1, params.b1, params.w2, params.b2, params.nonlinearity
    )
    s_item = project_rows(
        store.raw_item, params.w1, params.b1, params.w2, params.b2, params.nonlinearity
    )
    return s_user.data, s_item.data
