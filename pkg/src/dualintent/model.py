"""Dual-intent representation model: state, forward ops, checkpoints.

Prototype intents are soft-assigned from projected semantic vectors;
distribution intents from directions sampled around the collaborative
means on the hypersphere. Reconstruction adds the noise-modulated intent
mixture to the layer-mean of the propagated mean embeddings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import data as dt
from .errors import (
    DegenerateInputError,
    FormatError,
    NumericError,
    ShapeError,
)
from .semantic import ProjectorParams, SemanticStore, init_projector, project_rows

EPSILON_MODES = ("train_gaussian", "eval_ones", "zero")

_MAGIC = b"DIAU"
_VERSION = 1


@dataclass
class IntentBank:
    """Learnable intent vectors and their assignment hyperparameters."""

    proto_bank: np.ndarray  # (K, d)
    dist_bank: np.ndarray  # (K, d)
    dist_proj: np.ndarray  # (K, d)
    eta: float
    kappa: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    @property
    def intent_count(self) -> int:
        return int(self.proto_bank.shape[0])


@dataclass
class ModelState:
    """All trainable tensors of the recommender."""

    user_mu: np.ndarray  # (M, d)
    item_mu: np.ndarray  # (N, d)
    bank: IntentBank
    projector: ProjectorParams
    coarse_map: np.ndarray  # (d, d)

    @property
    def dim(self) -> int:
        return int(self.user_mu.shape[1])

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable tensors in canonical (checkpoint) order."""
        return {
            "user_mu": self.user_mu,
            "item_mu": self.item_mu,
            "proto_bank": self.bank.proto_bank,
            "dist_bank": self.bank.dist_bank,
            "dist_proj": self.bank.dist_proj,
            "proj_w1": self.projector.w1,
            "proj_b1": self.projector.b1,
            "proj_w2": self.projector.w2,
            "proj_b2": self.projector.b2,
            "coarse_map": self.coarse_map,
        }

    def copy(self) -> "ModelState":
        params = {name: value.copy() for name, value in self.parameters().items()}
        return ModelState(
            user_mu=params["user_mu"],
            item_mu=params["item_mu"],
            bank=replace(
                self.bank,
                proto_bank=params["proto_bank"],
                dist_bank=params["dist_bank"],
                dist_proj=params["dist_proj"],
            ),
            projector=ProjectorParams(
                w1=params["proj_w1"],
                b1=params["proj_b1"],
                w2=params["proj_w2"],
                b2=params["proj_b2"],
                nonlinearity=self.projector.nonlinearity,
            ),
            coarse_map=params["coarse_map"],
        )


def init_model(
    user_count: int,
    item_count: int,
    source_dim: int,
    dim: int,
    intent_count: int,
    eta: float,
    kappa: float,
    rng: np.random.Generator,
    hidden: int | None = None,
) -> ModelState:
    """Mean embeddings and banks ~ N(0, 0.1^2); coarse map starts at identity."""
    scale = 0.1
    return ModelState(
        user_mu=scale * rng.standard_normal((user_count, dim)),
        item_mu=scale * rng.standard_normal((item_count, dim)),
        bank=IntentBank(
            proto_bank=scale * rng.standard_normal((intent_count, dim)),
            dist_bank=scale * rng.standard_normal((intent_count, dim)),
            dist_proj=scale * rng.standard_normal((intent_count, dim)),
            eta=eta,
            kappa=kappa,
        ),
        projector=init_projector(source_dim, dim, rng, hidden=hidden),
        coarse_map=np.eye(dim),
    )


def project_rows_tape(raw: np.ndarray, leaves: dict, nonlinearity: str) -> ad.Tensor:
    """Project raw semantic rows through the projector leaf tensors."""
    return project_rows(
        raw,
        leaves["proj_w1"],
        leaves["proj_b1"],
        leaves["proj_w2"],
        leaves["proj_b2"],
        nonlinearity,
    )


# -- intent assignment ------------------------------------------------------


def prototype_assign(s, proto_bank, eta: float) -> ad.Tensor:
    """Softmax over intent prototypes at temperature eta; rows sum to 1."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    logits = ad.matmul(ad.as_tensor(s), ad.transpose(ad.as_tensor(proto_bank)))
    if not np.isfinite(logits.data).all():
        raise NumericError("non-finite prototype logits")
    return ad.softmax(ad.mul(logits, 1.0 / eta), axis=1)


def distribution_assign(h, dist_proj, eta: float) -> ad.Tensor:
    """Softmax over affinities between sampled directions and the map rows."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    affinity = ad.matmul(ad.as_tensor(h), ad.transpose(ad.as_tensor(dist_proj)))
    if not np.isfinite(affinity.data).all():
        raise NumericError("non-finite distribution affinities")
    return ad.softmax(ad.mul(affinity, 1.0 / eta), axis=1)


def mix_intents(probs, bank) -> ad.Tensor:
    """Convex combination of bank rows under assignment probabilities."""
    probs = ad.as_tensor(probs)
    bank = ad.as_tensor(bank)
    if probs.shape[1] != bank.shape[0]:
        raise ShapeError(f"probs width {probs.shape[1]} != bank rows {bank.shape[0]}")
    return ad.matmul(probs, bank)


# -- von Mises-Fisher sampling ------------------------------------------------


def _vmf_radial(kappa: float, dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample the cosine t of the angle to the mean direction."""
    m = dim - 1
    b = m / (np.sqrt(4.0 * kappa**2 + m**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0**2)
    out = np.empty(count)
    pending = np.arange(count)
    while pending.size:
        z = rng.beta(m / 2.0, m / 2.0, size=pending.size)
        t = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=pending.size)
        accept = kappa * t + m * np.log(1.0 - x0 * t) - c >= np.log(u)
        out[pending[accept]] = t[accept]
        pending = pending[~accept]
    return out


def vmf_sample(mu_dir: np.ndarray, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """One von Mises-Fisher draw per row, around that row's direction.

    Tangent-normal decomposition: t * mu + sqrt(1 - t^2) * tangent with the
    radial part t rejection-sampled from the vMF marginal. kappa = 0 is the
    uniform distribution on the sphere. The output carries no gradient.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    mu_dir = np.asarray(mu_dir, dtype=np.float64)
    count, dim = mu_dir.shape
    if kappa == 0.0:
        sample = rng.standard_normal((count, dim))
        return sample / np.linalg.norm(sample, axis=1, keepdims=True)
    if dim < 2:
        raise ShapeError("vMF sampling needs dimension >= 2")
    norms = np.linalg.norm(mu_dir, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise DegenerateInputError("zero-norm mean direction with kappa > 0")
    mu_hat = mu_dir / norms
    t = _vmf_radial(float(kappa), dim, count, rng)[:, None]
    tangent = rng.standard_normal((count, dim))
    tangent -= np.sum(tangent * mu_hat, axis=1, keepdims=True) * mu_hat
    tnorm = np.linalg.norm(tangent, axis=1, keepdims=True)
    degenerate = tnorm[:, 0] < 1e-12
    while degenerate.any():
        redraw = rng.standard_normal((int(degenerate.sum()), dim))
        redraw -= np.sum(redraw * mu_hat[degenerate], axis=1, keepdims=True) * mu_hat[degenerate]
        tangent[degenerate] = redraw
        tnorm = np.linalg.norm(tangent, axis=1, keepdims=True)
        degenerate = tnorm[:, 0] < 1e-12
    tangent /= tnorm
    return t * mu_hat + np.sqrt(np.maximum(1.0 - t * t, 0.0)) * tangent


# -- reconstruction ------------------------------------------------------------


def make_epsilon(mode: str, shape, rng: np.random.Generator | None):
    if mode == "train_gaussian":
        if rng is None:
            raise ValueError("train_gaussian mode needs an rng")
        return rng.standard_normal(shape)
    if mode == "eval_ones":
        return np.ones(shape)
    if mode == "zero":
        return np.zeros(shape)
    raise ValueError(f"unknown epsilon mode {mode!r}")


def combine_intents(base, c_pro, c_dis, epsilon) -> ad.Tensor:
    """base + (c_pro + c_dis) * epsilon, unit-normalized per row."""
    mixed = ad.mul(ad.add(ad.as_tensor(c_pro), ad.as_tensor(c_dis)), ad.as_tensor(epsilon))
    return ad.normalize_rows(ad.add(ad.as_tensor(base), mixed))


def reconstruct(layer_seq, c_pro, c_dis, epsilon_mode: str, rng=None) -> ad.Tensor:
    """Layer-mean of one population's propagated embeddings plus intents."""
    total = layer_seq[0]
    for layer in layer_seq[1:]:
        total = ad.add(total, layer)
    base = ad.mul(ad.as_tensor(total), 1.0 / len(layer_seq))
    epsilon = make_epsilon(epsilon_mode, ad.as_tensor(c_pro).shape, rng)
    return combine_intents(base, c_pro, c_dis, epsilon)


def graph_layer_mean(graph: dt.InteractionGraph, user_t: ad.Tensor, item_t: ad.Tensor, hops: int) -> ad.Tensor:
    """Tape op: layer-mean of propagation, users and items stacked row-wise.

    The stacked propagation operator is symmetric, so the backward pass is
    the same layer-mean propagation applied to the upstream gradient.
    """
    m = graph.user_count

    def forward(user_mat: np.ndarray, item_mat: np.ndarray) -> np.ndarray:
        layers = dt.propagate(graph, user_mat, item_mat, hops)
        user_mean, item_mean = dt.layer_mean(layers)
        return np.concatenate([user_mean, item_mean], axis=0)

    out = forward(user_t.data, item_t.data)

    def backward(grad):
        back = forward(grad[:m], grad[m:])
        return back[:m], back[m:]

    return ad._node(out, (user_t, item_t), backward)


# -- scoring --------------------------------------------------------------------


def score(z_u: np.ndarray, z_v: np.ndarray) -> float:
    """Preference score: plain inner product."""
    return float(np.dot(np.asarray(z_u, dtype=np.float64), np.asarray(z_v, dtype=np.float64)))


def score_prob(z_u: np.ndarray, z_v: np.ndarray) -> float:
    """Bernoulli view of the score, sigma(z_u . z_v)."""
    s = score(z_u, z_v)
    return float(1.0 / (1.0 + np.exp(-s)))


def intent_marginal_prob(z_u, z_v, probs_pro, probs_dis, bank: IntentBank) -> float:
    """Diagnostic mixture likelihood over intent-perturbed inner products."""
    z_u = np.asarray(z_u, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    shifts = 0.5 * (bank.proto_bank + bank.dist_bank)  # (K, d)
    logits = np.einsum("kd,kd->k", z_u[None, :] + shifts, z_v[None, :] + shifts)
    probs = 1.0 / (1.0 + np.exp(-logits))
    return float(np.sum(probs * np.asarray(probs_pro) * np.asarray(probs_dis)))


# -- full-population reconstruction for evaluation --------------------------------


def reconstruct_populations(
    state: ModelState,
    graph: dt.InteractionGraph,
    store: SemanticStore,
    use_dual_intent: bool,
    hops: int,
    epsilon_mode: str = "eval_ones",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic reconstructed representations for every user and item.

    The distribution-intent direction is the normalized mean embedding (the
    concentration limit of the sampler), keeping evaluation reproducible.
    """
    layers = dt.propagate(graph, state.user_mu, state.item_mu, hops)
    base_user, base_item = dt.layer_mean(layers)
    if not use_dual_intent:
        return (
            ad.normalize_rows(base_user).data,
            ad.normalize_rows(base_item).data,
        )
    p = state.projector
    s_user = project_rows(store.raw_user, p.w1, p.b1, p.w2, p.b2, p.nonlinearity)
    s_item = project_rows(store.raw_item, p.w1, p.b1, p.w2, p.b2, p.nonlinearity)
    c_pro_u = mix_intents(prototype_assign(s_user, state.bank.proto_bank, state.bank.eta), state.bank.proto_bank)
    c_pro_v = mix_intents(prototype_assign(s_item, state.bank.proto_bank, state.bank.eta), state.bank.proto_bank)
    h_user = ad.normalize_rows(state.user_mu).data
    h_item = ad.normalize_rows(state.item_mu).data
    c_dis_u = mix_intents(distribution_assign(h_user, state.bank.dist_proj, state.bank.eta), state.bank.dist_bank)
    c_dis_v = mix_intents(distribution_assign(h_item, state.bank.dist_proj, state.bank.eta), state.bank.dist_bank)
    eps_u = make_epsilon(epsilon_mode, c_pro_u.shape, rng)
    eps_v = make_epsilon(epsilon_mode, c_pro_v.shape, rng)
    z_user = combine_intents(base_user, c_pro_u, c_dis_u, eps_u)
    z_item = combine_intents(base_item, c_pro_v, c_dis_v, eps_v)
    return z_user.data, z_item.data


# -- checkpoints -------------------------------------------------------------------


def _meta_tensors(state: ModelState) -> dict[str, np.ndarray]:
    nonlin_code = {"tanh": 0.0, "identity": 1.0}[state.projector.nonlinearity]
    return {
        "meta_eta": np.array([state.bank.eta]),
        "meta_kappa": np.array([state.bank.kappa]),
        "meta_nonlinearity": np.array([nonlin_code]),
    }


def checkpoint_bytes(state: ModelState) -> bytes:
    """Serialize named tensors: magic, version, count, then sections."""
    tensors = dict(state.parameters())
    tensors.update(_meta_tensors(state))
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def save_checkpoint(path, state: ModelState):
    with open(path, "wb") as handle:
        handle.write(checkpoint_bytes(state))


def state_from_tensors(tensors: dict[str, np.ndarray]) -> ModelState:
    try:
        nonlinearity = {0.0: "tanh", 1.0: "identity"}[float(tensors["meta_nonlinearity"][0])]
        return ModelState(
            user_mu=tensors["user_mu"],
            item_mu=tensors["item_mu"],
            bank=IntentBank(
                proto_bank=tensors["proto_bank"],
                dist_bank=tensors["dist_bank"],
                dist_proj=tensors["dist_proj"],
                eta=float(tensors["meta_eta"][0]),
                kappa=float(tensors["meta_kappa"][0]),
            ),
            projector=ProjectorParams(
                w1=tensors["proj_w1"],
                b1=tensors["proj_b1"],
                w2=tensors["proj_w2"],
                b2=tensors["proj_b2"],
                nonlinearity=nonlinearity,
            ),
            coarse_map=tensors["coarse_map"],
        )
    except KeyError as missing:
        raise FormatError(f"checkpoint is missing tensor {missing}") from None


def load_checkpoint_bytes(blob: bytes) -> ModelState:
    if blob[:4] != _MAGIC:
        raise FormatError("bad checkpoint magic bytes")
    offset = 4
    try:
        version, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}q", blob, offset)
            offset += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            flat = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            tensors[name] = flat.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from None
    return state_from_tensors(tensors)


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as handle:
        return load_checkpoint_bytes(handle.read())
