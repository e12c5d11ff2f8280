"""Mini-batch training loop: sampling, joint objective, Adam, early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import model as md
from .data import DatasetSplit, EdgeList, InteractionGraph, build_graph
from .errors import NumericError
from .rng import substream
from .semantic import SemanticStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and ablation switches for one training run."""

    dim: int = 32
    batch: int = 4096
    lr: float = 1e-4
    tau: float = 0.2
    eta: float = 1.0
    intent_count: int = 128
    omega: float = 1.0
    lambda1: float = 0.2
    lambda2: float = 0.2
    layers: int = 2
    kappa: float = 10.0
    weight_decay: float = 1e-6
    epochs_max: int = 100
    patience: int = 5
    seed: int = 0
    hidden: int | None = None
    coarse_anchor: str = "semantic"  # or "prototype"
    literal_degree_prefactor: bool = False
    bpr_max_retries: int = 100
    assert_invariants: bool = False
    toggles: ls.LossToggles = field(default_factory=ls.LossToggles)

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.coarse_anchor not in ("semantic", "prototype"):
            raise ValueError(f"unknown coarse anchor {self.coarse_anchor!r}")
        for name in ("batch", "tau", "eta", "intent_count", "epochs_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.kappa < 0 or self.weight_decay < 0:
            raise ValueError("lr, kappa and weight_decay must be non-negative")


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
):
    """Bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param)
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient for tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainingData:
    """Everything one run trains on, derived from a split and a store."""

    split: DatasetSplit
    graph: InteractionGraph
    store: SemanticStore
    user_train_sets: list[set[int]]

    @classmethod
    def build(
        cls,
        split: DatasetSplit,
        store: SemanticStore,
        graph: InteractionGraph | None = None,
    ) -> "TrainingData":
        graph = build_graph(split.train) if graph is None else graph
        sets: list[set[int]] = [set() for _ in range(split.train.user_count)]
        for u, v in split.train.pairs:
            sets[u].add(int(v))
        return cls(split=split, graph=graph, store=store, user_train_sets=sets)


def sample_batch(
    train: EdgeList,
    batch: int,
    rng: np.random.Generator,
    user_train_sets: list[set[int]] | None = None,
    item_count: int | None = None,
    with_negatives: bool = False,
    max_retries: int = 100,
):
    """Uniform with-replacement positive pairs, plus rejection-sampled negatives.

    A negative is redrawn until it lies outside the user's train set; after
    ``max_retries`` failures the last draw is accepted and a warning logged.
    """
    if len(train) == 0:
        raise ValueError("cannot sample from an empty train set")
    picks = rng.integers(0, len(train), size=batch)
    users = train.pairs[picks, 0]
    items = train.pairs[picks, 1]
    if not with_negatives:
        return users, items
    negatives = np.empty(batch, dtype=np.int64)
    for row, user in enumerate(users):
        candidate = int(rng.integers(0, item_count))
        retries = 0
        while candidate in user_train_sets[user] and retries < max_retries:
            candidate = int(rng.integers(0, item_count))
            retries += 1
        if retries >= max_retries:
            logger.warning("negative sampling hit retry cap for user %d", user)
        negatives[row] = candidate
    return users, items, negatives


def _assert_unit_rows(name: str, mat: np.ndarray):
    norms = np.linalg.norm(mat, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise NumericError(f"{name} left the unit sphere (max dev {abs(norms - 1).max():.2e})")


def _assert_prob_rows(name: str, mat: np.ndarray):
    sums = mat.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-6) or mat.min() < -1e-12:
        raise NumericError(f"{name} rows are not a probability distribution")


@dataclass
class _BatchRngs:
    vmf: np.random.Generator
    epsilon: np.random.Generator


def forward_batch(
    state: md.ModelState,
    data: TrainingData,
    config: TrainConfig,
    users: np.ndarray,
    items: np.ndarray,
    rngs: _BatchRngs,
    negatives: np.ndarray | None = None,
):
    """One forward pass over a batch; returns (total tensor, breakdown, leaves)."""
    toggles = config.toggles
    leaves = {name: ad.Tensor(value, requires_grad=True) for name, value in state.parameters().items()}

    stacked = md.graph_layer_mean(data.graph, leaves["user_mu"], leaves["item_mu"], config.layers)
    m = data.graph.user_count
    base_u = ad.take_rows(stacked, users)
    base_v = ad.take_rows(stacked, m + items)
    if config.literal_degree_prefactor:
        # Literal reading of the reconstruction prefactor: scale the layer
        # mean of each pair by 1 / (deg(u) * deg(v)).
        pair_scale = 1.0 / (
            data.graph.user_degrees[users] * data.graph.item_degrees[items]
        )
        base_u = ad.mul(base_u, pair_scale[:, None])
        base_v = ad.mul(base_v, pair_scale[:, None])
    mu_u = ad.normalize_rows(base_u)
    mu_v = ad.normalize_rows(base_v)

    proj = state.projector
    s_u = md.project_rows_tape(data.store.raw_user[users], leaves, proj.nonlinearity)
    s_v = md.project_rows_tape(data.store.raw_item[items], leaves, proj.nonlinearity)

    probs_pro_u = md.prototype_assign(s_u, leaves["proto_bank"], state.bank.eta)
    probs_pro_v = md.prototype_assign(s_v, leaves["proto_bank"], state.bank.eta)
    c_pro_u = md.mix_intents(probs_pro_u, leaves["proto_bank"])
    c_pro_v = md.mix_intents(probs_pro_v, leaves["proto_bank"])

    if toggles.use_dual_intent:
        h_u = md.vmf_sample(state.user_mu[users], state.bank.kappa, rngs.vmf)
        h_v = md.vmf_sample(state.item_mu[items], state.bank.kappa, rngs.vmf)
        probs_dis_u = md.distribution_assign(h_u, leaves["dist_proj"], state.bank.eta)
        probs_dis_v = md.distribution_assign(h_v, leaves["dist_proj"], state.bank.eta)
        c_dis_u = md.mix_intents(probs_dis_u, leaves["dist_bank"])
        c_dis_v = md.mix_intents(probs_dis_v, leaves["dist_bank"])
        eps_u = md.make_epsilon("train_gaussian", c_pro_u.shape, rngs.epsilon)
        eps_v = md.make_epsilon("train_gaussian", c_pro_v.shape, rngs.epsilon)
        z_u = md.combine_intents(base_u, c_pro_u, c_dis_u, eps_u)
        z_v = md.combine_intents(base_v, c_pro_v, c_dis_v, eps_v)
    else:
        z_u, z_v = mu_u, mu_v

    if config.assert_invariants:
        _assert_unit_rows("z_u", z_u.data)
        _assert_unit_rows("z_v", z_v.data)
        _assert_unit_rows("s_u", s_u.data)
        _assert_unit_rows("s_v", s_v.data)
        _assert_prob_rows("prototype assignment (users)", probs_pro_u.data)
        _assert_prob_rows("prototype assignment (items)", probs_pro_v.data)
        if toggles.use_dual_intent:
            _assert_prob_rows("distribution assignment (users)", probs_dis_u.data)
            _assert_prob_rows("distribution assignment (items)", probs_dis_v.data)

    parts = ls.LossInputs()
    if toggles.objective == "BPR":
        stacked_neg = ad.take_rows(stacked, m + negatives)
        if toggles.use_dual_intent:
            s_n = md.project_rows_tape(data.store.raw_item[negatives], leaves, proj.nonlinearity)
            c_pro_n = md.mix_intents(
                md.prototype_assign(s_n, leaves["proto_bank"], state.bank.eta),
                leaves["proto_bank"],
            )
            h_n = md.vmf_sample(state.item_mu[negatives], state.bank.kappa, rngs.vmf)
            c_dis_n = md.mix_intents(
                md.distribution_assign(h_n, leaves["dist_proj"], state.bank.eta),
                leaves["dist_bank"],
            )
            eps_n = md.make_epsilon("train_gaussian", c_pro_n.shape, rngs.epsilon)
            z_neg = md.combine_intents(stacked_neg, c_pro_n, c_dis_n, eps_n)
        else:
            z_neg = ad.normalize_rows(stacked_neg)
        parts.bpr = ls.bpr_loss(z_u, z_v, z_neg)
    else:
        parts.align = ls.align_loss(z_u, z_v)
        if toggles.uniformity_target in ("user_only", "user_and_item"):
            parts.uniform_user = ls.uniform_loss(z_u)
        if toggles.uniformity_target in ("item_only", "user_and_item"):
            parts.uniform_item = ls.uniform_loss(z_v)

    if toggles.use_coarse:
        anchor_u = s_u if config.coarse_anchor == "semantic" else ad.normalize_rows(c_pro_u)
        anchor_v = s_v if config.coarse_anchor == "semantic" else ad.normalize_rows(c_pro_v)
        match_u = ls.coarse_loss(z_u, anchor_u, leaves["coarse_map"])
        match_v = ls.coarse_loss(z_v, anchor_v, leaves["coarse_map"])
        parts.coarse = ad.mul(ad.add(match_u, match_v), 0.5)
    if toggles.use_fine:
        fine_u = ls.fine_loss(z_u, c_pro_u, ls.mine_neighbors(z_u.data))
        fine_v = ls.fine_loss(z_v, c_pro_v, ls.mine_neighbors(z_v.data))
        parts.fine = ad.mul(ad.add(fine_u, fine_v), 0.5)
    if toggles.use_intra and toggles.use_dual_intent:
        parts.intra = ls.intra_loss(z_u, z_v, mu_u, mu_v, config.tau)
    if toggles.use_inter:
        parts.inter = ls.inter_loss(z_u, z_v, mu_u, mu_v, config.tau)
    if config.weight_decay > 0.0:
        l2 = ad.as_tensor(0.0)
        for leaf in leaves.values():
            l2 = ad.add(l2, ad.tsum(ad.mul(leaf, leaf)))
        parts.l2_sq = l2

    total, breakdown = ls.total_loss(
        parts,
        toggles,
        omega=config.omega,
        lambda1=config.lambda1,
        lambda2=config.lambda2,
        weight_decay=config.weight_decay,
    )
    return total, breakdown, leaves


def train_epoch(
    state: md.ModelState,
    data: TrainingData,
    config: TrainConfig,
    adam: AdamState,
    rng_batch: np.random.Generator,
    rngs: _BatchRngs,
    log_handle=None,
    epoch: int | None = None,
) -> ls.LossBreakdown:
    """Run ceil(|train| / batch) steps and return the mean loss breakdown."""
    train = data.split.train
    steps = max(1, -(-len(train) // config.batch))
    params = state.parameters()
    sums: dict[str, float] = {}
    for step in range(steps):
        with_neg = config.toggles.objective == "BPR"
        sampled = sample_batch(
            train,
            config.batch,
            rng_batch,
            user_train_sets=data.user_train_sets if with_neg else None,
            item_count=data.graph.item_count if with_neg else None,
            with_negatives=with_neg,
            max_retries=config.bpr_max_retries,
        )
        users, items = sampled[0], sampled[1]
        negatives = sampled[2] if with_neg else None
        total, breakdown, leaves = forward_batch(
            state, data, config, users, items, rngs, negatives=negatives
        )
        total.backward()
        if config.lr != 0.0:
            grads = {name: leaf.grad for name, leaf in leaves.items()}
            adam_step(params, grads, adam, config.lr)
        if config.assert_invariants:
            for name, value in params.items():
                if not np.isfinite(value).all():
                    raise NumericError(f"parameter {name!r} became non-finite")
        record = breakdown.as_dict()
        for key, value in record.items():
            sums[key] = sums.get(key, 0.0) + value
        if log_handle is not None:
            entry = {"epoch": epoch, "step": step, **record}
            log_handle.write(json.dumps(entry) + "\n")
    mean = ls.LossBreakdown(**{key: value / steps for key, value in sums.items()})
    return mean


@dataclass
class TrainReport:
    """Per-epoch traces and the early-stopping outcome of one fit."""

    epoch_losses: list[dict[str, float]] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_recall: float = 0.0
    epochs_run: int = 0
    stopped_reason: str = ""

    def as_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "val_trace": self.val_trace,
            "epoch_seconds": self.epoch_seconds,
            "best_epoch": self.best_epoch,
            "best_val_recall": self.best_val_recall,
            "epochs_run": self.epochs_run,
            "stopped_reason": self.stopped_reason,
        }


def _validation_recall(state: md.ModelState, data: TrainingData, config: TrainConfig, cutoff: int = 20) -> float:
    from .evaluator import EvalContext, evaluate

    user_vecs, item_vecs = md.reconstruct_populations(
        state,
        data.graph,
        data.store,
        use_dual_intent=config.toggles.use_dual_intent,
        hops=config.layers,
    )
    ctx = EvalContext(user_vecs=user_vecs, item_vecs=item_vecs)
    report = evaluate(ctx, data.split.train, data.split.validation, cutoffs=(cutoff,))
    return report.recall[cutoff]


def fit(
    state: md.ModelState,
    data: TrainingData,
    config: TrainConfig,
    log_path=None,
) -> tuple[TrainReport, md.ModelState]:
    """Train with early stopping on validation Recall@20; return best state.

    The best state is round-tripped through the checkpoint encoding and its
    validation metric recomputed, so a reloaded checkpoint reproduces the
    reported number exactly.
    """
    report = TrainReport()
    adam = AdamState.for_params(state.parameters())
    rng_batch = substream(config.seed, "batch")
    rngs = _BatchRngs(vmf=substream(config.seed, "vmf"), epsilon=substream(config.seed, "epsilon"))
    best_blob = md.checkpoint_bytes(state)
    best_metric = -np.inf
    stale = 0
    log_handle = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs_max + 1):
            started = time.perf_counter()
            mean = train_epoch(
                state, data, config, adam, rng_batch, rngs, log_handle=log_handle, epoch=epoch
            )
            report.epoch_seconds.append(time.perf_counter() - started)
            report.epoch_losses.append(mean.as_dict())
            metric = _validation_recall(state, data, config)
            report.val_trace.append(metric)
            report.epochs_run = epoch
            if metric > best_metric:
                best_metric = metric
                report.best_epoch = epoch
                best_blob = md.checkpoint_bytes(state)
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    report.stopped_reason = "patience"
                    break
        if not report.stopped_reason:
            report.stopped_reason = "max_epochs"
    finally:
        if log_handle is not None:
            log_handle.close()
    best_state = md.load_checkpoint_bytes(best_blob)
    report.best_val_recall = _validation_recall(best_state, data, config)
    return report, best_state
