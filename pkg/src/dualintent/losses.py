"""Training objectives: alignment-uniformity, matching, regularization, BPR.

All functions consume tape tensors (numpy arrays are wrapped as constants)
and return scalar tensors, so every objective exposes value-and-gradient
through the same pathway the finite-difference suite checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .errors import DegenerateInputError, InsufficientBatchError

UNIFORMITY_TARGETS = ("user_only", "user_and_item", "item_only")
OBJECTIVES = ("AU", "BPR")


@dataclass(frozen=True)
class LossToggles:
    """Ablation switches; the full model has everything enabled."""

    use_fine: bool = True
    use_coarse: bool = True
    use_intra: bool = True
    use_inter: bool = True
    use_dual_intent: bool = True
    uniformity_target: str = "user_only"
    objective: str = "AU"

    def __post_init__(self):
        if self.uniformity_target not in UNIFORMITY_TARGETS:
            raise ValueError(f"unknown uniformity target {self.uniformity_target!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class LossBreakdown:
    """Per-step loss components; disabled components are exactly zero."""

    align: float = 0.0
    uniform_user: float = 0.0
    uniform_item: float = 0.0
    bpr: float = 0.0
    coarse: float = 0.0
    fine: float = 0.0
    intra: float = 0.0
    inter: float = 0.0
    l2_reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def recombine(self, omega: float, lambda1: float, lambda2: float) -> float:
        """Total implied by the stored components and the given weights."""
        return (
            self.align
            + self.bpr
            + omega * (self.uniform_user + self.uniform_item)
            + lambda1 * (self.coarse + self.fine)
            + lambda2 * (self.intra + self.inter)
            + self.l2_reg
        )


def _batch_size(z) -> int:
    return int(ad.as_tensor(z).shape[0])


def align_loss(z_u, z_v) -> ad.Tensor:
    """Mean squared distance between paired rows."""
    z_u, z_v = ad.as_tensor(z_u), ad.as_tensor(z_v)
    if z_u.shape[0] == 0:
        raise InsufficientBatchError("alignment needs a non-empty batch")
    diff = ad.sub(z_u, z_v)
    return ad.tmean(ad.tsum(ad.mul(diff, diff), axis=1))


def uniform_loss(z) -> ad.Tensor:
    """log of the mean Gaussian-kernel similarity over ordered pairs b != b'."""
    z = ad.as_tensor(z)
    b = z.shape[0]
    if b < 2:
        raise InsufficientBatchError("uniformity needs at least two rows")
    logits = ad.mul(ad.pairwise_sq_dists(z), -2.0)
    mask = np.zeros((b, b))
    np.fill_diagonal(mask, -np.inf)
    masked = ad.add(logits, mask)
    return ad.sub(ad.logsumexp(masked), float(np.log(b * (b - 1))))


def au_loss(z_u, z_v, omega: float, target: str = "user_only") -> ad.Tensor:
    """Alignment plus omega-weighted uniformity over the configured target."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    if target not in UNIFORMITY_TARGETS:
        raise ValueError(f"unknown uniformity target {target!r}")
    total = align_loss(z_u, z_v)
    if omega == 0.0:
        return total
    if target in ("user_only", "user_and_item"):
        total = ad.add(total, ad.mul(uniform_loss(z_u), omega))
    if target in ("item_only", "user_and_item"):
        total = ad.add(total, ad.mul(uniform_loss(z_v), omega))
    return total


def coarse_loss(z, anchors, coarse_map) -> ad.Tensor:
    """Cosine matching against orthogonally mapped anchors.

    mean(1 - cos(z_b, W anchor_b)) plus the squared-Frobenius orthogonality
    penalty ||W^T W - I||^2.
    """
    z = ad.as_tensor(z)
    anchors = ad.as_tensor(anchors)
    w = ad.as_tensor(coarse_map)
    mapped = ad.matmul(anchors, ad.transpose(w))
    norms = np.linalg.norm(mapped.data, axis=1)
    if (norms < 1e-12).any():
        raise DegenerateInputError("mapped anchor has zero norm")
    cos = ad.dot_rows(ad.normalize_rows(z), ad.normalize_rows(mapped))
    match = ad.tmean(ad.sub(1.0, cos))
    gram = ad.matmul(ad.transpose(w), w)
    residual = ad.sub(gram, np.eye(w.shape[0]))
    penalty = ad.tsum(ad.mul(residual, residual))
    return ad.add(match, penalty)


def mine_neighbors(z) -> np.ndarray:
    """Index of the most cosine-similar other row, ties to the lowest index."""
    z = ad.as_tensor(z).data
    if z.shape[0] < 2:
        raise InsufficientBatchError("neighbor mining needs at least two rows")
    unit = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    return np.argmax(sims, axis=1)


def fine_loss(z, c_pro, neighbors) -> ad.Tensor:
    """Negated neighbor-prototype matching bound.

    Maximizes cos(z_b, c_pro[j*_b]) against the log-mean of exp(cos) over
    all mismatched (b, j != j*_b) pairs; returns the negation so that
    minimizing the result maximizes the bound.
    """
    z = ad.as_tensor(z)
    c_pro = ad.as_tensor(c_pro)
    b = z.shape[0]
    if b < 2:
        raise InsufficientBatchError("fine matching needs at least two rows")
    neighbors = np.asarray(neighbors, dtype=np.int64)
    z_unit = ad.normalize_rows(z)
    c_unit = ad.normalize_rows(c_pro)
    positive = ad.tmean(ad.dot_rows(z_unit, ad.take_rows(c_unit, neighbors)))
    cos_all = ad.matmul(z_unit, ad.transpose(c_unit))
    mask = np.zeros((b, b))
    mask[np.arange(b), neighbors] = -np.inf
    masked = ad.add(cos_all, mask)
    log_mean = ad.sub(ad.logsumexp(masked), float(np.log(b * (b - 1))))
    return ad.sub(log_mean, positive)


def infonce(a, b, tau: float) -> ad.Tensor:
    """Standard InfoNCE with in-batch negatives; row i of a pairs with row i of b."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    logits = ad.mul(ad.matmul(a, ad.transpose(b)), 1.0 / tau)
    positive = ad.mul(ad.dot_rows(a, b), 1.0 / tau)
    return ad.tmean(ad.sub(ad.logsumexp(logits, axis=1), positive))


def intra_loss(z_u, z_v, mu_u, mu_v, tau: float) -> ad.Tensor:
    """Contrast reconstructed rows against their own base representations."""
    return ad.add(infonce(z_u, mu_u, tau), infonce(z_v, mu_v, tau))


def inter_loss(z_u, z_v, mu_u, mu_v, tau: float) -> ad.Tensor:
    """Contrast users against positive items, in both representation stages."""
    return ad.add(infonce(z_u, z_v, tau), infonce(mu_u, mu_v, tau))


def bpr_loss(z_u, z_v_pos, z_v_neg) -> ad.Tensor:
    """Pairwise ranking loss: mean -log sigma(pos - neg)."""
    z_u = ad.as_tensor(z_u)
    pos = ad.dot_rows(z_u, ad.as_tensor(z_v_pos))
    neg = ad.dot_rows(z_u, ad.as_tensor(z_v_neg))
    return ad.tmean(ad.softplus(ad.sub(neg, pos)))


@dataclass
class LossInputs:
    """Scalar component tensors; None means the component was not computed."""

    align: ad.Tensor | None = None
    uniform_user: ad.Tensor | None = None
    uniform_item: ad.Tensor | None = None
    bpr: ad.Tensor | None = None
    coarse: ad.Tensor | None = None
    fine: ad.Tensor | None = None
    intra: ad.Tensor | None = None
    inter: ad.Tensor | None = None
    l2_sq: ad.Tensor | None = None


def total_loss(
    parts: LossInputs,
    toggles: LossToggles,
    omega: float,
    lambda1: float,
    lambda2: float,
    weight_decay: float,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Combine enabled components into the joint objective.

    total = main + lambda1*(coarse + fine) + lambda2*(intra + inter)
          + weight_decay*||params||^2, where main is align + omega*uniformity
    or the BPR loss depending on the configured objective. Disabled or
    missing components contribute exactly zero.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("lambda weights must be non-negative")
    breakdown = LossBreakdown()
    total = ad.as_tensor(0.0)

    def enabled(tensor, flag):
        return tensor if (flag and tensor is not None) else None

    if toggles.objective == "BPR":
        main = enabled(parts.bpr, True)
        if main is not None:
            breakdown.bpr = float(main.data)
            total = ad.add(total, main)
    else:
        if parts.align is not None:
            breakdown.align = float(parts.align.data)
            total = ad.add(total, parts.align)
        u_user = enabled(parts.uniform_user, toggles.uniformity_target in ("user_only", "user_and_item"))
        if u_user is not None:
            breakdown.uniform_user = float(u_user.data)
            total = ad.add(total, ad.mul(u_user, omega))
        u_item = enabled(parts.uniform_item, toggles.uniformity_target in ("item_only", "user_and_item"))
        if u_item is not None:
            breakdown.uniform_item = float(u_item.data)
            total = ad.add(total, ad.mul(u_item, omega))

    coarse = enabled(parts.coarse, toggles.use_coarse)
    if coarse is not None:
        breakdown.coarse = float(coarse.data)
        total = ad.add(total, ad.mul(coarse, lambda1))
    fine = enabled(parts.fine, toggles.use_fine)
    if fine is not None:
        breakdown.fine = float(fine.data)
        total = ad.add(total, ad.mul(fine, lambda1))
    intra = enabled(parts.intra, toggles.use_intra and toggles.use_dual_intent)
    if intra is not None:
        breakdown.intra = float(intra.data)
        total = ad.add(total, ad.mul(intra, lambda2))
    inter = enabled(parts.inter, toggles.use_inter)
    if inter is not None:
        breakdown.inter = float(inter.data)
        total = ad.add(total, ad.mul(inter, lambda2))
    if parts.l2_sq is not None and weight_decay > 0.0:
        reg = ad.mul(parts.l2_sq, weight_decay)
        breakdown.l2_reg = float(reg.data)
        total = ad.add(total, reg)
    breakdown.total = float(total.data)
    return total, breakdown
