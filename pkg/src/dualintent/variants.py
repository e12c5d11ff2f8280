"""Named configuration presets for the ablation and sweep experiments.

Every preset differs from ``full`` in exactly the documented switches, so
an experiment matrix is just a list of names.
"""

from __future__ import annotations

from dataclasses import replace

from .losses import LossToggles
from .trainer import TrainConfig

VARIANT_NAMES = (
    "full",
    "wo_fm",
    "wo_cm",
    "wo_bothm",
    "wo_diir",
    "wo_ir",
    "wo_bothr",
    "bpr",
    "au_user_item",
    "au_item",
    "layers_0",
    "layers_1",
    "layers_2",
    "layers_3",
    "layers_4",
)


def apply_variant(config: TrainConfig, name: str) -> TrainConfig:
    """Return ``config`` adjusted to the named experiment variant."""
    toggles = config.toggles
    if name == "full":
        return config
    if name == "wo_fm":
        return replace(config, toggles=replace(toggles, use_fine=False))
    if name == "wo_cm":
        return replace(config, toggles=replace(toggles, use_coarse=False))
    if name == "wo_bothm":
        return replace(config, toggles=replace(toggles, use_fine=False, use_coarse=False))
    if name == "wo_diir":
        return replace(config, toggles=replace(toggles, use_dual_intent=False, use_intra=False))
    if name == "wo_ir":
        return replace(config, toggles=replace(toggles, use_inter=False))
    if name == "wo_bothr":
        return replace(config, toggles=replace(toggles, use_intra=False, use_inter=False))
    if name == "bpr":
        return replace(config, toggles=replace(toggles, objective="BPR"))
    if name == "au_user_item":
        return replace(config, toggles=replace(toggles, uniformity_target="user_and_item"))
    if name == "au_item":
        return replace(config, toggles=replace(toggles, uniformity_target="item_only"))
    if name.startswith("layers_"):
        depth = name.removeprefix("layers_")
        if depth.isdigit() and 0 <= int(depth) <= 4:
            return replace(config, layers=int(depth))
    raise ValueError(f"unknown variant {name!r}")


def default_toggles() -> LossToggles:
    return LossToggles()
