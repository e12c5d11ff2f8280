"""Dual-intent recommender trained with alignment-uniformity objectives."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    DatasetSplit,
    EdgeList,
    InteractionGraph,
    build_graph,
    k_core_filter,
    largest_connected_component,
    load_interactions,
    propagate,
    split_dataset,
)
from .losses import LossBreakdown, LossToggles  # noqa: F401
from .model import IntentBank, ModelState, init_model  # noqa: F401
from .semantic import SemanticStore, load_semantic_vectors, synth_semantic_vectors  # noqa: F401
from .trainer import AdamState, TrainConfig, TrainingData, fit  # noqa: F401
