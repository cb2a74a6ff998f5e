"""Hierarchy-aware term embeddings trained with a multi-similarity loss."""
from .encoder import EmbeddingModel, EncoderConfig, cosine, embed
from .estimator import HierarchyEmbedder
from .exceptions import (
    AmbiguousString,
    ConfigInvalid,
    CycleDetected,
    DegenerateInput,
    DuplicateParent,
    EmptyInput,
    EmptyTerm,
    ForestError,
    HierEmbedError,
    InsufficientCategories,
    MalformedLine,
    ModelFormatError,
    NoTrainingData,
    NonFiniteGradient,
    NonFiniteInput,
    OneClassOnly,
    OrphanCode,
    UnknownCode,
    ZeroVector,
)
from .hierarchy import (
    Distance,
    HierarchyForest,
    distance,
    enumerate_pairs,
    forest_stats,
    load_forest,
    parse_forest,
    save_forest,
    serialize_forest,
)
from .loss import LossParams, SimilaritySet, hierarchical_ms_loss, ms_loss
from .metrics import EvalReport, average_precision, evaluate, roc_auc, spearman
from .mining import MinerConfig, build_anchor_groups, mine_hard_triplets, sample_eval_pairs
from .synth import SynthConfig, generate, write_synth
from .training import TrainConfig, Trainer, train

__version__ = "0.1.0"


__all__ = [
    "AmbiguousString",
    "ConfigInvalid",
    "CycleDetected",
    "DegenerateInput",
    "Distance",
    "DuplicateParent",
    "EmbeddingModel",
    "EmptyInput",
    "EmptyTerm",
    "EncoderConfig",
    "EvalReport",
    "ForestError",
    "HierEmbedError",
    "HierarchyEmbedder",
    "HierarchyForest",
    "InsufficientCategories",
    "LossParams",
    "MalformedLine",
    "MinerConfig",
    "ModelFormatError",
    "NoTrainingData",
    "NonFiniteGradient",
    "NonFiniteInput",
    "OneClassOnly",
    "OrphanCode",
    "SimilaritySet",
    "SynthConfig",
    "TrainConfig",
    "Trainer",
    "UnknownCode",
    "ZeroVector",
    "average_precision",
    "build_anchor_groups",
    "cosine",
    "distance",
    "embed",
    "enumerate_pairs",
    "evaluate",
    "forest_stats",
    "generate",
    "hierarchical_ms_loss",
    "load_forest",
    "mine_hard_triplets",
    "ms_loss",
    "parse_forest",
    "roc_auc",
    "sample_eval_pairs",
    "save_forest",
    "serialize_forest",
    "spearman",
    "train",
    "write_synth",
]
