"""Detection of cryptocurrency clients from encrypted-traffic metadata.

Packet timing and size only: traces are split by direction, turned into six
per-packet features, and classified with a from-scratch random forest.
"""

from .dataset import LabeledDataset, assemble, binary_relabel, kfold
from .features import FEATURE_NAMES, WindowConfig, featurize, moving_stat
from .forest import RandomForest, TrainConfig, permutation_importance, train
from .metrics import auc, confusion, latency_estimate, rates, roc
from .synth import ClassProfile, sample_trace
from .trace import Direction, DirectionalTrace, PacketRecord, TraceLabel

__version__ = "0.1.0"

__all__ = [
    "ClassProfile", "Direction", "DirectionalTrace", "FEATURE_NAMES", "LabeledDataset",
    "PacketRecord", "RandomForest", "TraceLabel", "TrainConfig", "WindowConfig",
    "assemble", "auc", "binary_relabel", "confusion", "featurize", "kfold",
    "latency_estimate", "moving_stat", "permutation_importance", "rates", "roc",
    "sample_trace", "train",
]
