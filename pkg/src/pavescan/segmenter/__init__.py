"""Atrous-convolution segmenter with ASPP, weighted cross-entropy and plateau early stopping."""

from ..runtime import CheckpointError
from .config import AsppConfig, SegmenterConfig
from .loss import class_weights_from_frequency, weighted_cross_entropy, weighted_cross_entropy_logits, weights_from_counts
from .model import ASPP, DeepLabLite, build_aspp, build_segmenter, effective_kernel
from .predict import predict_mask
from .train import (
    EarlyStopping,
    SegTrainResult,
    early_stop_epoch,
    evaluate_prepared,
    load_checkpoint,
    prepare_masked,
    save_checkpoint,
    train_segmenter,
)

__all__ = [
    "ASPP",
    "AsppConfig",
    "CheckpointError",
    "DeepLabLite",
    "EarlyStopping",
    "SegTrainResult",
    "SegmenterConfig",
    "build_aspp",
    "build_segmenter",
    "class_weights_from_frequency",
    "early_stop_epoch",
    "effective_kernel",
    "evaluate_prepared",
    "load_checkpoint",
    "predict_mask",
    "prepare_masked",
    "save_checkpoint",
    "train_segmenter",
    "weighted_cross_entropy",
    "weighted_cross_entropy_logits",
    "weights_from_counts",
]
