"""Compact one-stage detector: grid/anchor head, CIoU loss, DIoU-NMS and training."""

from .anchors import kmeans_anchors, mean_anchor_distance, shape_iou
from .boxes import Detection, box_iou, diou_nms, pairwise_iou
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import AnchorSet, DetectorConfig
from .infer import infer_detector
from .loss import ciou_torch, collate_targets, detection_loss
from .model import CompactDetector, Mish, build_compact_backbone, mish
from .targets import ScaleTargets, assign_targets, decode_box, decode_predictions, encode_box
from .train import TrainResult, evaluate_prepared, prepare_records, train_detector

__all__ = [
    "AnchorSet",
    "CheckpointError",
    "CompactDetector",
    "Detection",
    "DetectorConfig",
    "Mish",
    "ScaleTargets",
    "TrainResult",
    "assign_targets",
    "box_iou",
    "build_compact_backbone",
    "ciou_torch",
    "collate_targets",
    "decode_box",
    "decode_predictions",
    "detection_loss",
    "diou_nms",
    "encode_box",
    "evaluate_prepared",
    "infer_detector",
    "kmeans_anchors",
    "load_checkpoint",
    "mean_anchor_distance",
    "mish",
    "pairwise_iou",
    "prepare_records",
    "save_checkpoint",
    "shape_iou",
    "train_detector",
]
