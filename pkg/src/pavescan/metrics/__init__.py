"""Detection and segmentation evaluation."""

from .detection import (
    AP_METHODS,
    DetectionEvalReport,
    GroundTruth,
    MatchResult,
    PRCurve,
    average_precision,
    detection_report,
    f1_score,
    match_detections,
    pr_curve,
)
from .segmentation import SegEvalReport, seg_confusion, seg_report

__all__ = [
    "AP_METHODS",
    "DetectionEvalReport",
    "GroundTruth",
    "MatchResult",
    "PRCurve",
    "SegEvalReport",
    "average_precision",
    "detection_report",
    "f1_score",
    "match_detections",
    "pr_curve",
    "seg_confusion",
    "seg_report",
]
