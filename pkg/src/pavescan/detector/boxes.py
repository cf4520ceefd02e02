"""Box geometry used by the detector; lives in ``pavescan.geometry`` so metrics can share it."""

from ..geometry import Detection, box_iou, detection_order, diou_nms, diou_one_to_many, pairwise_iou

__all__ = ["Detection", "box_iou", "detection_order", "diou_nms", "diou_one_to_many", "pairwise_iou"]
