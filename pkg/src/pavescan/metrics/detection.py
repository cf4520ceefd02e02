"""Detection matching, precision-recall sweeps, AP/mAP and the per-class summary report."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from ..dataset.records import BoxAnnotation
from ..dataset.taxonomy import CLASSES, ClassTable
from ..geometry import pairwise_iou

AP_METHODS = ("all_point", "eleven_point")


class GroundTruth(NamedTuple):
    class_id: int
    box: tuple[float, float, float, float]


def as_ground_truth(gts, image_size=None) -> list[GroundTruth]:
    out = []
    for g in gts:
        if isinstance(g, BoxAnnotation):
            if image_size is None:
                raise ValueError("image_size is required for normalized BoxAnnotation ground truth")
            out.append(GroundTruth(g.class_id, g.to_xyxy(*image_size)))
        else:
            out.append(GroundTruth(int(g[0]), tuple(float(v) for v in g[1])))
    return out


@dataclass
class MatchResult:
    status: list[str]  # per detection, input order: "TP" or "FP"
    matched_gt: list[int]  # GT index or -1
    iou: list[float]  # IoU with the matched GT (0.0 for FP)
    gt_matched: list[bool]
    counts: dict[int, dict[str, int]] = field(default_factory=dict)


def match_detections(dets, gts, iou_threshold: float = 0.5, image_size=None) -> MatchResult:
    """Greedy per-class matching in descending score order.

    Each detection takes the still-unmatched GT of its class with the highest
    IoU (ties to the lower GT index) when that IoU reaches ``iou_threshold``.
    """
    gts = as_ground_truth(gts, image_size)
    n = len(dets)
    status, matched, ious = ["FP"] * n, [-1] * n, [0.0] * n
    gt_matched = [False] * len(gts)
    order = sorted(range(n), key=lambda i: (-dets[i].score, i))
    for class_id in sorted({d.class_id for d in dets} | {g.class_id for g in gts}):
        gt_idx = [j for j, g in enumerate(gts) if g.class_id == class_id]
        det_idx = [i for i in order if dets[i].class_id == class_id]
        if not gt_idx or not det_idx:
            continue
        iou = pairwise_iou([dets[i].box for i in det_idx], [gts[j].box for j in gt_idx])
        free = np.ones(len(gt_idx), dtype=bool)
        for row, i in enumerate(det_idx):
            cand = np.where(free, iou[row], -1.0)
            best = int(np.argmax(cand))
            if cand[best] >= iou_threshold:
                free[best] = False
                status[i], matched[i], ious[i] = "TP", gt_idx[best], float(iou[row, best])
                gt_matched[gt_idx[best]] = True

    counts: dict[int, dict[str, int]] = {}
    for class_id in sorted({d.class_id for d in dets} | {g.class_id for g in gts}):
        tp = sum(1 for i, d in enumerate(dets) if d.class_id == class_id and status[i] == "TP")
        fp = sum(1 for i, d in enumerate(dets) if d.class_id == class_id and status[i] == "FP")
        n_gt = sum(1 for g in gts if g.class_id == class_id)
        counts[class_id] = {"tp": tp, "fp": fp, "fn": n_gt - tp}
    return MatchResult(status, matched, ious, gt_matched, counts)


@dataclass
class PRCurve:
    recall: list[float]
    precision: list[float]
    confidence: list[float]


def pr_curve(scored: list[tuple[float, bool]], n_gt: int) -> PRCurve:
    """One point per distinct confidence, sweeping from high to low."""
    if n_gt <= 0:
        raise ValueError("PR curve needs at least one ground truth")
    scored = sorted(scored, key=lambda t: -t[0])
    recall, precision, conf = [], [], []
    tp = fp = 0
    i = 0
    while i < len(scored):
        s = scored[i][0]
        while i < len(scored) and scored[i][0] == s:
            tp += scored[i][1]
            fp += not scored[i][1]
            i += 1
        recall.append(tp / n_gt)
        precision.append(tp / (tp + fp))
        conf.append(s)
    return PRCurve(recall, precision, conf)


def average_precision(scored: list[tuple[float, bool]], n_gt: int, method: str = "all_point") -> float | None:
    """AP from (confidence, is_tp) pairs of one class over the dataset; None without GT."""
    if method not in AP_METHODS:
        raise ValueError(f"unknown AP method {method!r}")
    if n_gt <= 0:
        return None
    curve = pr_curve(scored, n_gt)
    if not curve.recall:
        return 0.0
    r = np.array(curve.recall)
    p = np.array(curve.precision)
    interp = np.maximum.accumulate(p[::-1])[::-1]
    if method == "all_point":
        steps = np.diff(np.concatenate([[0.0], r]))
        return float(np.sum(steps * interp))
    total = 0.0
    for k in range(11):
        above = r >= k / 10
        total += float(interp[above][0]) if above.any() else 0.0
    return total / 11


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


@dataclass
class DetectionEvalReport:
    ap: dict[int, float | None]
    mAP: float
    precision: float
    recall: float
    f1: float
    ave_iou: float
    tp: int
    fp: int
    fn: int
    per_class: dict[int, dict[str, float]]
    iou_threshold: float = 0.5
    report_conf: float = 0.25
    ap_method: str = "all_point"
    flags: list[str] = field(default_factory=list)

    def to_dict(self, classes: ClassTable = CLASSES) -> dict:
        d = asdict(self)
        d["ap"] = {classes.name(k): v for k, v in self.ap.items()}
        d["per_class"] = {classes.name(k): v for k, v in self.per_class.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict, classes: ClassTable = CLASSES) -> "DetectionEvalReport":
        d = dict(d)
        d["ap"] = {classes.by_name(k).id: v for k, v in d["ap"].items()}
        d["per_class"] = {classes.by_name(k).id: v for k, v in d["per_class"].items()}
        return cls(**d)


def detection_report(
    dets_per_image,
    gts_per_image,
    iou_threshold: float = 0.5,
    report_conf: float = 0.25,
    ap_method: str = "all_point",
    image_sizes=None,
    classes: ClassTable = CLASSES,
) -> DetectionEvalReport:
    """Per-class AP over all detections; P/R/F1 and mean TP IoU at ``report_conf``."""
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detections and ground truth must cover the same images")
    scored = {c: [] for c in classes.ids}
    n_gt = dict.fromkeys(classes.ids, 0)
    tp_ious: list[float] = []
    tally = {c: {"tp": 0, "fp": 0} for c in classes.ids}
    for k, (dets, gts) in enumerate(zip(dets_per_image, gts_per_image)):
        gts = as_ground_truth(gts, None if image_sizes is None else image_sizes[k])
        for g in gts:
            n_gt[g.class_id] += 1
        res = match_detections(dets, gts, iou_threshold)
        for i, d in enumerate(dets):
            is_tp = res.status[i] == "TP"
            scored[d.class_id].append((float(d.score), is_tp))
            if d.score >= report_conf:
                tally[d.class_id]["tp" if is_tp else "fp"] += 1
                if is_tp:
                    tp_ious.append(res.iou[i])

    flags = []
    ap = {c: average_precision(scored[c], n_gt[c], ap_method) for c in classes.ids}
    present = [v for v in ap.values() if v is not None]
    if len(present) < len(ap):
        flags.append("classes without ground truth excluded from mAP: "
                     + ", ".join(classes.name(c) for c, v in ap.items() if v is None))
    per_class = {}
    for c in classes.ids:
        tp, fp = tally[c]["tp"], tally[c]["fp"]
        fn = n_gt[c] - tp
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        per_class[c] = {"n_gt": n_gt[c], "tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f1": f1_score(p, r)}
    tp = sum(v["tp"] for v in per_class.values())
    fp = sum(v["fp"] for v in per_class.values())
    fn = sum(v["fn"] for v in per_class.values())
    precision, recall = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    if tp + fp == 0:
        flags.append("no detections at report confidence; precision and F1 set to 0")
    return DetectionEvalReport(
        ap=ap,
        mAP=float(np.mean(present)) if present else 0.0,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        ave_iou=float(np.mean(tp_ious)) if tp_ious else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        per_class=per_class,
        iou_threshold=iou_threshold,
        report_conf=report_conf,
        ap_method=ap_method,
        flags=flags,
    )
