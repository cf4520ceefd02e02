"""Report files: detection and segmentation tables as CSV, markdown and JSON."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..dataset.taxonomy import CLASSES, ClassTable
from ..metrics.detection import DetectionEvalReport
from ..metrics.segmentation import SegEvalReport

DEFAULT_COLUMNS = ("Original", "Processed")


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def detection_rows(reports: dict[str, DetectionEvalReport], classes: ClassTable = CLASSES) -> list[list[str]]:
    """Per-class AP rows, per-class F1 rows, then mAP, F1-score and ave IoU; one column per run."""
    runs = list(reports.values())
    rows = []
    for c in classes.ids:
        rows.append([f"{classes.name(c)} AP"] + [_num(r.ap.get(c)) for r in runs])
    for c in classes.ids:
        rows.append([f"{classes.name(c)} F1"] + [_num(r.per_class[c]["f1"] if r.per_class[c]["n_gt"] else None) for r in runs])
    rows.append(["mAP"] + [_num(r.mAP) for r in runs])
    rows.append(["F1-score"] + [_num(r.f1) for r in runs])
    rows.append(["ave IoU"] + [_num(r.ave_iou) for r in runs])
    return rows


def segmentation_rows(reports: dict[str, SegEvalReport], classes: ClassTable = CLASSES) -> list[list[str]]:
    runs = list(reports.values())
    rows = []
    n = classes.n_mask_classes
    for c in range(n):
        rows.append([f"{classes.name(c)} IoU"] + [_num(r.iou[c] if c in r.present else None) for r in runs])
    for c in range(n):
        rows.append([f"{classes.name(c)} Dice"] + [_num(r.dice[c] if c in r.present else None) for r in runs])
    rows.append(["mIoU"] + [_num(r.miou) for r in runs])
    rows.append(["mean Dice"] + [_num(r.mean_dice) for r in runs])
    rows.append(["pixel accuracy"] + [_num(r.pixel_accuracy) for r in runs])
    return rows


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def to_markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def emit_report(out, detection: dict[str, DetectionEvalReport] | None = None,
                segmentation: dict[str, SegEvalReport] | None = None,
                curves: dict[str, list[dict]] | None = None, classes: ClassTable = CLASSES) -> list[Path]:
    """Write ``detection_report.*`` / ``segmentation_report.*`` and ``<name>_curve.csv`` files.

    Each report dict maps a column name (for example Original, Processed) to
    one evaluation run; columns keep the dict's order.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, reports, rows_fn in (
        ("detection_report", detection, detection_rows),
        ("segmentation_report", segmentation, segmentation_rows),
    ):
        if not reports:
            continue
        header = ["metric"] + list(reports)
        rows = rows_fn(reports, classes)
        payload = {"columns": list(reports), "reports": {k: r.to_dict() if stem == "segmentation_report" else r.to_dict(classes)
                                                          for k, r in reports.items()}}
        for suffix, text in (("csv", to_csv(header, rows)), ("md", to_markdown(header, rows)), ("json", _dump(payload))):
            path = out / f"{stem}.{suffix}"
            path.write_text(text, encoding="utf-8")
            written.append(path)
    for name, records in (curves or {}).items():
        if not records:
            continue
        path = out / f"{name}_curve.csv"
        columns = list(records[0])
        rows = [[_cell(r[c]) for c in columns] for r in records]
        path.write_text(to_csv(columns, rows), encoding="utf-8")
        written.append(path)
    return written


def load_report(path, classes: ClassTable = CLASSES) -> dict:
    """Reload a ``*_report.json`` into {column: report object}."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for name in payload["columns"]:
        d = payload["reports"][name]
        out[name] = SegEvalReport.from_dict(d) if "confusion" in d else DetectionEvalReport.from_dict(d, classes)
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)
