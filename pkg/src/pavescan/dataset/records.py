"""Annotation records, the dataset manifest and their on-disk formats.

Layout of a dataset root::

    images/<id>.png|jpg     survey images
    labels/<id>.txt         one "class_id cx cy w h" line per box (normalized)
    masks/<id>.png          optional single-channel indexed mask, values 0..5
    manifest.jsonl          optional; one record per line, carries split assignment
    dataset.json            optional; seed and class table
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .taxonomy import CLASSES, NUM_CLASSES, ClassTable

log = logging.getLogger(__name__)

EPS = 1e-6
SPLITS = ("train", "val", "unassigned")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
MANIFEST_NAME = "manifest.jsonl"
META_NAME = "dataset.json"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class BoxAnnotation:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def clamped(self) -> "BoxAnnotation":
        """Shift the center so the box lies inside the unit square."""
        w = min(self.w, 1.0)
        h = min(self.h, 1.0)
        cx = min(max(self.cx, w / 2), 1.0 - w / 2)
        cy = min(max(self.cy, h / 2), 1.0 - h / 2)
        return BoxAnnotation(self.class_id, cx, cy, w, h)

    def to_xyxy(self, width: float, height: float) -> tuple[float, float, float, float]:
        return (
            (self.cx - self.w / 2) * width,
            (self.cy - self.h / 2) * height,
            (self.cx + self.w / 2) * width,
            (self.cy + self.h / 2) * height,
        )

    @classmethod
    def from_xyxy(cls, class_id: int, box, width: float, height: float) -> "BoxAnnotation":
        x1, y1, x2, y2 = (float(v) for v in box)
        return cls(
            int(class_id),
            (x1 + x2) / 2 / width,
            (y1 + y2) / 2 / height,
            (x2 - x1) / width,
            (y2 - y1) / height,
        )

    def as_list(self) -> list:
        return [self.class_id, self.cx, self.cy, self.w, self.h]


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    width: int
    height: int
    boxes: tuple[BoxAnnotation, ...] = ()
    mask_path: str | None = None
    split: str = "unassigned"

    def class_ids(self) -> set[int]:
        return {b.class_id for b in self.boxes}

    def modal_class(self) -> int:
        """Most frequent box class, ties to the lowest id; 0 for an image without boxes."""
        if not self.boxes:
            return 0
        counts = np.bincount([b.class_id for b in self.boxes], minlength=NUM_CLASSES + 1)
        return int(np.argmax(counts))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "image": self.image_path,
            "width": self.width,
            "height": self.height,
            "boxes": [b.as_list() for b in self.boxes],
            "mask": self.mask_path,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ImageRecord":
        boxes = tuple(
            validate_box(int(c), float(cx), float(cy), float(w), float(h), where=f"record {d['id']}")
            for c, cx, cy, w, h in d.get("boxes", [])
        )
        split = d.get("split", "unassigned")
        if split not in SPLITS:
            raise DatasetError(f"record {d['id']}: unknown split {split!r}")
        return cls(
            id=str(d["id"]),
            image_path=str(d["image"]),
            width=int(d["width"]),
            height=int(d["height"]),
            boxes=boxes,
            mask_path=d.get("mask"),
            split=split,
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    classes: ClassTable = CLASSES
    seed: int = 0
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate record ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == name]

    def subset(self, records) -> "DatasetManifest":
        return replace(self, records=tuple(records))

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p


@dataclass
class Sample:
    """In-memory image with its annotations; the unit the preprocess ops work on."""

    id: str
    image: np.ndarray
    boxes: list[BoxAnnotation]
    mask: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


def validate_box(class_id: int, cx: float, cy: float, w: float, h: float, where: str = "") -> BoxAnnotation:
    if not 1 <= class_id <= NUM_CLASSES:
        raise DatasetError(f"{where}: class id {class_id} outside 1..{NUM_CLASSES}")
    if not (0 < w <= 1 + EPS and 0 < h <= 1 + EPS):
        raise DatasetError(f"{where}: box size ({w}, {h}) outside (0, 1]")
    return BoxAnnotation(class_id, cx, cy, w, h).clamped()


def parse_box_file(path: Path) -> list[BoxAnnotation]:
    """Parse a label file; malformed lines are logged with file:line and skipped.

    Out-of-range class ids are a hard error.
    """
    boxes = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        try:
            if len(parts) != 5:
                raise ValueError(f"expected 5 fields, got {len(parts)}")
            class_id = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            log.warning("%s:%d: malformed box line %r (%s)", path, line_no, stripped, exc)
            continue
        where = f"{path}:{line_no}"
        if not 1 <= class_id <= NUM_CLASSES:
            raise DatasetError(f"{where}: class id {class_id} outside 1..{NUM_CLASSES}")
        try:
            boxes.append(validate_box(class_id, cx, cy, w, h, where=where))
        except DatasetError as exc:
            log.warning("%s", exc)
    return boxes


def write_box_file(path: Path, boxes) -> None:
    # repr() round-trips floats exactly
    lines = [f"{int(b.class_id)} {float(b.cx)!r} {float(b.cy)!r} {float(b.w)!r} {float(b.h)!r}" for b in boxes]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


MASK_PALETTE = [
    (0, 0, 0),
    (255, 0, 0),
    (0, 0, 255),
    (0, 255, 0),
    (255, 255, 0),
    (0, 255, 255),
]


def write_mask(path: Path, mask: np.ndarray) -> None:
    img = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    palette = [v for rgb in MASK_PALETTE for v in rgb]
    img.putpalette(palette + [0] * (768 - len(palette)))
    img.save(path)


def read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("P", "L", "I", "I;16"):
            raise DatasetError(f"{path}: mask must be single-channel, got mode {img.mode}")
        return np.array(img).astype(np.uint8)


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.size


def _check_record_files(rec: ImageRecord, root: Path) -> None:
    image_path = Path(rec.image_path) if Path(rec.image_path).is_absolute() else root / rec.image_path
    if not image_path.is_file():
        raise DatasetError(f"record {rec.id}: missing image file {image_path}")
    if rec.mask_path is not None:
        mask_path = Path(rec.mask_path) if Path(rec.mask_path).is_absolute() else root / rec.mask_path
        if not mask_path.is_file():
            raise DatasetError(f"record {rec.id}: missing mask file {mask_path}")
        mask = read_mask(mask_path)
        if mask.shape != (rec.height, rec.width):
            raise DatasetError(
                f"record {rec.id}: mask is {mask.shape[1]}x{mask.shape[0]}, image is {rec.width}x{rec.height}"
            )
        if mask.size and mask.max() > NUM_CLASSES:
            raise DatasetError(f"record {rec.id}: mask value {int(mask.max())} outside 0..{NUM_CLASSES}")


def _scan_layout(root: Path) -> list[ImageRecord]:
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise DatasetError(f"{root}: no images/ directory")
    images = {p.stem: p for p in sorted(images_dir.iterdir()) if p.suffix.lower() in IMAGE_EXTENSIONS}
    labels_dir = root / "labels"
    if labels_dir.is_dir():
        orphans = sorted(p.name for p in labels_dir.glob("*.txt") if p.stem not in images)
        if orphans:
            raise DatasetError(f"{root}: missing image file for labels {orphans[:5]}")
    records = []
    for stem, image_path in sorted(images.items()):
        width, height = image_size(image_path)
        label_path = labels_dir / f"{stem}.txt"
        boxes = tuple(parse_box_file(label_path)) if label_path.is_file() else ()
        mask_path = root / "masks" / f"{stem}.png"
        records.append(
            ImageRecord(
                id=stem,
                image_path=str(image_path.relative_to(root)),
                width=width,
                height=height,
                boxes=boxes,
                mask_path=str(mask_path.relative_to(root)) if mask_path.is_file() else None,
            )
        )
    return records


def ingest_manifest(root) -> DatasetManifest:
    """Load and validate the dataset at ``root``.

    Uses ``manifest.jsonl`` when present (keeping split assignments), otherwise
    scans the ``images/``, ``labels/`` and ``masks/`` layout.
    """
    root = Path(root)
    meta_path = root / META_NAME
    seed, classes = 0, CLASSES
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        seed = int(meta.get("seed", 0))
        if "classes" in meta:
            classes = ClassTable.from_list(meta["classes"])
            if classes != CLASSES:
                raise DatasetError(f"{meta_path}: class table differs from the fixed taxonomy")

    manifest_path = root / MANIFEST_NAME
    if manifest_path.is_file():
        records = []
        for line_no, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{manifest_path}:{line_no}: {exc}") from exc
            records.append(ImageRecord.from_json(d))
    else:
        records = _scan_layout(root)

    for rec in records:
        _check_record_files(rec, root)
    return DatasetManifest(records=tuple(records), classes=classes, seed=seed, root=root)


def write_manifest(manifest: DatasetManifest, root=None) -> Path:
    root = Path(root) if root is not None else manifest.root
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    with path.open("w", encoding="utf-8") as f:
        for rec in manifest.records:
            f.write(json.dumps(rec.to_json()) + "\n")
    meta = {"seed": manifest.seed, "classes": manifest.classes.to_list()}
    (root / META_NAME).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def load_sample(manifest: DatasetManifest, rec: ImageRecord, with_mask: bool = True) -> Sample:
    image = read_image(manifest.resolve(rec.image_path))
    mask = None
    if with_mask and rec.mask_path is not None:
        mask = read_mask(manifest.resolve(rec.mask_path))
    return Sample(id=rec.id, image=image, boxes=list(rec.boxes), mask=mask)
