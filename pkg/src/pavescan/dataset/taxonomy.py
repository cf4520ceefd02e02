"""Fixed pavement-distress taxonomy."""

from __future__ import annotations

from dataclasses import dataclass

BACKGROUND_ID = 0


@dataclass(frozen=True)
class DistressClass:
    id: int
    name: str


class ClassTable:
    """Ordered class list; ids are 1-based, 0 is reserved for mask background."""

    def __init__(self, classes: tuple[DistressClass, ...]):
        ids = [c.id for c in classes]
        if ids != list(range(1, len(classes) + 1)):
            raise ValueError(f"class ids must be 1..{len(classes)} in order, got {ids}")
        self.classes = classes
        self._by_name = {c.name: c for c in classes}

    def __iter__(self):
        return iter(self.classes)

    def __len__(self) -> int:
        return len(self.classes)

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassTable) and self.classes == other.classes

    def __hash__(self) -> int:
        return hash(self.classes)

    def __repr__(self) -> str:
        return f"ClassTable({[c.name for c in self.classes]})"

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.classes]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def n_mask_classes(self) -> int:
        return len(self.classes) + 1

    def name(self, class_id: int) -> str:
        if class_id == BACKGROUND_ID:
            return "Background"
        return self.classes[class_id - 1].name

    def by_name(self, name: str) -> DistressClass:
        return self._by_name[name]

    def to_list(self) -> list[dict]:
        return [{"id": c.id, "name": c.name} for c in self.classes]

    @classmethod
    def from_list(cls, items: list[dict]) -> "ClassTable":
        return cls(tuple(DistressClass(int(d["id"]), str(d["name"])) for d in items))


ALLIGATOR_CRACK = DistressClass(1, "AlligatorCrack")
BOWL_DEPRESSION = DistressClass(2, "BowlDepression")
DELAMINATION = DistressClass(3, "Delamination")
CRACK = DistressClass(4, "Crack")
SCALING = DistressClass(5, "Scaling")

CLASSES = ClassTable((ALLIGATOR_CRACK, BOWL_DEPRESSION, DELAMINATION, CRACK, SCALING))
NUM_CLASSES = len(CLASSES)
NUM_MASK_CLASSES = NUM_CLASSES + 1
