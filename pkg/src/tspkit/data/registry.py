"""Class registry: ids, names and the flags the metrics/statistics rely on."""

from __future__ import annotations

import os
from dataclasses import dataclass

IGNORE_LABEL = 255

HUMAN_CLASS_NAMES = frozenset({"person", "rider"})

_FLAG_NAMES = ("instances", "road", "participant")


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    name: str
    has_instances: bool = False
    is_road: bool = False
    is_traffic_participant: bool = False

    @property
    def is_human(self) -> bool:
        return self.is_traffic_participant and self.name in HUMAN_CLASS_NAMES

    @property
    def is_vehicle(self) -> bool:
        return self.is_traffic_participant and self.name not in HUMAN_CLASS_NAMES


@dataclass(frozen=True)
class ClassRegistry:
    classes: tuple[ClassInfo, ...]

    def __post_init__(self):
        if not self.classes:
            raise RegistryError("registry is empty")
        for expected, info in enumerate(self.classes):
            if info.class_id != expected:
                raise RegistryError(f"class ids must be contiguous from 0; found {info.class_id} at position {expected}")
        if len(self.classes) > IGNORE_LABEL:
            raise RegistryError(f"at most {IGNORE_LABEL} classes fit in an 8-bit label map")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise RegistryError("class names must be unique")
        if self.classes[0].has_instances:
            # 0 * 1000 + i would collide with the stuff id i
            raise RegistryError("class 0 cannot carry instances")

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, class_id: int) -> ClassInfo:
        return self.classes[class_id]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.class_id
        raise KeyError(name)

    @property
    def instance_class_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.has_instances]

    @property
    def participant_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.is_traffic_participant]

    @property
    def road_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.is_road]

    @property
    def human_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.is_human]

    @property
    def vehicle_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.is_vehicle]

    def is_valid_class(self, class_id: int) -> bool:
        return 0 <= class_id < len(self.classes)

    # -- text table ---------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for c in self.classes:
            flags = [f for f, on in zip(_FLAG_NAMES, (c.has_instances, c.is_road, c.is_traffic_participant)) if on]
            lines.append(f"{c.class_id}\t{c.name}\t{','.join(flags) or '-'}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClassRegistry":
        classes = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = raw.rstrip("\n").split("\t")
            if len(parts) not in (2, 3):
                raise RegistryError(f"line {lineno}: expected id<TAB>name<TAB>flags")
            try:
                class_id = int(parts[0])
            except ValueError:
                raise RegistryError(f"line {lineno}: bad class id {parts[0]!r}") from None
            flags = set()
            if len(parts) == 3 and parts[2].strip() not in ("", "-"):
                flags = {f.strip() for f in parts[2].split(",")}
            unknown = flags - set(_FLAG_NAMES)
            if unknown:
                raise RegistryError(f"line {lineno}: unknown flags {sorted(unknown)}")
            classes.append(ClassInfo(class_id, parts[1].strip(), "instances" in flags, "road" in flags,
                                     "participant" in flags))
        return cls(tuple(classes))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ClassRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


_PARTICIPANTS = {"person", "rider", "car", "truck", "bus", "motorcycle", "bicycle"}

# Cityscapes trainId order without 'train', the three road-marking classes,
# then the two Cityscapes classes that followed 'train'.
DEFAULT_CLASS_NAMES = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light", "traffic sign",
    "vegetation", "terrain", "sky", "person", "rider", "car", "truck", "bus",
    "crosswalk", "driving indication", "lane",
    "motorcycle", "bicycle",
)


def _build(names) -> ClassRegistry:
    return ClassRegistry(tuple(
        ClassInfo(i, n, has_instances=n in _PARTICIPANTS, is_road=n == "road", is_traffic_participant=n in _PARTICIPANTS)
        for i, n in enumerate(names)
    ))


def default_registry() -> ClassRegistry:
    """The 21-class traffic monitoring registry."""
    return _build(DEFAULT_CLASS_NAMES)


def toy_registry() -> ClassRegistry:
    """Four classes for desk-scale training runs."""
    return _build(("road", "building", "car", "person"))
