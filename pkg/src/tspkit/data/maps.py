"""Semantic label maps, encoded instance maps, and their cross-validation."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .registry import IGNORE_LABEL, ClassRegistry

INSTANCE_MULTIPLIER = 1000
MAX_INSTANCES_PER_CLASS = INSTANCE_MULTIPLIER - 1
WEATHER_TAGS = ("sunny", "cloudy", "rain", "fog", "snow")
SPLITS = ("train", "val", "test")


class AnnotationError(ValueError):
    pass


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LabelMap:
    """H x W semantic class ids (uint8); 255 marks ignored pixels."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise AnnotationError(f"label map must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise AnnotationError("label values must fit in 8 bits")
        object.__setattr__(self, "pixels", _frozen(arr, np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def check_classes(self, num_classes: int) -> None:
        bad = (self.pixels != IGNORE_LABEL) & (self.pixels >= num_classes)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise AnnotationError(
                f"class id {int(self.pixels[r, c])} out of range [0, {num_classes}) at (row={r}, col={c})"
            )

    def __eq__(self, other):
        return isinstance(other, LabelMap) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class InstanceMap:
    """H x W encoded ids: ``class_id * 1000 + index`` for instances, ``class_id`` otherwise."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise AnnotationError(f"instance map must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max):
            raise AnnotationError("instance ids must fit in 32 bits")
        object.__setattr__(self, "pixels", _frozen(arr, np.uint32))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def decoded(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel (class_id, instance_index) arrays."""
        ids = self.pixels.astype(np.int64)
        is_inst = ids >= INSTANCE_MULTIPLIER
        cls = np.where(is_inst, ids // INSTANCE_MULTIPLIER, ids)
        idx = np.where(is_inst, ids % INSTANCE_MULTIPLIER, 0)
        return cls, idx

    def instance_areas(self) -> dict[tuple[int, int], int]:
        """Pixel area of every (class_id, index>0) instance."""
        ids = self.pixels[self.pixels >= INSTANCE_MULTIPLIER]
        values, counts = np.unique(ids, return_counts=True)
        return {(int(v) // INSTANCE_MULTIPLIER, int(v) % INSTANCE_MULTIPLIER): int(n)
                for v, n in zip(values, counts) if int(v) % INSTANCE_MULTIPLIER > 0}

    def __eq__(self, other):
        return isinstance(other, InstanceMap) and np.array_equal(self.pixels, other.pixels)


def encode_instance_id(class_id: int, instance_index: int) -> int:
    if not 0 <= instance_index <= MAX_INSTANCES_PER_CLASS:
        raise AnnotationError(f"instance index {instance_index} outside [0, {MAX_INSTANCES_PER_CLASS}]")
    if instance_index == 0:
        return class_id
    if class_id == 0:
        raise AnnotationError("class 0 cannot carry instances (id would collide with stuff ids)")
    return class_id * INSTANCE_MULTIPLIER + instance_index


def decode_instance_id(encoded: int, registry: ClassRegistry | None = None) -> tuple[int, int]:
    encoded = int(encoded)
    if encoded >= INSTANCE_MULTIPLIER:
        class_id, index = divmod(encoded, INSTANCE_MULTIPLIER)
    else:
        class_id, index = encoded, 0
    if registry is not None:
        if class_id != IGNORE_LABEL and not registry.is_valid_class(class_id):
            raise AnnotationError(f"id {encoded} decodes to unknown class {class_id}")
        if index > 0 and not registry[class_id].has_instances:
            raise AnnotationError(f"id {encoded}: class {registry[class_id].name!r} has no instances")
    return class_id, index


@dataclass
class ValidationReport:
    mismatch_count: int = 0
    mismatches: list[tuple[int, int, int, int]] = field(default_factory=list)  # (row, col, label, inst class)
    invalid_classes: list[int] = field(default_factory=list)
    stuff_instances: list[tuple[int, int]] = field(default_factory=list)  # (class_id, index)
    instances_per_class: dict[int, int] = field(default_factory=dict)

    MAX_LISTED = 1000

    @property
    def ok(self) -> bool:
        return not (self.mismatch_count or self.invalid_classes or self.stuff_instances)

    @property
    def entries(self) -> list[str]:
        out = [f"class mismatch at (row={r}, col={c}): label {l} vs instance class {i}"
               for r, c, l, i in self.mismatches]
        out += [f"unknown class id {c}" for c in self.invalid_classes]
        out += [f"instance index {i} on stuff class {c}" for c, i in self.stuff_instances]
        return out


def validate_pair(label: LabelMap, inst: InstanceMap, registry: ClassRegistry) -> ValidationReport:
    if label.pixels.shape != inst.pixels.shape:
        raise AnnotationError(f"extent mismatch: label {label.pixels.shape} vs instances {inst.pixels.shape}")
    if label.pixels.size == 0:
        raise AnnotationError("empty annotation maps")
    report = ValidationReport()
    inst_cls, _ = inst.decoded()
    lab = label.pixels.astype(np.int64)

    classes = set(np.unique(lab).tolist()) | set(np.unique(inst_cls).tolist())
    report.invalid_classes = sorted(c for c in classes if c != IGNORE_LABEL and not registry.is_valid_class(c))

    bad = lab != inst_cls
    report.mismatch_count = int(bad.sum())
    for r, c in np.argwhere(bad)[: ValidationReport.MAX_LISTED]:
        report.mismatches.append((int(r), int(c), int(lab[r, c]), int(inst_cls[r, c])))

    per_class: Counter = Counter()
    stuff = set()
    for class_id, index in inst.instance_areas():
        if registry.is_valid_class(class_id) and registry[class_id].has_instances:
            per_class[class_id] += 1
        else:
            stuff.add((class_id, index))
    report.stuff_instances = sorted(stuff)
    report.instances_per_class = dict(sorted(per_class.items()))
    return report


@dataclass(frozen=True, eq=False)
class Placement:
    """One generated participant rectangle (generator ledger entry)."""

    class_id: int
    instance_index: int
    top: int
    left: int
    height: int
    width: int

    @property
    def area(self) -> int:
        return self.height * self.width

    def __eq__(self, other):
        return isinstance(other, Placement) and vars(self) == vars(other)


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    image_id: str
    label: LabelMap
    instances: InstanceMap
    split: str = "train"
    scene_id: str = "scene_000"
    weather: str = "sunny"
    image: np.ndarray | None = None  # H x W x 3 uint8
    ledger: tuple[Placement, ...] = ()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise AnnotationError(f"unknown split {self.split!r}")
        if self.weather not in WEATHER_TAGS:
            raise AnnotationError(f"unknown weather tag {self.weather!r}")
        if self.label.pixels.shape != self.instances.pixels.shape:
            raise AnnotationError(f"{self.image_id}: label/instance extents differ")
        if self.image is not None:
            img = np.asarray(self.image)
            if img.shape != self.label.pixels.shape + (3,):
                raise AnnotationError(f"{self.image_id}: image shape {img.shape} does not match labels")
            object.__setattr__(self, "image", _frozen(img, np.uint8))

    def __eq__(self, other):
        if not isinstance(other, AnnotatedImage):
            return NotImplemented
        same_img = (self.image is None and other.image is None) or (
            self.image is not None and other.image is not None and np.array_equal(self.image, other.image))
        return (self.image_id, self.split, self.scene_id, self.weather) == (
            other.image_id, other.split, other.scene_id, other.weather
        ) and self.label == other.label and self.instances == other.instances and same_img
