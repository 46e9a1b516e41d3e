"""PNG codecs for annotation maps and the on-disk dataset layout.

Layout::

    root/manifest.json
    root/{train,val,test}/{images,labels,instances}/<image_id>.png
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .maps import SPLITS, AnnotatedImage, AnnotationError, InstanceMap, LabelMap
from .registry import ClassRegistry

MANIFEST_NAME = "manifest.json"
_MAX_U16 = np.iinfo(np.uint16).max


def save_label_map(path: str | os.PathLike, label: LabelMap) -> None:
    Image.fromarray(np.ascontiguousarray(label.pixels)).save(path, format="PNG")


def load_label_map(path: str | os.PathLike, num_classes: int | None = None) -> LabelMap:
    with Image.open(path) as img:
        if img.format != "PNG":
            raise AnnotationError(f"{path}: not a PNG file")
        if img.mode != "L":
            raise AnnotationError(f"{path}: expected single-channel 8-bit PNG, got mode {img.mode!r}")
        arr = np.array(img, dtype=np.uint8)
    label = LabelMap(arr)
    if num_classes is not None:
        try:
            label.check_classes(num_classes)
        except AnnotationError as exc:
            raise AnnotationError(f"{path}: {exc}") from None
    return label


def save_instance_map(path: str | os.PathLike, inst: InstanceMap) -> None:
    if inst.pixels.size and int(inst.pixels.max()) > _MAX_U16:
        raise AnnotationError(f"instance id {int(inst.pixels.max())} exceeds the 16-bit PNG range")
    Image.fromarray(inst.pixels.astype(np.uint16)).save(path, format="PNG")


def load_instance_map(path: str | os.PathLike) -> InstanceMap:
    with Image.open(path) as img:
        if img.format != "PNG":
            raise AnnotationError(f"{path}: not a PNG file")
        if img.mode not in ("I;16", "I;16B", "I"):
            raise AnnotationError(f"{path}: expected single-channel 16-bit PNG, got mode {img.mode!r}")
        arr = np.array(img)
    if arr.ndim != 2:
        raise AnnotationError(f"{path}: expected a single channel")
    return InstanceMap(arr.astype(np.int64))


def save_image(path: str | os.PathLike, rgb: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PNG")


def load_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def split_dirs(root: str | os.PathLike, split: str) -> dict[str, Path]:
    base = Path(root) / split
    return {kind: base / kind for kind in ("images", "labels", "instances")}


def save_dataset(root: str | os.PathLike, items: list[AnnotatedImage]) -> None:
    """Write items under ``root`` and merge their metadata into the manifest."""
    root = Path(root)
    manifest = read_manifest(root) if (root / MANIFEST_NAME).exists() else {}
    for item in items:
        dirs = split_dirs(root, item.split)
        for d in dirs.values():
            d.mkdir(parents=True, exist_ok=True)
        name = f"{item.image_id}.png"
        save_label_map(dirs["labels"] / name, item.label)
        save_instance_map(dirs["instances"] / name, item.instances)
        if item.image is not None:
            save_image(dirs["images"] / name, item.image)
        manifest[item.image_id] = {"split": item.split, "scene_id": item.scene_id, "weather": item.weather}
    write_manifest(root, manifest)


def write_manifest(root: Path, manifest: dict[str, dict]) -> None:
    images = [{"id": k, **v} for k, v in sorted(manifest.items())]
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump({"images": images}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(root: str | os.PathLike) -> dict[str, dict]:
    with open(Path(root) / MANIFEST_NAME, encoding="utf-8") as fh:
        data = json.load(fh)
    return {entry["id"]: {k: v for k, v in entry.items() if k != "id"} for entry in data.get("images", [])}


@dataclass
class LoadResult:
    items: list[AnnotatedImage] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def load_split(root: str | os.PathLike, split: str, registry: ClassRegistry,
               with_images: bool = False) -> LoadResult:
    """Load every annotated image of ``split``; malformed files become error entries."""
    if split not in SPLITS:
        raise AnnotationError(f"unknown split {split!r}")
    root = Path(root)
    dirs = split_dirs(root, split)
    manifest = read_manifest(root) if (root / MANIFEST_NAME).exists() else {}
    result = LoadResult()
    if not dirs["labels"].is_dir():
        result.errors.append(f"{dirs['labels']}: missing directory")
        return result
    for label_path in sorted(dirs["labels"].glob("*.png")):
        image_id = label_path.stem
        inst_path = dirs["instances"] / label_path.name
        try:
            label = load_label_map(label_path, registry.num_classes)
            if not inst_path.exists():
                raise AnnotationError(f"{inst_path}: missing instance map")
            inst = load_instance_map(inst_path)
            image = load_image(dirs["images"] / label_path.name) if with_images else None
            meta = manifest.get(image_id, {})
            result.items.append(AnnotatedImage(
                image_id, label, inst, split,
                scene_id=meta.get("scene_id", "scene_000"), weather=meta.get("weather", "sunny"), image=image,
            ))
        except (AnnotationError, OSError) as exc:
            result.errors.append(str(exc))
    return result
