"""Deterministic synthetic traffic scenes with consistent label/instance pairs."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .maps import (
    MAX_INSTANCES_PER_CLASS,
    WEATHER_TAGS,
    AnnotatedImage,
    InstanceMap,
    LabelMap,
    Placement,
    encode_instance_id,
)
from .registry import ClassRegistry

# Rough relative frequencies of participant classes in monitoring scenes.
DEFAULT_CLASS_FREQUENCIES = {
    "car": 0.45, "person": 0.2, "truck": 0.08, "motorcycle": 0.1,
    "bicycle": 0.07, "bus": 0.04, "rider": 0.06,
}

PLACEMENT_RETRIES = 500


class GenerationError(RuntimeError):
    pass


def class_palette(num_classes: int) -> np.ndarray:
    """Fixed, well-separated RGB colour per class id."""
    rng = np.random.default_rng(20240601)
    colours = rng.integers(30, 226, size=(max(num_classes, 1), 3))
    base = np.linspace(0, 255, num_classes, endpoint=False) if num_classes else np.zeros(0)
    colours[:, 0] = (base + 40) % 256
    return colours.astype(np.uint8)


def _participants_for_image(density: float, rng: np.random.Generator) -> int:
    whole = math.floor(density)
    frac = density - whole
    return whole + int(frac > 0 and rng.random() < frac)


def generate_synthetic(
    seed: int,
    count: int,
    width: int,
    height: int,
    registry: ClassRegistry,
    density: float,
    *,
    split: str = "train",
    min_size: int | None = None,
    max_size: int | None = None,
    class_frequencies: Mapping[str, float] | None = None,
    noise: int = 12,
) -> list[AnnotatedImage]:
    """Generate ``count`` scenes: background stuff on top, a road band below,
    and non-overlapping participant rectangles.

    ``density`` is the expected number of participants per image; integer
    densities place exactly that many.
    """
    if density < 0:
        raise GenerationError("density must be non-negative")
    road_ids = registry.road_ids
    participants = registry.participant_ids
    if not road_ids:
        raise GenerationError("registry has no road class")
    if density > 0 and not participants:
        raise GenerationError("registry has no traffic-participant classes")
    stuff = [c.class_id for c in registry.classes if not c.is_road and not c.is_traffic_participant]
    if not stuff:
        stuff = road_ids
    min_size = min_size or max(2, min(width, height) // 16)
    max_size = max_size or max(min_size, min(width, height) // 5)

    freqs = class_frequencies or DEFAULT_CLASS_FREQUENCIES
    weights = np.array([freqs.get(registry[c].name, 0.0) for c in participants], dtype=np.float64)
    if participants and weights.sum() <= 0:
        weights = np.ones(len(participants))
    if participants:
        weights = weights / weights.sum()

    palette = class_palette(registry.num_classes)
    rng = np.random.default_rng(seed)
    scene_count = max(1, count // 5)
    out = []
    for i in range(count):
        label = np.empty((height, width), dtype=np.uint8)
        horizon = int(rng.integers(int(0.3 * height), int(0.5 * height) + 1))
        n_segments = int(rng.integers(1, min(3, len(stuff)) + 1))
        cuts = np.sort(rng.choice(np.arange(1, width), size=n_segments - 1, replace=False)) if n_segments > 1 else []
        bounds = [0, *[int(c) for c in cuts], width]
        for s in range(n_segments):
            label[:horizon, bounds[s]:bounds[s + 1]] = stuff[int(rng.integers(len(stuff)))]
        label[horizon:, :] = road_ids[0]
        inst = label.astype(np.int64)

        occupied = np.zeros((height, width), dtype=bool)
        next_index = {c: 1 for c in participants}
        ledger = []
        for _ in range(_participants_for_image(density, rng)):
            class_id = participants[int(rng.choice(len(participants), p=weights))]
            if next_index[class_id] > MAX_INSTANCES_PER_CLASS:
                raise GenerationError(f"more than {MAX_INSTANCES_PER_CLASS} instances of one class")
            for _attempt in range(PLACEMENT_RETRIES):
                h = int(rng.integers(min_size, max_size + 1))
                w = int(rng.integers(min_size, max_size + 1))
                if h > height or w > width:
                    continue
                top = int(rng.integers(0, height - h + 1))
                left = int(rng.integers(0, width - w + 1))
                if not occupied[top:top + h, left:left + w].any():
                    break
            else:
                raise GenerationError(
                    f"image {i}: could not place participant {len(ledger) + 1} after {PLACEMENT_RETRIES} tries"
                )
            index = next_index[class_id]
            next_index[class_id] += 1
            occupied[top:top + h, left:left + w] = True
            label[top:top + h, left:left + w] = class_id
            inst[top:top + h, left:left + w] = encode_instance_id(class_id, index)
            ledger.append(Placement(class_id, index, top, left, h, w))

        jitter = rng.integers(-noise, noise + 1, size=(height, width, 3)) if noise else 0
        image = np.clip(palette[label].astype(np.int64) + jitter, 0, 255).astype(np.uint8)
        out.append(AnnotatedImage(
            image_id=f"synth_{seed}_{i:05d}",
            label=LabelMap(label),
            instances=InstanceMap(inst),
            split=split,
            scene_id=f"scene_{int(rng.integers(scene_count)):03d}",
            weather=WEATHER_TAGS[int(rng.integers(len(WEATHER_TAGS)))],
            image=image,
            ledger=tuple(ledger),
        ))
    return out
