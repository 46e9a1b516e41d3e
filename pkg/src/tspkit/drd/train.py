"""Plain gradient-descent training of the decoder on small synthetic sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data.maps import AnnotatedImage
from ..data.registry import ClassRegistry, toy_registry
from ..data.synthetic import generate_synthetic
from ..tensor import Tensor
from .config import DrdConfig
from .loss import cross_entropy_loss, downsample_labels
from .model import DetailRefiningDecoder

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TrainResult:
    model: DetailRefiningDecoder
    losses: list[float] = field(default_factory=list)
    accuracy: float = 0.0


def toy_training_set(seed: int = 0, images: int = 8, size: int = 64, density: float = 4.0,
                     registry: ClassRegistry | None = None) -> list[AnnotatedImage]:
    """The small synthetic set used by the demo: square images, moderately sized participants."""
    return generate_synthetic(seed, images, size, size, registry or toy_registry(), density,
                              min_size=max(2, size // 8), max_size=max(2, size // 3))


def images_to_batch(items: Sequence[AnnotatedImage]) -> tuple[np.ndarray, np.ndarray]:
    """Stack RGB images as (B, 3, H, W) floats in [-1, 1] and labels as (B, H, W)."""
    if any(it.image is None for it in items):
        raise ValueError("training items need RGB images")
    x = np.stack([it.image for it in items]).astype(np.float64).transpose(0, 3, 1, 2) / 127.5 - 1.0
    y = np.stack([it.label.pixels for it in items]).astype(np.int64)
    return x, y


def pixel_accuracy(logits: np.ndarray, target: np.ndarray, ignore_index: int = 255) -> float:
    pred = logits.argmax(axis=1)
    valid = target != ignore_index
    return float((pred[valid] == target[valid]).mean()) if valid.any() else 0.0


def train_toy(
    items: Sequence[AnnotatedImage],
    config: DrdConfig,
    steps: int,
    lr: float,
    seed: int = 0,
    model: DetailRefiningDecoder | None = None,
) -> TrainResult:
    """Full-batch gradient descent with a fixed learning rate.

    The returned loss curve has ``steps + 1`` entries: the loss before each
    update and the loss after the last one.
    """
    model = model or DetailRefiningDecoder(config, seed=seed)
    x, y = images_to_batch(items)
    image = Tensor(x)
    h, w = x.shape[2] // 8, x.shape[3] // 8
    target = downsample_labels(y, h, w)
    params = model.parameters()
    result = TrainResult(model)
    # Overflow surfaces as NonFiniteError from the ops; numpy's own warnings are redundant.
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps + 1):
            model.zero_grad()
            try:
                logits = model(image)
                loss = cross_entropy_loss(logits, target)
            except FloatingPointError as exc:
                raise TrainingDiverged(step, str(exc)) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, "loss is not finite")
            result.losses.append(value)
            if step == steps:
                result.accuracy = pixel_accuracy(logits.data, target)
                break
            loss.backward()
            for p in params:
                p.data = p.data - lr * p.grad
            if step % 50 == 0:
                log.debug("step %d loss %.6f", step, value)
    model.zero_grad()
    return result


def evaluate_accuracy(model: DetailRefiningDecoder, items: Sequence[AnnotatedImage]) -> float:
    x, y = images_to_batch(items)
    logits = model(Tensor(x))
    h, w = logits.shape[2:]
    return pixel_accuracy(logits.data, downsample_labels(y, h, w))
