"""Confusion-matrix mIoU and instance-size-weighted iIoU.

iIoU follows the Cityscapes definition: every ground-truth pixel of an
instance with area ``a`` counts ``avg_size[class] / a`` towards the weighted
true positives (or false negatives); false positives stay unweighted.  The
weighted sums are kept as exact rationals so that evaluating shards and
merging them reproduces the whole-set numbers bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .data.maps import InstanceMap, LabelMap
from .data.registry import IGNORE_LABEL, ClassRegistry


class MetricError(ValueError):
    pass


@dataclass(eq=False)
class ConfusionMatrix:
    """K x K counts; entry (g, p) = pixels with ground truth g predicted as p."""

    num_classes: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.uint64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.uint64)
            if self.counts.shape != (self.num_classes, self.num_classes):
                raise MetricError(f"counts shape {self.counts.shape} != ({self.num_classes}, {self.num_classes})")

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.num_classes == other.num_classes
                and np.array_equal(self.counts, other.counts))

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0


def _as_array(x) -> np.ndarray:
    return x.pixels if isinstance(x, LabelMap) else np.asarray(x)


def accumulate(cm: ConfusionMatrix, gt, pred) -> ConfusionMatrix:
    """Return ``cm`` plus the counts of one (gt, pred) pair; gt 255 pixels are skipped."""
    g = _as_array(gt).astype(np.int64)
    p = _as_array(pred).astype(np.int64)
    if g.shape != p.shape:
        raise MetricError(f"extent mismatch: gt {g.shape} vs pred {p.shape}")
    K = cm.num_classes
    keep = g != IGNORE_LABEL
    bad_gt = keep & ((g < 0) | (g >= K))
    if bad_gt.any():
        r, c = np.argwhere(bad_gt)[0]
        raise MetricError(f"gt class {g[r, c]} out of range at (row={r}, col={c})")
    bad = (p < 0) | (p >= K)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise MetricError(f"invalid predicted class {p[r, c]} at (row={r}, col={c})")
    binned = np.bincount(K * g[keep] + p[keep], minlength=K * K).reshape(K, K)
    return ConfusionMatrix(K, cm.counts + binned.astype(np.uint64))


def per_class_iou(cm: ConfusionMatrix) -> list[float | None]:
    """IoU per class; None where the class is absent from both gt and pred."""
    counts = cm.counts.astype(np.int64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    out: list[float | None] = []
    for c in range(cm.num_classes):
        denom = int(tp[c] + fp[c] + fn[c])
        out.append(int(tp[c]) / denom if denom else None)
    return out


def miou(cm: ConfusionMatrix) -> tuple[list[float | None], float]:
    ious = per_class_iou(cm)
    present = [v for v in ious if v is not None]
    if not present:
        raise MetricError("no classes present")
    return ious, sum(present) / len(present)


# ---------------------------------------------------------------------------
# instance-weighted IoU
# ---------------------------------------------------------------------------

def average_instance_sizes(instance_maps: Iterable[InstanceMap], registry: ClassRegistry) -> dict[int, Fraction]:
    """Mean pixel area per instance class over all instances of the given maps."""
    area: dict[int, int] = {}
    count: dict[int, int] = {}
    for inst in instance_maps:
        for (class_id, _), a in inst.instance_areas().items():
            if not (registry.is_valid_class(class_id) and registry[class_id].has_instances):
                continue
            area[class_id] = area.get(class_id, 0) + a
            count[class_id] = count.get(class_id, 0) + 1
    return {c: Fraction(area[c], count[c]) for c in sorted(area)}


@dataclass(eq=False)
class WeightedTallies:
    """Per instance-class weighted TP/FN (exact rationals) and unweighted FP."""

    class_ids: tuple[int, ...]
    itp: dict[int, Fraction] = field(default_factory=dict)
    ifn: dict[int, Fraction] = field(default_factory=dict)
    fp: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.class_ids = tuple(self.class_ids)
        for c in self.class_ids:
            self.itp.setdefault(c, Fraction(0))
            self.ifn.setdefault(c, Fraction(0))
            self.fp.setdefault(c, 0)

    @classmethod
    def for_registry(cls, registry: ClassRegistry) -> "WeightedTallies":
        return cls(tuple(registry.instance_class_ids))

    def __eq__(self, other):
        return (isinstance(other, WeightedTallies) and self.class_ids == other.class_ids
                and self.itp == other.itp and self.ifn == other.ifn and self.fp == other.fp)

    def itp_float(self, c: int) -> float:
        return float(self.itp[c])

    def ifn_float(self, c: int) -> float:
        return float(self.ifn[c])


def accumulate_instances(tallies: WeightedTallies, gt_label, gt_inst: InstanceMap, pred,
                         avg_sizes: Mapping[int, Fraction | float]) -> WeightedTallies:
    g = _as_array(gt_label).astype(np.int64)
    p = _as_array(pred).astype(np.int64)
    if g.shape != p.shape or g.shape != gt_inst.pixels.shape:
        raise MetricError(f"extent mismatch: gt {g.shape}, instances {gt_inst.pixels.shape}, pred {p.shape}")
    out = WeightedTallies(tallies.class_ids, dict(tallies.itp), dict(tallies.ifn), dict(tallies.fp))
    valid = g != IGNORE_LABEL
    ids = gt_inst.pixels
    for c in out.class_ids:
        out.fp[c] += int(((p == c) & (g != c) & valid).sum())
        mask = (g == c) & (ids >= 1000) & (ids // 1000 == c) & (ids % 1000 > 0)
        if not mask.any():
            continue
        if c not in avg_sizes:
            raise MetricError(f"no average instance size for class {c}")
        avg = Fraction(avg_sizes[c])
        inst_ids, areas = np.unique(ids[mask], return_counts=True)
        hits = dict(zip(*np.unique(ids[mask & (p == c)], return_counts=True)))
        tp_sum = Fraction(0)
        fn_sum = Fraction(0)
        for iid, area in zip(inst_ids, areas):
            tp = int(hits.get(iid, 0))
            tp_sum += Fraction(tp, int(area))
            fn_sum += Fraction(int(area) - tp, int(area))
        out.itp[c] += avg * tp_sum
        out.ifn[c] += avg * fn_sum
    return out


def iiou_from_tallies(tallies: WeightedTallies) -> tuple[dict[int, float | None], float | None]:
    per_class: dict[int, float | None] = {}
    for c in tallies.class_ids:
        denom = tallies.itp[c] + tallies.ifn[c] + tallies.fp[c]
        per_class[c] = float(tallies.itp[c] / denom) if denom else None
    present = [v for v in per_class.values() if v is not None]
    return per_class, (sum(present) / len(present) if present else None)


def iiou(gt_label, gt_inst: InstanceMap, pred_label, registry: ClassRegistry,
         avg_sizes: Mapping[int, Fraction | float]) -> tuple[dict[int, float | None], float | None]:
    """Per-class and mean iIoU for a single image (see module docstring)."""
    tallies = accumulate_instances(WeightedTallies.for_registry(registry), gt_label, gt_inst, pred_label, avg_sizes)
    return iiou_from_tallies(tallies)


def merge(a, b):
    """Entry-wise sum of two ConfusionMatrix or two WeightedTallies."""
    if isinstance(a, ConfusionMatrix) and isinstance(b, ConfusionMatrix):
        if a.num_classes != b.num_classes:
            raise MetricError(f"cannot merge {a.num_classes}-class and {b.num_classes}-class matrices")
        return ConfusionMatrix(a.num_classes, a.counts + b.counts)
    if isinstance(a, WeightedTallies) and isinstance(b, WeightedTallies):
        if a.class_ids != b.class_ids:
            raise MetricError("cannot merge tallies over different class sets")
        return WeightedTallies(
            a.class_ids,
            {c: a.itp[c] + b.itp[c] for c in a.class_ids},
            {c: a.ifn[c] + b.ifn[c] for c in a.class_ids},
            {c: a.fp[c] + b.fp[c] for c in a.class_ids},
        )
    raise TypeError(f"cannot merge {type(a).__name__} with {type(b).__name__}")


# ---------------------------------------------------------------------------
# dataset-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationResult:
    registry: ClassRegistry
    confusion: ConfusionMatrix
    tallies: WeightedTallies

    def report(self) -> dict:
        ious, mean = miou(self.confusion)
        per_iiou, mean_iiou = iiou_from_tallies(self.tallies)
        names = self.registry.names
        counts = self.confusion.counts
        return {
            "per_class_iou": {names[c]: ious[c] for c in range(len(names))},
            "miou": mean,
            "per_class_iiou": {names[c]: v for c, v in per_iiou.items()},
            "iiou": mean_iiou,
            "pixel_counts": {names[c]: int(counts[c].sum()) for c in range(len(names))},
        }


def evaluate_pair(registry: ClassRegistry, gt_label, gt_inst: InstanceMap, pred,
                  avg_sizes: Mapping[int, Fraction | float]) -> EvaluationResult:
    cm = accumulate(ConfusionMatrix(registry.num_classes), gt_label, pred)
    tallies = accumulate_instances(WeightedTallies.for_registry(registry), gt_label, gt_inst, pred, avg_sizes)
    return EvaluationResult(registry, cm, tallies)


def merge_results(results: Iterable[EvaluationResult], registry: ClassRegistry) -> EvaluationResult:
    cm = ConfusionMatrix(registry.num_classes)
    tallies = WeightedTallies.for_registry(registry)
    for r in results:
        cm = merge(cm, r.confusion)
        tallies = merge(tallies, r.tallies)
    return EvaluationResult(registry, cm, tallies)


def format_table(report: dict) -> str:
    rows = [f"{'class':<22}{'IoU':>10}{'iIoU':>10}{'pixels':>12}"]
    for name, iou in report["per_class_iou"].items():
        ii = report["per_class_iiou"].get(name)
        iou_s = f"{iou:.6f}" if iou is not None else "-"
        ii_s = f"{ii:.6f}" if ii is not None else ("-" if name in report["per_class_iiou"] else "")
        rows.append(f"{name:<22}{iou_s:>10}{ii_s:>10}{report['pixel_counts'][name]:>12}")
    rows.append(f"{'mIoU':<22}{report['miou']:>10.6f}")
    rows.append(f"{'iIoU':<22}{report['iiou']:>10.6f}" if report["iiou"] is not None else f"{'iIoU':<22}{'-':>10}")
    return "\n".join(rows)
