"""Traffic-participant statistics and crowd-rate analysis."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data.maps import AnnotatedImage, InstanceMap, LabelMap
from .data.registry import ClassRegistry

TP_THRESHOLDS = (50, 75, 100)
HIST_MAX_EXP = 24  # log2 bins [2^k, 2^(k+1)) for k = 0..23; larger areas land in the last bin


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class ParticipantCount:
    per_class: dict[int, int]
    total: int
    humans: int
    vehicles: int


def count_participants(inst: InstanceMap, registry: ClassRegistry) -> ParticipantCount:
    per_class = {c: 0 for c in registry.participant_ids}
    for class_id, _index in inst.instance_areas():
        if class_id in per_class:
            per_class[class_id] += 1
    humans = sum(per_class[c] for c in registry.human_ids)
    vehicles = sum(per_class[c] for c in registry.vehicle_ids)
    return ParticipantCount(per_class, sum(per_class.values()), humans, vehicles)


def size_bin(area: int) -> int:
    return min(int(area).bit_length() - 1, HIST_MAX_EXP - 1)


def histogram_edges() -> list[int]:
    return [2 ** k for k in range(HIST_MAX_EXP + 1)]


@dataclass(eq=False)
class DatasetTally:
    """Integer accumulators behind a DatasetReport; merging is exact."""

    class_ids: tuple[int, ...]
    num_images: int = 0
    total_participants: int = 0
    humans: int = 0
    vehicles: int = 0
    tp_gt: dict[int, int] = field(default_factory=dict)
    per_class: dict[int, int] = field(default_factory=dict)
    size_hist: list[int] = field(default_factory=lambda: [0] * HIST_MAX_EXP)
    instances_per_image: dict[int, int] = field(default_factory=dict)  # participants -> #images

    def __post_init__(self):
        self.class_ids = tuple(self.class_ids)
        for t in TP_THRESHOLDS:
            self.tp_gt.setdefault(t, 0)
        for c in self.class_ids:
            self.per_class.setdefault(c, 0)

    def add_image(self, inst: InstanceMap, registry: ClassRegistry) -> None:
        pc = count_participants(inst, registry)
        self.num_images += 1
        self.total_participants += pc.total
        self.humans += pc.humans
        self.vehicles += pc.vehicles
        for t in TP_THRESHOLDS:
            self.tp_gt[t] += int(pc.total > t)
        for c, n in pc.per_class.items():
            self.per_class[c] += n
        self.instances_per_image[pc.total] = self.instances_per_image.get(pc.total, 0) + 1
        participants = set(registry.participant_ids)
        for (class_id, _), area in inst.instance_areas().items():
            if class_id in participants:
                self.size_hist[size_bin(area)] += 1

    def merge(self, other: "DatasetTally") -> "DatasetTally":
        if self.class_ids != other.class_ids:
            raise StatsError("cannot merge tallies over different registries")
        ipi = dict(self.instances_per_image)
        for k, v in other.instances_per_image.items():
            ipi[k] = ipi.get(k, 0) + v
        return DatasetTally(
            self.class_ids,
            self.num_images + other.num_images,
            self.total_participants + other.total_participants,
            self.humans + other.humans,
            self.vehicles + other.vehicles,
            {t: self.tp_gt[t] + other.tp_gt[t] for t in TP_THRESHOLDS},
            {c: self.per_class[c] + other.per_class[c] for c in self.class_ids},
            [a + b for a, b in zip(self.size_hist, other.size_hist)],
            dict(sorted(ipi.items())),
        )


@dataclass(frozen=True)
class DatasetReport:
    num_images: int
    avg_tp: float
    tp_gt: dict[int, int]
    total_participants: int
    humans_total: int
    vehicles_total: int
    humans_per_image: float
    vehicles_per_image: float
    per_class_instance_counts: dict[str, int]
    instance_size_histogram: dict[str, list[int]]
    instances_per_image: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "num_images": self.num_images,
            "avg_tp": self.avg_tp,
            "tp_gt": {str(k): v for k, v in self.tp_gt.items()},
            "total_participants": self.total_participants,
            "humans_total": self.humans_total,
            "vehicles_total": self.vehicles_total,
            "humans_per_image": self.humans_per_image,
            "vehicles_per_image": self.vehicles_per_image,
            "per_class_instance_counts": self.per_class_instance_counts,
            "instance_size_histogram": self.instance_size_histogram,
            "instances_per_image": {str(k): v for k, v in self.instances_per_image.items()},
        }


def report_from_tally(tally: DatasetTally, registry: ClassRegistry) -> DatasetReport:
    if tally.num_images == 0:
        raise StatsError("empty split")
    n = tally.num_images
    return DatasetReport(
        num_images=n,
        avg_tp=tally.total_participants / n,
        tp_gt=dict(tally.tp_gt),
        total_participants=tally.total_participants,
        humans_total=tally.humans,
        vehicles_total=tally.vehicles,
        humans_per_image=tally.humans / n,
        vehicles_per_image=tally.vehicles / n,
        per_class_instance_counts={registry[c].name: tally.per_class[c] for c in tally.class_ids},
        instance_size_histogram={"edges": histogram_edges(), "counts": list(tally.size_hist)},
        instances_per_image=dict(sorted(tally.instances_per_image.items())),
    )


def tally_split(items: Iterable[AnnotatedImage | InstanceMap], registry: ClassRegistry) -> DatasetTally:
    tally = DatasetTally(tuple(registry.participant_ids))
    for item in items:
        tally.add_image(item.instances if isinstance(item, AnnotatedImage) else item, registry)
    return tally


def dataset_report(items: Sequence[AnnotatedImage | InstanceMap], registry: ClassRegistry) -> DatasetReport:
    if not items:
        raise StatsError("empty split")
    return report_from_tally(tally_split(items, registry), registry)


def format_report_table(report: DatasetReport, name: str = "dataset") -> str:
    header = (f"{'Dataset':<16}{'#Images':>9}{'Avg TP':>9}{'TP>50':>8}{'TP>75':>8}{'TP>100':>8}"
              f"{'#H.':>9}{'#V.':>9}{'#H./img':>9}{'#V./img':>9}")
    row = (f"{name:<16}{report.num_images:>9}{report.avg_tp:>9.1f}{report.tp_gt[50]:>8}{report.tp_gt[75]:>8}"
           f"{report.tp_gt[100]:>8}{report.humans_total:>9}{report.vehicles_total:>9}"
           f"{report.humans_per_image:>9.1f}{report.vehicles_per_image:>9.1f}")
    lines = [header, row, "", "instances per class:"]
    lines += [f"  {k:<20}{v:>8}" for k, v in report.per_class_instance_counts.items()]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# crowd rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrowdRate:
    participant_area: int
    road_area: int
    rate: float
    undefined: bool = False  # no participant and no road pixels; rate reported as 0


def crowd_rate(label: LabelMap | np.ndarray, registry: ClassRegistry) -> CrowdRate:
    """Participant area over participant-plus-road area."""
    pixels = label.pixels if isinstance(label, LabelMap) else np.asarray(label)
    s_t = int(np.isin(pixels, registry.participant_ids).sum())
    s_r = int(np.isin(pixels, registry.road_ids).sum())
    if s_t + s_r == 0:
        return CrowdRate(0, 0, 0.0, undefined=True)
    return CrowdRate(s_t, s_r, s_t / (s_t + s_r))


@dataclass
class CrowdRateSeries:
    rows: list[tuple[str, CrowdRate]] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def rates(self) -> list[float]:
        return [r.rate for _, r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "S_t", "S_r", "rate"])
        for image_id, r in self.rows:
            writer.writerow([image_id, r.participant_area, r.road_area, f"{r.rate:.6f}"])
        return buf.getvalue()

    def summary(self) -> dict[str, float]:
        rates = self.rates
        if not rates:
            return {"count": 0, "min": 0.0, "mean": 0.0, "max": 0.0}
        return {"count": len(rates), "min": min(rates), "mean": sum(rates) / len(rates), "max": max(rates)}

    def to_svg(self, width: int = 720, height: int = 320) -> str:
        return render_bar_chart_svg([i for i, _ in self.rows], self.rates, width, height,
                                    title="Crowd rate per image", y_label="S_t / (S_t + S_r)")


def crowd_rate_series(labels: Iterable[tuple[str, LabelMap]], registry: ClassRegistry) -> CrowdRateSeries:
    series = CrowdRateSeries()
    for image_id, label in sorted(labels, key=lambda kv: kv[0]):
        series.rows.append((image_id, crowd_rate(label, registry)))
    return series


def crowd_rate_series_from_dir(label_dir: str | os.PathLike, registry: ClassRegistry,
                               expected_ids: Iterable[str] | None = None) -> CrowdRateSeries:
    """Series over ``label_dir/*.png``; unreadable or missing files are listed, not fatal."""
    from .data.io import load_label_map
    from .data.maps import AnnotationError

    label_dir = Path(label_dir)
    series = CrowdRateSeries()
    found = {}
    unreadable = set()
    for path in sorted(label_dir.glob("*.png")) if label_dir.is_dir() else []:
        try:
            found[path.stem] = load_label_map(path, registry.num_classes)
        except (AnnotationError, OSError) as exc:
            series.missing.append(f"{path}: {exc}")
            unreadable.add(path.stem)
    if expected_ids is not None:
        for image_id in sorted(set(expected_ids) - set(found) - unreadable):
            series.missing.append(f"{label_dir / (image_id + '.png')}: missing")
    if not label_dir.is_dir():
        series.missing.append(f"{label_dir}: not a directory")
    series.rows = crowd_rate_series(found.items(), registry).rows
    return series


def render_bar_chart_svg(labels: Sequence[str], values: Sequence[float], width: int = 720, height: int = 320,
                         title: str = "", y_label: str = "") -> str:
    margin_l, margin_r, margin_t, margin_b = 56, 16, 32, 40
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    top = max(max(values, default=0.0), 1e-12)
    y_max = 1.0 if top <= 1.0 else top
    n = max(len(values), 1)
    bar_w = plot_w / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{_esc(title)}</text>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + plot_h}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = margin_t + plot_h * (1 - frac)
        parts.append(f'<text x="{margin_l - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{frac * y_max:.2f}</text>')
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = plot_h * (v / y_max)
        x = margin_l + i * bar_w
        parts.append(f'<rect x="{x + 0.1 * bar_w:.2f}" y="{margin_t + plot_h - h:.2f}" width="{0.8 * bar_w:.2f}" '
                     f'height="{h:.2f}" fill="#3b6ea5"><title>{_esc(lab)}: {v:.6f}</title></rect>')
    parts.append(f'<text x="14" y="{margin_t + plot_h / 2:.1f}" transform="rotate(-90 14 {margin_t + plot_h / 2:.1f})" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="11">{_esc(y_label)}</text>')
    parts.append(f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11">images ({len(values)})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
