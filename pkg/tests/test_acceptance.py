"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

The summary lines are printed by ``pytest_terminal_summary`` in conftest.py,
so they appear even when output capture is on.
"""

import os
import random
import time

import numpy as np
import pytest

from test_metrics import K4, _equal_area_case, accumulate_oracle, miou_oracle, random_pair
from tspkit.data import (
    LabelMap,
    default_registry,
    generate_synthetic,
    load_split,
    save_dataset,
    validate_pair,
)
from tspkit.drd import (
    DrdConfig,
    RegionRefine,
    preset,
    region_refine_forward,
    toy_training_set,
    train_toy,
)
from tspkit.drd.checks import check_end_to_end
from tspkit.metrics import (
    ConfusionMatrix,
    accumulate,
    average_instance_sizes,
    evaluate_pair,
    iiou,
    merge_results,
    miou,
    per_class_iou,
)
from tspkit.stats import crowd_rate, dataset_report, report_from_tally, tally_split
from tspkit.tensor import Tensor

CRITERIA = {
    1: "gradient correctness (C32 N5 h4, 32x32, 5 seeds, <60 s)",
    2: "attention rows sum to 1 over 1000 forwards; one-hot substitution exact",
    3: "residual identity with zeroed value/FFN output weights",
    4: "token-permutation equivariance, exact",
    5: "toy training >=95% pixel accuracy in 500 steps, deterministic, <5 min",
    6: "metric oracle equivalence over 1000 random pairs",
    7: "iIoU equals IoU for equal-area instances over 200 cases",
    8: "shard/merge equals whole set over 20 random partitions",
    9: "crowd rate 300/700 = 0.3 and monotone over 100 cases",
    10: "100 generated images round-trip bit-identically and validate clean",
    11: "dataset statistics on the real train+val data (data-gated)",
}

SMALL = DrdConfig(num_region_tokens=5, num_heads=4, channels=32, num_classes=21)


def _rrm(seed, config=SMALL):
    rng = np.random.default_rng(seed)
    rrm = RegionRefine(config, rng)
    rrm.tokens.data = rng.normal(size=rrm.tokens.shape)
    return rrm, rng


def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    errors = []
    for seed in range(5):
        report = check_end_to_end(SMALL, seed=seed, size=32)
        assert report.checked > 0
        errors.append(report.max_rel_error)
    elapsed = time.perf_counter() - start
    assert max(errors) < 1e-4, errors
    assert elapsed < 60, elapsed


def test_criterion_02_attention_contract():
    worst = 0.0
    for case in range(1000):
        rng = np.random.default_rng(case)
        rrm, rng = _rrm(case)
        hw = int(rng.integers(1, 40))
        shape = (hw, 32) if case % 2 else (int(rng.integers(1, 3)), hw, 32)
        out = rrm(Tensor(rng.normal(scale=float(rng.uniform(0.1, 10.0)), size=shape)))
        worst = max(worst, np.abs(out.A.data.sum(-1) - 1).max(), np.abs(out.token_attention.data.sum(-1) - 1).max())
    assert worst <= 1e-9, worst

    # a map row that is one-hot at pixel j turns S_i into F_j at j and zero elsewhere
    for seed in range(20):
        rrm, rng = _rrm(1000 + seed)
        hw = int(rng.integers(2, 30))
        j = int(rng.integers(hw))
        F = rng.normal(scale=0.1, size=(hw, 32))
        F[j] = 30.0
        rrm.f_k1.weight.data = np.eye(32)
        rrm.f_k1.bias.data = np.zeros(32)
        rrm.f_q1.weight.data = np.zeros((32, 32))
        rrm.f_q1.bias.data = np.full(32, 30.0)
        out = rrm(Tensor(F))
        one_hot = np.zeros((5, hw))
        one_hot[:, j] = 1.0
        assert np.array_equal(out.A.data, one_hot)
        expected = np.zeros((5, hw, 32))
        expected[:, j] = F[j]
        assert np.array_equal(out.S.data, expected)


def test_criterion_03_residual_identity():
    for seed in range(20):
        rrm, rng = _rrm(seed)
        for layer in (rrm.f_v, rrm.ffn_out):
            layer.weight.data = np.zeros_like(layer.weight.data)
            layer.bias.data = np.zeros_like(layer.bias.data)
        out = rrm(Tensor(rng.normal(size=(int(rng.integers(1, 30)), 32))))
        assert np.array_equal(out.R_O.data, rrm.tokens.data)


def test_criterion_04_permutation_equivariance():
    for seed in range(100):
        rrm, rng = _rrm(seed)
        F = Tensor(rng.normal(scale=2.0, size=(int(rng.integers(1, 3)), int(rng.integers(1, 30)), 32)))
        perm = rng.permutation(5)
        base = rrm(F)
        moved = region_refine_forward(F, Tensor(rrm.tokens.data[perm]), rrm)
        assert np.array_equal(moved.A.data, base.A.data[:, perm])
        assert np.array_equal(moved.S.data, base.S.data[:, perm])


def test_criterion_05_toy_training():
    config = preset("setting2").with_(num_classes=4)
    assert (config.num_region_tokens, config.num_heads, config.channels) == (5, 12, 36)
    items = toy_training_set(seed=0)
    assert len(items) == 8
    runs = []
    for _ in range(2):
        start = time.perf_counter()
        result = train_toy(items, config, steps=500, lr=0.05, seed=0)
        elapsed = time.perf_counter() - start
        assert elapsed < 300, elapsed
        runs.append(result)
    a, b = runs
    assert a.losses == b.losses and a.accuracy == b.accuracy
    assert a.accuracy >= 0.95, a.accuracy


def test_criterion_06_metric_oracles():
    for case in range(1000):
        gt, pred = random_pair(np.random.default_rng(case))
        cm = accumulate(ConfusionMatrix(K4), gt, pred)
        assert np.array_equal(cm.counts, accumulate_oracle(gt, pred, K4))
        expected = miou_oracle(gt, pred, K4)
        if expected is not None:
            assert abs(miou(cm)[1] - expected) <= 1e-12


def test_criterion_07_iiou_degeneracy():
    compared = 0
    for case in range(200):
        reg, label, inst, pred = _equal_area_case(np.random.default_rng(case))
        avg = average_instance_sizes([inst], reg)
        per_iiou, _ = iiou(label, inst, pred, reg, avg)
        ious = per_class_iou(accumulate(ConfusionMatrix(4), label, pred))
        for c in avg:
            assert per_iiou[c] == ious[c]
            compared += 1
    assert compared >= 200


def test_criterion_08_partition_invariance():
    registry = default_registry()
    items = generate_synthetic(8, 24, 48, 32, registry, 5.0)
    rng = np.random.default_rng(0)
    preds = [np.where(rng.random(it.label.pixels.shape) < 0.75, it.label.pixels,
                      rng.integers(0, registry.num_classes, size=it.label.pixels.shape)) for it in items]
    avg = average_instance_sizes([it.instances for it in items], registry)
    results = [evaluate_pair(registry, it.label, it.instances, p, avg) for it, p in zip(items, preds)]
    whole_metrics = merge_results(results, registry).report()
    whole_stats = dataset_report(items, registry).to_dict()
    for trial in range(20):
        order = rng.permutation(len(items))
        cuts = sorted(rng.choice(np.arange(1, len(items)), size=int(rng.integers(1, 6)), replace=False))
        shards = np.split(order, cuts)
        metric_parts = [merge_results([results[i] for i in s], registry) for s in shards]
        stat_parts = [tally_split([items[i] for i in s], registry) for s in shards]
        random.Random(trial).shuffle(stat_parts)
        merged = stat_parts[0]
        for part in stat_parts[1:]:
            merged = merged.merge(part)
        assert merge_results(metric_parts, registry).report() == whole_metrics
        assert report_from_tally(merged, registry).to_dict() == whole_stats


def _strip(rng, road, s_r, bus, s_t, registry):
    pixels = np.array([road] * s_r + [bus] * s_t + [registry.id_of("sky")] * 5, dtype=np.uint8)
    return LabelMap(rng.permutation(pixels).reshape(1, -1))


def test_criterion_09_crowd_rate():
    registry = default_registry()
    road, car, bus = registry.id_of("road"), registry.id_of("car"), registry.id_of("bus")
    label = np.full((10, 100), road, dtype=np.uint8)
    label[:3] = car
    r = crowd_rate(LabelMap(label), registry)
    assert (r.participant_area, r.road_area) == (300, 700)
    assert r.rate == 0.3
    for case in range(100):
        rng = np.random.default_rng(case)
        s_r, s_t, extra = int(rng.integers(1, 500)), int(rng.integers(0, 500)), int(rng.integers(1, 100))

        lo = crowd_rate(_strip(rng, road, s_r, bus, s_t, registry), registry)
        hi = crowd_rate(_strip(rng, road, s_r, bus, s_t + extra, registry), registry)
        assert lo.rate == s_t / (s_t + s_r)
        assert hi.rate > lo.rate


def test_criterion_10_format_round_trip(tmp_path):
    registry = default_registry()
    items = generate_synthetic(10, 100, 64, 48, registry, 6.0)
    save_dataset(tmp_path, items)
    loaded = load_split(tmp_path, "train", registry, with_images=True)
    assert not loaded.errors and len(loaded.items) == 100
    assert loaded.items == items
    for item in loaded.items:
        report = validate_pair(item.label, item.instances, registry)
        assert report.ok and not report.entries


DATA_ROOT = os.environ.get("TSPKIT_TSP6K_ROOT")


@pytest.mark.skipif(not DATA_ROOT, reason="set TSPKIT_TSP6K_ROOT to the real dataset root to run")
def test_criterion_11_real_dataset_statistics():
    registry = default_registry()
    items = []
    for split in ("train", "val"):
        result = load_split(DATA_ROOT, split, registry)
        assert not result.errors, result.errors[:5]
        items += result.items
    report = dataset_report(items, registry)
    assert report.tp_gt == {50: 1227, 75: 367, 100: 73}
    assert abs(report.avg_tp - 42.0) <= 0.05
    assert abs(report.humans_per_image - 10.7) <= 0.05
    assert abs(report.vehicles_per_image - 31.3) <= 0.05
