from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tspkit.data import ClassInfo, ClassRegistry, InstanceMap, generate_synthetic
from tspkit.metrics import (
    ConfusionMatrix,
    MetricError,
    WeightedTallies,
    accumulate,
    accumulate_instances,
    average_instance_sizes,
    evaluate_pair,
    format_table,
    iiou,
    iiou_from_tallies,
    merge,
    merge_results,
    miou,
    per_class_iou,
)

K4 = 4


def _toy():
    # 0 road, 1 building, 2 car (instances), 3 person (instances)
    return ClassRegistry((
        ClassInfo(0, "road", False, True, False),
        ClassInfo(1, "building", False, False, False),
        ClassInfo(2, "car", True, False, True),
        ClassInfo(3, "person", True, False, True),
    ))


def accumulate_oracle(gt, pred, K):
    counts = [[0] * K for _ in range(K)]
    for g, p in zip(gt.ravel().tolist(), pred.ravel().tolist()):
        if g == 255:
            continue
        counts[g][p] += 1
    return np.array(counts, dtype=np.uint64)


def miou_oracle(gt, pred, K):
    """Set intersection over set union per class, exact rationals."""
    valid = {(i, j) for i in range(gt.shape[0]) for j in range(gt.shape[1]) if gt[i, j] != 255}
    ious = []
    for c in range(K):
        G = {q for q in valid if gt[q] == c}
        P = {q for q in valid if pred[q] == c}
        union = G | P
        if union:
            ious.append(Fraction(len(G & P), len(union)))
    return float(sum(ious) / len(ious)) if ious else None


def random_pair(rng, K=K4, max_side=8, ignore=True):
    h, w = int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1))
    gt = rng.integers(0, K, size=(h, w))
    if ignore:
        gt[rng.random((h, w)) < 0.1] = 255
    pred = np.where(rng.random((h, w)) < 0.6, np.where(gt == 255, 0, gt), rng.integers(0, K, size=(h, w)))
    return gt, pred


# ---------------------------------------------------------------- confusion matrix

def test_perfect_prediction_diagonal():
    gt = np.array([[0, 1], [2, 2]])
    cm = accumulate(ConfusionMatrix(3), gt, gt)
    assert np.array_equal(cm.counts, np.diag([1, 1, 2]).astype(np.uint64))
    ious, mean = miou(cm)
    assert ious == [1.0, 1.0, 1.0] and mean == 1.0


def test_all_ignored_leaves_matrix_unchanged():
    cm = accumulate(ConfusionMatrix(3), np.array([[0, 1]]), np.array([[0, 2]]))
    after = accumulate(cm, np.full((2, 2), 255), np.zeros((2, 2), dtype=int))
    assert after == cm


def test_accumulate_errors():
    with pytest.raises(MetricError):
        accumulate(ConfusionMatrix(3), np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(MetricError):
        accumulate(ConfusionMatrix(3), np.zeros((2, 2)), np.full((2, 2), 255))
    with pytest.raises(MetricError):
        accumulate(ConfusionMatrix(3), np.full((1, 1), 5), np.zeros((1, 1)))


def test_random_8x8_matches_loop_oracle():
    rng = np.random.default_rng(0)
    gt, pred = rng.integers(0, 4, size=(8, 8)), rng.integers(0, 4, size=(8, 8))
    assert np.array_equal(accumulate(ConfusionMatrix(4), gt, pred).counts, accumulate_oracle(gt, pred, 4))


def test_disjoint_class_has_zero_iou():
    gt = np.array([[0, 0, 1]])
    pred = np.array([[0, 0, 0]])
    ious, _ = miou(accumulate(ConfusionMatrix(3), gt, pred))
    assert ious[1] == 0.0 and ious[2] is None


def test_no_classes_present():
    with pytest.raises(MetricError, match="no classes present"):
        miou(ConfusionMatrix(3))


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**63 - 1))
def test_accumulate_and_miou_oracles(seed):
    rng = np.random.default_rng(seed)
    gt, pred = random_pair(rng)
    cm = accumulate(ConfusionMatrix(K4), gt, pred)
    assert np.array_equal(cm.counts, accumulate_oracle(gt, pred, K4))
    assert cm.total == int((gt != 255).sum())
    expected = miou_oracle(gt, pred, K4)
    if expected is None:
        with pytest.raises(MetricError):
            miou(cm)
    else:
        assert abs(miou(cm)[1] - expected) <= 1e-12
        assert all(v is None or 0.0 <= v <= 1.0 for v in per_class_iou(cm))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**63 - 1))
def test_miou_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    gt, pred = random_pair(rng, ignore=False)
    perm = rng.permutation(K4)
    a = miou(accumulate(ConfusionMatrix(K4), gt, pred))
    b = miou(accumulate(ConfusionMatrix(K4), perm[gt], perm[pred]))
    assert a[1] == pytest.approx(b[1], abs=1e-15)
    for c in range(K4):
        assert a[0][c] == b[0][perm[c]]


def test_merge_identity_and_commutativity():
    rng = np.random.default_rng(1)
    a = accumulate(ConfusionMatrix(4), *random_pair(rng))
    b = accumulate(ConfusionMatrix(4), *random_pair(rng))
    assert merge(a, ConfusionMatrix(4)) == a
    assert merge(a, b) == merge(b, a)
    with pytest.raises(MetricError):
        merge(a, ConfusionMatrix(5))


# ---------------------------------------------------------------- instance sizes

def test_average_sizes_examples():
    reg = _toy()
    one = np.zeros((4, 10), dtype=np.int64)
    one[0, :10] = 2001
    assert average_instance_sizes([InstanceMap(one)], reg) == {2: 10}
    two = np.zeros((4, 10), dtype=np.int64)
    two[0, :] = 2001
    two[1:, :] = 2002
    assert average_instance_sizes([InstanceMap(two)], reg) == {2: 20}


def test_average_sizes_brute_force(synthetic_split, registry):
    areas = {}
    for item in synthetic_split:
        ids = item.instances.pixels
        for v in np.unique(ids):
            if v >= 1000 and v % 1000:
                areas.setdefault(int(v) // 1000, []).append(int((ids == v).sum()))
    expected = {c: Fraction(sum(a), len(a)) for c, a in areas.items()}
    assert average_instance_sizes([it.instances for it in synthetic_split], registry) == expected


# ---------------------------------------------------------------- iIoU

def _two_instances():
    label = np.zeros((6, 8), dtype=np.uint8)
    inst = np.zeros((6, 8), dtype=np.int64)
    label[0:5, 0:6] = 2
    inst[0:5, 0:6] = 2001      # 30 px
    label[5, 6:8] = 2
    inst[5, 6:8] = 2002        # 2 px
    return label, inst


def test_iiou_penalizes_missed_small_instance():
    reg = _toy()
    label, inst = _two_instances()
    pred = label.copy()
    pred[5, 6:8] = 0                          # miss the tiny car
    avg = average_instance_sizes([InstanceMap(inst)], reg)
    assert avg == {2: 16}
    per_class, mean = iiou(label, InstanceMap(inst), pred, reg, avg)
    # weights: 16/30 for the big car, 8 for the tiny one -> iTP 16, iFN 16
    assert per_class[2] == 0.5
    iou_car = miou(accumulate(ConfusionMatrix(4), label, pred))[0][2]
    assert iou_car == 30 / 32
    assert per_class[2] < iou_car
    assert per_class[3] is None and mean == 0.5


def test_iiou_perfect_prediction():
    reg = _toy()
    label, inst = _two_instances()
    avg = average_instance_sizes([InstanceMap(inst)], reg)
    per_class, mean = iiou(label, InstanceMap(inst), label, reg, avg)
    assert per_class[2] == 1.0 and mean == 1.0


def test_iiou_missing_avg_size():
    reg = _toy()
    label, inst = _two_instances()
    with pytest.raises(MetricError):
        iiou(label, InstanceMap(inst), label, reg, {})


def test_iiou_unit_weights_equal_unweighted_counts():
    reg = _toy()
    label = np.zeros((4, 4), dtype=np.uint8)
    inst = np.zeros((4, 4), dtype=np.int64)
    label[:2, :2] = 3
    inst[:2, :2] = 3001
    label[2:, 2:] = 3
    inst[2:, 2:] = 3002
    pred = label.copy()
    pred[0, 0] = 0
    pred[3, 0] = 3
    t = accumulate_instances(WeightedTallies.for_registry(reg), label, InstanceMap(inst), pred, {3: 4})
    assert (t.itp[3], t.ifn[3], t.fp[3]) == (7, 1, 1)


def _equal_area_case(rng):
    """Random scene where all instances of a class share one area."""
    reg = _toy()
    h, w = 12, 12
    label = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
    inst = label.astype(np.int64)
    side = {2: int(rng.integers(1, 4)), 3: int(rng.integers(1, 4))}
    occupied = np.zeros((h, w), dtype=bool)
    next_idx = {2: 1, 3: 1}
    for _ in range(int(rng.integers(1, 7))):
        c = int(rng.integers(2, 4))
        s = side[c]
        top, left = int(rng.integers(0, h - s + 1)), int(rng.integers(0, w - s + 1))
        if occupied[top:top + s, left:left + s].any():
            continue
        occupied[top:top + s, left:left + s] = True
        label[top:top + s, left:left + s] = c
        inst[top:top + s, left:left + s] = c * 1000 + next_idx[c]
        next_idx[c] += 1
    pred = np.where(rng.random((h, w)) < 0.7, label, rng.integers(0, 4, size=(h, w)))
    return reg, label, InstanceMap(inst), pred


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**63 - 1))
def test_iiou_equals_iou_when_areas_equal(seed):
    reg, label, inst, pred = _equal_area_case(np.random.default_rng(seed))
    avg = average_instance_sizes([inst], reg)
    per_iiou, _ = iiou(label, inst, pred, reg, avg)
    ious = per_class_iou(accumulate(ConfusionMatrix(4), label, pred))
    for c in (2, 3):
        if c in avg:
            assert per_iiou[c] == ious[c]


# ---------------------------------------------------------------- dataset-level evaluation

def _evaluate(items, preds, registry, avg):
    return [evaluate_pair(registry, it.label, it.instances, p, avg) for it, p in zip(items, preds)]


def test_split_3_7_equals_whole(registry):
    items = generate_synthetic(11, 10, 48, 32, registry, 4.0)
    rng = np.random.default_rng(0)
    preds = [np.where(rng.random(it.label.pixels.shape) < 0.8, it.label.pixels,
                      rng.integers(0, 21, size=it.label.pixels.shape)) for it in items]
    avg = average_instance_sizes([it.instances for it in items], registry)
    results = _evaluate(items, preds, registry, avg)
    whole = merge_results(results, registry).report()
    merged = merge_results([merge_results(results[:3], registry), merge_results(results[3:], registry)],
                           registry).report()
    assert whole == merged
    assert 0 <= whole["miou"] <= 1 and 0 <= whole["iiou"] <= 1


def test_report_layout_and_table(registry):
    item = generate_synthetic(2, 1, 32, 32, registry, 3.0)[0]
    avg = average_instance_sizes([item.instances], registry)
    report = evaluate_pair(registry, item.label, item.instances, item.label, avg).report()
    assert set(report) == {"per_class_iou", "miou", "per_class_iiou", "iiou", "pixel_counts"}
    assert report["miou"] == 1.0 and report["iiou"] == 1.0
    assert set(report["per_class_iiou"]) == {registry[c].name for c in registry.instance_class_ids}
    table = format_table(report)
    assert "1.000000" in table and table.splitlines()[-2].startswith("mIoU")


def test_tallies_merge_rejects_mismatch():
    a = WeightedTallies((2, 3))
    b = WeightedTallies((2,))
    with pytest.raises(MetricError):
        merge(a, b)
    assert iiou_from_tallies(a) == ({2: None, 3: None}, None)
