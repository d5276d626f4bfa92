import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softgroup.io import write_refinement
from softgroup.refinement import (
    HeuristicRefiner, apply_external_refinement, assign_targets, extract_box, gt_iou_matrix,
    heuristic_refine, load_external_refinement, mask_iou, mask_score_target, refine, refinement_records,
)
from softgroup.scene import GroundTruth, Proposal, SemanticField
from softgroup.synthesis import SynthConfig, corrupted_rows, make_scene
from softgroup.grouping import soft_group

id_sets = st.sets(st.integers(0, 30), max_size=15)


def test_mask_iou_examples():
    assert mask_iou({1, 2, 3}, {1, 2, 3}) == 1.0
    assert mask_iou({1, 2}, {3, 4}) == 0.0
    assert mask_iou({1, 2, 3}, {2, 3, 4}) == 0.5
    with pytest.raises(ValueError):
        mask_iou(set(), set())


@given(id_sets, id_sets)
def test_mask_iou_matches_set_oracle(a, b):
    if not a and not b:
        return
    iou = mask_iou(a, b)
    assert iou == len(a & b) / (len(a) + len(b) - len(a & b))
    assert iou == mask_iou(b, a)
    assert 0.0 <= iou <= 1.0
    assert (iou == 1.0) == (a == b)


def gt_from_instances(n, instances, classes):
    inst = np.full(n, -1)
    for k, m in enumerate(instances):
        inst[m] = k
    labels = np.where(inst >= 0, np.asarray(classes)[np.maximum(inst, 0)], -1)
    return GroundTruth.from_labels(np.zeros((n, 3)), labels, inst, instance_class=classes)


def test_assign_identity_and_boundary():
    gt = gt_from_instances(20, [np.arange(0, 10), np.arange(10, 20)], [3, 5])
    exact, half = assign_targets([Proposal(np.arange(10), 0), Proposal(np.arange(5), 0)], gt, 6)
    assert exact.is_positive and exact.gt_index == 0 and exact.class_target == 3
    assert exact.mask_target.all() and exact.mask_score_target == 1.0
    # IoU of exactly 0.5 is not "higher than" 0.5
    assert mask_iou(np.arange(5), np.arange(10)) == 0.5
    assert not half.is_positive and half.gt_index is None and half.class_target == 6
    assert half.mask_target is None and half.mask_score_target is None


def test_assign_picks_highest_iou():
    # two disjoint instances cannot both exceed 0.5, so B wins at 7/13 against A at 6/17
    gt = gt_from_instances(40, [np.arange(0, 10), np.arange(10, 17)], [1, 2])
    prop = Proposal(np.arange(4, 17), 0)
    assert gt_iou_matrix([prop.point_ids], gt)[0].tolist() == [6 / 17, 7 / 13]
    t = assign_targets([prop], gt, 3)[0]
    assert t.is_positive and t.gt_index == 1 and t.class_target == 2
    assert t.mask_target.tolist() == [False] * 6 + [True] * 7
    assert t.mask_score_target == 7 / 13


def test_assign_tie_goes_to_lowest_index():
    gt = gt_from_instances(8, [np.arange(0, 4), np.arange(4, 8)], [0, 1])
    prop = np.arange(2, 6)
    assert mask_iou(prop, np.arange(4)) == mask_iou(prop, np.arange(4, 8)) == 2 / 6
    t = assign_targets([Proposal(prop, 0)], gt, 2, iou_threshold=0.3)[0]
    assert t.is_positive and t.gt_index == 0


@given(st.integers(0, 2**32 - 1))
def test_assign_matches_exhaustive_recomputation(seed):
    rng = np.random.default_rng(seed)
    n = 30
    inst = rng.integers(-1, 3, size=n)
    inst[:3] = [0, 1, 2]
    gt = GroundTruth.from_labels(np.zeros((n, 3)), np.where(inst >= 0, inst, -1), inst, instance_class=[0, 1, 2])
    props = [Proposal(np.sort(rng.choice(n, size=rng.integers(1, n), replace=False)), 0) for _ in range(5)]
    for p, t in zip(props, assign_targets(props, gt, 3)):
        ious = [mask_iou(p, np.flatnonzero(inst == k)) for k in range(3)]
        best = max(ious)
        assert t.is_positive == (best > 0.5)
        if t.is_positive:
            assert t.gt_index == ious.index(best)
            assert t.mask_score_target == best


def test_mask_score_target():
    assert mask_score_target([1, 2, 3], [1, 2, 3]) == 1.0
    assert mask_score_target([1, 2], [3]) == 0.0
    with pytest.raises(ValueError):
        mask_score_target([1], [])
    for n in range(1, 8):
        a, b = set(range(0, n)), set(range(n // 2, n // 2 + n))
        assert mask_score_target(sorted(a), sorted(b)) == len(a & b) / len(a | b)


def test_extract_box():
    coords = np.array([[0, 0, 0], [1, 2, 3], [5, 5, 5]], dtype=float)
    lo, hi = extract_box([1], coords)
    assert lo.tolist() == hi.tolist() == [1, 2, 3]
    lo, hi = extract_box([0, 1], coords)
    assert lo.tolist() == [0, 0, 0] and hi.tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        extract_box([], coords)


def test_extract_box_matches_fold(rng):
    coords = rng.normal(size=(200, 3))
    mask = np.sort(rng.choice(200, size=37, replace=False))
    lo, hi = extract_box(mask, coords)
    flo, fhi = coords[mask[0]].copy(), coords[mask[0]].copy()
    for i in mask[1:]:
        flo, fhi = np.minimum(flo, coords[i]), np.maximum(fhi, coords[i])
    assert np.array_equal(lo, flo) and np.array_equal(hi, fhi)
    assert np.all(coords[mask] >= lo) and np.all(coords[mask] <= hi)


def test_heuristic_pure_proposal():
    field = SemanticField(np.eye(5)[[3] * 10])
    inst = heuristic_refine(Proposal(np.arange(10), 3), field, np.zeros((10, 3)))
    assert (inst.category, inst.class_score, inst.mask_score, inst.confidence) == (3, 1.0, 1.0, 1.0)
    assert inst.mask.tolist() == list(range(10))


@pytest.mark.parametrize("c", [3, 5, 18])
def test_heuristic_uniform_is_background(c):
    field = SemanticField(np.full((6, c), 1.0 / c))
    inst = heuristic_refine(Proposal(np.arange(6), 0), field, np.zeros((6, 3)))
    assert inst.category == c
    assert inst.class_score == pytest.approx(1 - 1 / c)


def test_heuristic_corrupted_true_class():
    cfg = SynthConfig(n_classes=4)
    rows = np.tile(np.array([0.1 / 3, 0.9, 0.1 / 3, 0.1 / 3]), (100, 1))
    rows[70:] = corrupted_rows(cfg, 1, 3)
    inst = heuristic_refine(Proposal(np.arange(100), 1), SemanticField(rows), np.zeros((100, 3)))
    assert inst.category == 1
    assert inst.class_score == pytest.approx(0.7 * 0.9 + 0.3 * 0.35)
    assert inst.mask.tolist() == list(range(70))
    assert inst.mask_score == pytest.approx(0.9)
    assert inst.confidence == inst.class_score * inst.mask_score


def test_heuristic_mask_falls_back_to_whole_proposal():
    rows = np.tile([0.45, 0.35, 0.2], (4, 1))
    inst = heuristic_refine(Proposal(np.arange(4), 0), SemanticField(rows), np.zeros((4, 3)))
    assert inst.category == 3
    assert inst.mask.tolist() == [0, 1, 2, 3]


def scene_and_instances():
    scene = make_scene(SynthConfig(corruption_fraction=0.3, n_instances=3, seed=5))
    props = soft_group(scene)
    return scene, props, refine(props, scene)


def test_external_round_trip(tmp_path):
    scene, props, insts = scene_and_instances()
    coords = scene.points.coords
    assert apply_external_refinement(props, refinement_records(props, insts), coords, scene.n_classes) == insts
    path = tmp_path / "r.sgrf"
    write_refinement(refinement_records(props, insts), path)
    loaded = load_external_refinement(props, path, coords, scene.n_classes)
    assert [i.mask.tolist() for i in loaded] == [i.mask.tolist() for i in insts]
    assert [i.category for i in loaded] == [i.category for i in insts]
    assert all(abs(a.class_score - b.class_score) < 1e-7 for a, b in zip(loaded, insts))


def test_external_rejections():
    scene, props, insts = scene_and_instances()
    coords, c = scene.points.coords, scene.n_classes
    recs = refinement_records(props, insts)
    with pytest.raises(ValueError):
        apply_external_refinement(props, recs[:-1], coords, c)
    bad = list(recs)
    bad[0] = (bad[0][0], 1.2, bad[0][2], bad[0][3])
    with pytest.raises(ValueError):
        apply_external_refinement(props, bad, coords, c)
    bad[0] = (recs[0][0], recs[0][1], recs[0][2], recs[0][3][:-1])
    with pytest.raises(ValueError):
        apply_external_refinement(props, bad, coords, c)
    bad[0] = (c + 1, recs[0][1], recs[0][2], recs[0][3])
    with pytest.raises(ValueError):
        apply_external_refinement(props, bad, coords, c)


def test_refiner_estimator():
    scene, props, insts = scene_and_instances()
    est = HeuristicRefiner()
    assert est.get_params() == {"mask_threshold": 0.5}
    assert est.fit(scene).transform(props) == insts
    for inst in insts:
        lo, hi = inst.box
        pts = scene.points.coords[inst.mask]
        assert np.array_equal(lo, pts.min(axis=0)) and np.array_equal(hi, pts.max(axis=0))
        assert inst.confidence == inst.class_score * inst.mask_score
