import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from softgroup.scene import (
    GroundTruth, OffsetField, PointCloud, Proposal, RefinedInstance, Scene, SemanticField, hard_labels,
    shift_points, validate_scene,
)
from softgroup.synthesis import SynthConfig, make_scene


def small_scene(scores=None):
    coords = np.array([[0, 0, 0], [0.01, 0, 0], [1, 1, 1], [1.01, 1, 1]], dtype=float)
    labels = np.array([0, 0, 1, 1])
    if scores is None:
        scores = np.eye(2)[labels]
    gt = GroundTruth.from_labels(coords, labels, np.array([0, 0, 1, 1]))
    return Scene(PointCloud(coords), SemanticField(scores), OffsetField(gt.offset_targets(coords)), gt)


def test_valid_scene_has_no_violations():
    assert validate_scene(small_scene()) == []


def test_row_sum_violation_names_the_row():
    scores = np.eye(2)[[0, 0, 1, 1]].astype(float)
    scores[2] = [0.0, 0.9]
    v = validate_scene(small_scene(scores))
    assert len(v) == 1
    assert v[0].field == "semantic.scores" and v[0].index == 2


def test_cross_label_violation():
    s = small_scene()
    labels = s.gt.semantic_label.copy()
    labels[1] = 1
    gt = GroundTruth(labels, s.gt.instance_id, s.gt.instance_class, s.gt.instance_center)
    v = validate_scene(Scene(s.points, s.semantic, s.offsets, gt))
    assert len(v) == 1 and v[0].field == "gt.semantic_label" and v[0].index == 1


def test_other_violations_are_reported():
    coords = np.array([[0, 0, np.nan], [0, 0, 0]])
    colors = np.array([[0.5, 0.5, 0.5], [0.5, 1.5, 0.5]])
    scene = Scene(PointCloud(coords, colors), SemanticField([[1.2, -0.2], [0.5, 0.5]]),
                  OffsetField([[0, 0, 0], [np.inf, 0, 0]]))
    fields = sorted((v.field, v.index) for v in validate_scene(scene))
    assert fields == [("offsets.offsets", 1), ("points.colors", 1), ("points.coords", 0), ("semantic.scores", 0)]


def test_bad_center_is_reported():
    s = small_scene()
    centers = s.gt.instance_center.copy()
    centers[1, 0] += 1e-3
    gt = GroundTruth(s.gt.semantic_label, s.gt.instance_id, s.gt.instance_class, centers)
    v = validate_scene(Scene(s.points, s.semantic, s.offsets, gt))
    assert [(x.field, x.index) for x in v] == [("gt.instance_center", 1)]


def test_arrays_are_read_only():
    s = small_scene()
    with pytest.raises(ValueError):
        s.points.coords[0, 0] = 5.0


def test_shift_points_examples():
    assert shift_points([[1, 1, 1]], [[0, 0, 0]]).tolist() == [[1, 1, 1]]
    assert shift_points([[1, 0, 0]], [[-1, 0, 0]]).tolist() == [[0, 0, 0]]
    with pytest.raises(ValueError):
        shift_points(np.zeros((2, 3)), np.zeros((3, 3)))


def test_gt_offsets_collapse_instances_to_centers():
    scene = make_scene(SynthConfig(n_instances=3, points_per_instance=(200, 300), seed=4))
    shifted = scene.shifted_coords()
    gt = scene.gt
    means = np.stack([scene.points.coords[m].mean(axis=0) for m in gt.instance_masks])
    for k, m in enumerate(gt.instance_masks):
        assert np.abs(shifted[m] - means[k]).max() < 1e-6


@given(hnp.arrays(np.float64, (20, 3), elements=st.floats(-100, 100)),
       hnp.arrays(np.float64, (20, 3), elements=st.floats(-100, 100)))
def test_shift_is_invertible(coords, offsets):
    back = shift_points(shift_points(coords, offsets), -offsets)
    assert np.abs(back - coords).max() <= 1e-12 * max(1.0, np.abs(coords).max() + np.abs(offsets).max())


def test_hard_labels_examples():
    assert hard_labels(SemanticField([[0.7, 0.2, 0.1]])).tolist() == [0]
    assert hard_labels(SemanticField([[0.5, 0.5]])).tolist() == [0]
    labels = np.array([2, 0, 1, 2])
    assert hard_labels(SemanticField(np.eye(3)[labels])).tolist() == labels.tolist()


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 6)), elements=st.floats(0, 1)))
def test_hard_labels_in_range(raw):
    rows = raw + 1e-3
    out = hard_labels(SemanticField(rows / rows.sum(axis=1, keepdims=True)))
    assert out.min() >= 0 and out.max() < raw.shape[1]


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_scenes_validate(seed):
    scene = make_scene(SynthConfig(corruption_fraction=0.3, seed=seed))
    assert validate_scene(scene) == []


def test_proposal_invariants():
    with pytest.raises(ValueError):
        Proposal([], 0)
    with pytest.raises(ValueError):
        Proposal([3, 2], 0)
    with pytest.raises(ValueError):
        Proposal([1, 1], 0)
    assert Proposal([1, 4], 2) == Proposal(np.array([1, 4]), 2)
    assert Proposal([1, 4], 2) != Proposal([1, 4], 3)


def test_refined_instance_confidence_and_box_checks():
    inst = RefinedInstance([0, 3], 1, 0.7, 0.3, ([0, 0, 0], [1, 1, 1]))
    assert inst.confidence == 0.7 * 0.3
    with pytest.raises(ValueError):
        RefinedInstance([0], 1, 1.2, 0.3, ([0, 0, 0], [1, 1, 1]))
    with pytest.raises(ValueError):
        RefinedInstance([0], 1, 0.5, 0.3, ([0, 2, 0], [1, 1, 1]))
