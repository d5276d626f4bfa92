import numpy as np
import pytest

from softgroup.grouping import GroupingConfig, class_subset, hard_group, soft_group
from softgroup.io import scenes_equal
from softgroup.refinement import gt_iou_matrix
from softgroup.scene import hard_labels, validate_scene
from softgroup.spatial import build_grid, query_radius
from softgroup.synthesis import SynthConfig, corrupt_semantics, make_scene, synth_scene


@pytest.mark.parametrize("bad", [
    dict(corrupted_true_score=0.2), dict(corrupted_true_score=0.6, corrupted_wrong_score=0.5),
    dict(min_separation=0.08), dict(corruption_fraction=1.0), dict(corruption_fraction=-0.1),
    dict(points_per_instance=(10, 5)), dict(n_classes=0), dict(seed=-1), dict(seed=2**64),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_config_dict_round_trip():
    cfg = SynthConfig(corruption_fraction=0.3, seed=7)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"colour": 1})


def test_clean_scene_is_recovered_exactly():
    scene = synth_scene(SynthConfig(seed=11))
    assert validate_scene(scene) == []
    props = soft_group(scene)
    ious = gt_iou_matrix([p.point_ids for p in props], scene.gt)
    assert len(props) == scene.gt.n_instances
    assert np.all(ious.max(axis=0) == 1.0)


def test_same_seed_same_scene():
    cfg = SynthConfig(corruption_fraction=0.3, seed=123)
    assert scenes_equal(make_scene(cfg), make_scene(cfg))
    assert not scenes_equal(make_scene(cfg), make_scene(SynthConfig(corruption_fraction=0.3, seed=124)))


def test_empty_scene_flows_downstream():
    scene = make_scene(SynthConfig(n_instances=0, corruption_fraction=0.3))
    assert scene.n_points == 0 and validate_scene(scene) == []
    assert soft_group(scene) == [] and hard_group(scene) == []


def test_rho_zero_is_identity():
    scene = synth_scene(SynthConfig(seed=3))
    assert corrupt_semantics(scene, SynthConfig(seed=3)) is scene


def test_separation_and_spacing():
    scene = synth_scene(SynthConfig(seed=5))
    gt = scene.gt
    coords = scene.points.coords
    d = np.linalg.norm(gt.instance_center[:, None] - gt.instance_center[None], axis=-1)
    assert np.all(d[np.triu_indices(gt.n_instances, 1)] >= 1.0 - 0.1)
    grid = build_grid(coords, np.arange(scene.n_points), 0.04)
    for i in np.random.default_rng(0).choice(scene.n_points, 200, replace=False):
        assert query_radius(grid, coords, coords[i], 0.04).size > 1


def test_corrupted_points_keep_true_class_in_subset():
    cfg = SynthConfig(corruption_fraction=0.3, seed=8)
    scene = make_scene(cfg)
    gt = scene.gt
    scores = scene.semantic.scores
    hard = hard_labels(scene.semantic)
    for k, m in enumerate(gt.instance_masks):
        c = gt.instance_class[k]
        flipped = m[hard[m] != c]
        assert flipped.size == round(0.3 * m.size)
        assert np.all(scores[flipped, c] == np.float32(0.35))
        assert np.all(scores[flipped].max(axis=1) == np.float32(0.45))
        assert np.all(np.isin(flipped, class_subset(scene.semantic, c, 0.2)))
    assert np.all(np.abs(scores.sum(axis=1) - 1) <= 1e-6)


def test_corruption_is_a_half_space_cut():
    cfg = SynthConfig(corruption_fraction=0.3, seed=2)
    scene = make_scene(cfg)
    hard = hard_labels(scene.semantic)
    coords = scene.points.coords
    for k, m in enumerate(scene.gt.instance_masks):
        bad = hard[m] != scene.gt.instance_class[k]
        separable = False
        for axis in range(3):
            x = coords[m, axis]
            separable |= x[bad].min() >= x[~bad].max() or x[bad].max() <= x[~bad].min()
        assert separable


@pytest.mark.parametrize("seed", range(4))
def test_soft_versus_hard_mechanism(seed):
    rho = 0.3
    cfg = SynthConfig(corruption_fraction=rho, seed=seed)
    scene = make_scene(cfg)
    gt = scene.gt
    gcfg = GroupingConfig()
    soft = soft_group(scene, gcfg)
    hard = hard_group(scene, gcfg)
    assert np.all(gt_iou_matrix([p.point_ids for p in soft], gt).max(axis=0) >= 0.99)
    h_iou = gt_iou_matrix([p.point_ids for p in hard], gt)
    h_cls = np.array([p.source_class for p in hard])
    for k, m in enumerate(gt.instance_masks):
        same = h_cls == gt.instance_class[k]
        assert h_iou[same, k].max() <= 1 - rho + 0.01
        wrong = [p for p, c, o in zip(hard, h_cls, h_iou[:, k]) if c != gt.instance_class[k] and o > 0]
        assert any(len(p) >= gcfg.min_points for p in wrong)


def test_partial_instance_selection():
    cfg = SynthConfig(corruption_fraction=0.3, corrupted_instance_fraction=0.4, seed=1)
    scene = make_scene(cfg)
    hard = hard_labels(scene.semantic)
    flipped = [np.any(hard[m] != c) for m, c in zip(scene.gt.instance_masks, scene.gt.instance_class)]
    assert sum(flipped) == 2


def test_two_class_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        make_scene(SynthConfig(n_classes=2, corruption_fraction=0.3))
    scene = make_scene(SynthConfig(n_classes=2, corruption_fraction=0.3, corrupted_true_score=0.45,
                                   corrupted_wrong_score=0.55))
    assert validate_scene(scene) == []
