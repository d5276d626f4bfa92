"""Top-down stage helpers: learning targets, a stand-in refiner, and boxes.

The refiner here is a heuristic over the semantic field so the pipeline runs
end to end without a network. Real classification / mask / mask-score outputs
can be supplied instead through :func:`load_external_refinement`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .scene import GroundTruth, Proposal, RefinedInstance, Scene, SemanticField

POSITIVE_IOU = 0.5


@dataclass(frozen=True, eq=False)
class TargetAssignment:
    is_positive: bool
    gt_index: int | None
    class_target: int
    mask_target: np.ndarray | None = None
    mask_score_target: float | None = None


def _as_ids(x) -> np.ndarray:
    if isinstance(x, Proposal):
        return x.point_ids
    if isinstance(x, (set, frozenset)):
        x = sorted(x)
    return np.unique(np.asarray(x, dtype=np.int64).reshape(-1))


def mask_iou(a, b) -> float:
    """Intersection over union of two point-index sets."""
    a, b = _as_ids(a), _as_ids(b)
    if a.size == 0 and b.size == 0:
        raise ValueError("IoU of two empty masks is undefined")
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def gt_iou_matrix(masks, gt: GroundTruth) -> np.ndarray:
    """IoU of every mask (rows) against every ground-truth instance (columns)."""
    k = gt.n_instances
    sizes = np.bincount(gt.instance_id[gt.instance_id >= 0], minlength=k)
    out = np.zeros((len(masks), k))
    for r, m in enumerate(masks):
        ids = _as_ids(m)
        inst = gt.instance_id[ids]
        inter = np.bincount(inst[inst >= 0], minlength=k)
        out[r] = inter / (ids.size + sizes - inter)
    return out


def assign_targets(proposals, gt: GroundTruth, n_classes, iou_threshold=POSITIVE_IOU, predicted_masks=None):
    """Learning targets for each proposal.

    A proposal is positive when its best IoU with a ground-truth instance is
    strictly above ``iou_threshold``; it is then assigned to that instance
    (lowest index on ties). Negatives target the background class
    ``n_classes``. The mask-score target of a positive is the IoU of its
    predicted mask with the assigned instance; without ``predicted_masks``
    the proposal itself is used.
    """
    ious = gt_iou_matrix([p.point_ids for p in proposals], gt)
    out = []
    for r, prop in enumerate(proposals):
        if gt.n_instances == 0:
            out.append(TargetAssignment(False, None, n_classes))
            continue
        g = int(np.argmax(ious[r]))
        if not ious[r, g] > iou_threshold:
            out.append(TargetAssignment(False, None, n_classes))
            continue
        gt_mask = gt.instance_masks[g]
        pred = prop.point_ids if predicted_masks is None else predicted_masks[r]
        out.append(TargetAssignment(
            True, g, int(gt.instance_class[g]),
            mask_target=gt.instance_id[prop.point_ids] == g,
            mask_score_target=mask_score_target(pred, gt_mask),
        ))
    return out


def mask_score_target(predicted_mask, gt_mask) -> float:
    if _as_ids(gt_mask).size == 0:
        raise ValueError("ground-truth mask is empty")
    return mask_iou(predicted_mask, gt_mask)


def extract_box(mask, coords):
    """Tight axis-aligned box ``(min, max)`` of the masked points."""
    ids = _as_ids(mask)
    if ids.size == 0:
        raise ValueError("cannot box an empty mask")
    pts = np.asarray(coords, dtype=np.float64)[ids]
    return pts.min(axis=0), pts.max(axis=0)


def heuristic_refine(proposal: Proposal, field: SemanticField, coords, mask_threshold=0.5) -> RefinedInstance:
    """Score a proposal from the semantic field alone.

    Class scores are the mean member score rows, extended with a background
    score of ``1 - max`` of those means. The mask keeps members scoring above
    ``mask_threshold`` for the chosen category (the whole proposal if none
    do) and the mask score is their mean score for that category.
    """
    ids = _as_ids(proposal)
    if ids.size == 0:
        raise ValueError("cannot refine an empty proposal")
    scores = field.scores if isinstance(field, SemanticField) else np.asarray(field, dtype=np.float64)
    rows = scores[ids].astype(np.float64)
    fg = rows.mean(axis=0)
    vec = np.append(fg, 1.0 - fg.max())
    category = int(np.argmax(vec))
    if category < scores.shape[1]:
        point_scores = rows[:, category]
    else:
        point_scores = 1.0 - rows.max(axis=1)
    keep = point_scores > mask_threshold
    if not keep.any():
        keep[:] = True
    mask = ids[keep]
    mask_score = float(np.clip(point_scores[keep].mean(), 0.0, 1.0))
    return RefinedInstance(
        mask=mask,
        category=category,
        class_score=float(np.clip(vec[category], 0.0, 1.0)),
        mask_score=mask_score,
        box=extract_box(mask, coords),
    )


def refine(proposals, scene: Scene, mask_threshold=0.5) -> list[RefinedInstance]:
    return [heuristic_refine(p, scene.semantic, scene.points.coords, mask_threshold) for p in proposals]


def apply_external_refinement(proposals, records, coords, n_classes) -> list[RefinedInstance]:
    """Build instances from per-proposal network outputs.

    ``records`` is a sequence of ``(category, class_score, mask_score, mask_flags)``
    aligned with ``proposals``; ``mask_flags`` selects proposal members. An
    all-false mask falls back to the whole proposal.
    """
    if len(records) != len(proposals):
        raise ValueError(f"{len(records)} refinement records for {len(proposals)} proposals")
    out = []
    for k, (prop, (category, class_score, mask_score, flags)) in enumerate(zip(proposals, records)):
        flags = np.asarray(flags, dtype=bool).reshape(-1)
        if flags.size != len(prop):
            raise ValueError(f"record {k}: {flags.size} mask flags for a proposal of {len(prop)} points")
        for name, v in (("class_score", class_score), ("mask_score", mask_score)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"record {k}: {name} {v} outside [0, 1]")
        if not 0 <= category <= n_classes:
            raise ValueError(f"record {k}: category {category} outside [0, {n_classes}]")
        mask = prop.point_ids[flags] if flags.any() else prop.point_ids
        out.append(RefinedInstance(mask, int(category), float(class_score), float(mask_score),
                                   box=extract_box(mask, coords)))
    return out


def refinement_records(proposals, instances):
    """Inverse of :func:`apply_external_refinement` for masks inside their proposals."""
    return [
        (inst.category, inst.class_score, inst.mask_score, np.isin(prop.point_ids, inst.mask))
        for prop, inst in zip(proposals, instances)
    ]


def load_external_refinement(proposals, path, coords, n_classes) -> list[RefinedInstance]:
    from .io import read_refinement

    return apply_external_refinement(proposals, read_refinement(path), coords, n_classes)


class HeuristicRefiner(BaseEstimator):
    """Turn proposals into scored instances using the scene's semantic field.

    ``fit`` binds the scene; ``transform`` maps a list of proposals to a list
    of :class:`RefinedInstance`, in the same order.
    """

    def __init__(self, mask_threshold=0.5):
        self.mask_threshold = mask_threshold

    def fit(self, scene, y=None):
        if scene.semantic is None:
            raise ValueError("refinement needs a scene with semantic scores")
        self.scene_ = scene
        self.n_classes_ = scene.n_classes
        return self

    def transform(self, proposals):
        check_is_fitted(self, "scene_")
        return refine(proposals, self.scene_, self.mask_threshold)
