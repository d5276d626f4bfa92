"""Instance segmentation metrics and the semantic score-threshold sweep.

Predictions are :class:`~softgroup.scene.RefinedInstance` objects; those whose
category is the background index ``n_classes`` are dropped before matching.
Class means run over the classes that have at least one ground-truth instance.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .refinement import extract_box, gt_iou_matrix
from .scene import IGNORE, GroundTruth, Scene, SemanticField, hard_labels

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
DEFAULT_TAUS = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5)


# ---------------------------------------------------------------------------
# semantic recall / precision sweep

@dataclass(frozen=True, eq=False)
class PRSweep:
    """Recall and precision of ``score > tau`` per class and threshold.

    ``recall[j, t]`` is NaN for classes without ground-truth points and
    ``precision[j, t]`` is NaN where no point passes the threshold. The
    ``hard_*`` arrays hold the argmax-prediction baseline per class.
    """

    taus: np.ndarray
    present: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    hard_recall: np.ndarray
    hard_precision: np.ndarray

    @property
    def mean_recall(self):
        return np.nanmean(self.recall[self.present], axis=0) if self.present.any() else np.full(len(self.taus), np.nan)

    @property
    def mean_precision(self):
        if not self.present.any():
            return np.full(len(self.taus), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.precision[self.present], axis=0)

    def rows(self):
        """Plot-ready rows ``(tau, class, recall, precision)``.

        Hard-prediction rows use ``tau = "hard"``; class means use ``class = "mean"``.
        """
        out = []
        for j in np.flatnonzero(self.present):
            for t, tau in enumerate(self.taus):
                out.append((float(tau), int(j), float(self.recall[j, t]), float(self.precision[j, t])))
            out.append(("hard", int(j), float(self.hard_recall[j]), float(self.hard_precision[j])))
        for t, tau in enumerate(self.taus):
            out.append((float(tau), "mean", float(self.mean_recall[t]), float(self.mean_precision[t])))
        if self.present.any():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                out.append(("hard", "mean", float(np.nanmean(self.hard_recall[self.present])),
                            float(np.nanmean(self.hard_precision[self.present]))))
        return out


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def semantic_pr_sweep(field, labels, taus=DEFAULT_TAUS) -> PRSweep:
    """Point-level recall/precision of each class subset ``{i : s_ij > tau}``.

    Points labelled ``-1`` are left out of every count.
    """
    taus = np.asarray(taus, dtype=np.float64).reshape(-1)
    if taus.size == 0:
        raise ValueError("at least one threshold is required")
    if np.any((taus <= 0) | (taus >= 1)):
        raise ValueError("thresholds must lie in (0, 1)")
    scores = field.scores if isinstance(field, SemanticField) else np.asarray(field, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    keep = labels != IGNORE
    scores, labels = scores[keep], labels[keep]
    n_classes = scores.shape[1]
    gt_count = np.bincount(labels, minlength=n_classes).astype(np.float64)
    onehot = labels[:, None] == np.arange(n_classes)
    tp = np.empty((n_classes, taus.size))
    pos = np.empty((n_classes, taus.size))
    for t, tau in enumerate(taus):
        passed = scores > tau
        tp[:, t] = (passed & onehot).sum(axis=0)
        pos[:, t] = passed.sum(axis=0)
    hard = hard_labels(scores)
    hard_tp = np.bincount(hard[hard == labels], minlength=n_classes).astype(np.float64)
    hard_pos = np.bincount(hard, minlength=n_classes).astype(np.float64)
    return PRSweep(
        taus=taus,
        present=gt_count > 0,
        recall=_ratio(tp, gt_count[:, None]),
        precision=_ratio(tp, pos),
        hard_recall=_ratio(hard_tp, gt_count),
        hard_precision=_ratio(hard_tp, hard_pos),
    )


# ---------------------------------------------------------------------------
# matching and average precision

@dataclass(frozen=True, eq=False)
class MatchResult:
    """Greedy matching outcome.

    ``order`` lists the kept (non-background) predictions by decreasing
    confidence; ``tp``, ``classes`` and ``matched_gt`` follow that order.
    """

    order: np.ndarray
    tp: np.ndarray
    classes: np.ndarray
    matched_gt: np.ndarray
    gt_counts: dict


def _kept(preds, n_classes):
    return np.array([k for k, p in enumerate(preds) if p.category != n_classes], dtype=np.int64)


def _ranking(preds, idx):
    """Indices sorted by confidence (descending), then smallest mask id."""
    conf = np.array([preds[k].confidence for k in idx], dtype=np.float64)
    first = np.array([preds[k].mask[0] if preds[k].mask.size else np.iinfo(np.int64).max for k in idx])
    return idx[np.lexsort((first, -conf))] if idx.size else idx


def _greedy_match(preds, order, gt_classes, overlaps, iou_threshold, strict=False):
    tp = np.zeros(order.size, dtype=bool)
    matched = np.full(order.size, -1, dtype=np.int64)
    taken = np.zeros(gt_classes.size, dtype=bool)
    for r, k in enumerate(order):
        cand = np.flatnonzero((gt_classes == preds[k].category) & ~taken)
        if cand.size == 0:
            continue
        # argmax takes the lowest gt index on ties
        g = cand[np.argmax(overlaps[k, cand])]
        iou = overlaps[k, g]
        if iou > iou_threshold or (not strict and iou == iou_threshold):
            tp[r] = True
            matched[r] = g
            taken[g] = True
    return tp, matched


def mask_overlaps(preds, gt: GroundTruth) -> np.ndarray:
    """Mask IoU of every prediction with every GT instance, ignoring ``-1`` labelled points."""
    masks = [p.mask[gt.semantic_label[p.mask] != IGNORE] for p in preds]
    return gt_iou_matrix(masks, gt)


def _gt_counts(gt):
    classes, counts = np.unique(gt.instance_class, return_counts=True)
    return {int(c): int(n) for c, n in zip(classes, counts)}


def match_predictions(preds, gt: GroundTruth, iou_threshold, n_classes, overlaps=None) -> MatchResult:
    """Confidence-ordered greedy one-to-one matching within each class.

    Each prediction takes the unmatched same-class GT instance it overlaps
    most; it is a true positive when that overlap is at least ``iou_threshold``.
    """
    if overlaps is None:
        overlaps = mask_overlaps(preds, gt)
    order = _ranking(preds, _kept(preds, n_classes))
    tp, matched = _greedy_match(preds, order, gt.instance_class, overlaps, iou_threshold)
    classes = np.array([preds[k].category for k in order], dtype=np.int64)
    return MatchResult(order, tp, classes, matched, _gt_counts(gt))


def ap_from_matches(tp, n_gt) -> float:
    """Area under the precision envelope of a ranked TP/FP sequence."""
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        raise ValueError("average precision needs at least one ground-truth instance")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall rises by 1/n_gt exactly at each true positive
    return float(envelope[tp].sum() / n_gt)


def _per_class_ap(match: MatchResult):
    return {
        c: ap_from_matches(match.tp[match.classes == c], n)
        for c, n in sorted(match.gt_counts.items())
    }


def _mean(values):
    return float(np.mean(list(values))) if values else float("nan")


def average_precision(preds, gt: GroundTruth, iou_threshold, n_classes, overlaps=None):
    """Per-class AP at one IoU threshold and its mean over GT classes."""
    if gt.n_instances == 0:
        raise ValueError("no ground-truth instances; average precision is undefined")
    per = _per_class_ap(match_predictions(preds, gt, iou_threshold, n_classes, overlaps))
    return per, _mean(per.values())


def ap_suite(preds, gt: GroundTruth, n_classes, overlaps=None):
    """``(ap, ap50, ap25, per_class)``; ``ap`` averages thresholds 0.50:0.95:0.05.

    ``per_class`` maps class -> (ap, ap50, ap25).
    """
    if gt.n_instances == 0:
        raise ValueError("no ground-truth instances; average precision is undefined")
    if overlaps is None:
        overlaps = mask_overlaps(preds, gt)
    sweep = [average_precision(preds, gt, t, n_classes, overlaps)[0] for t in AP_THRESHOLDS]
    per50 = sweep[0]
    per25 = average_precision(preds, gt, 0.25, n_classes, overlaps)[0]
    per_class = {c: (float(np.mean([s[c] for s in sweep])), per50[c], per25[c]) for c in per50}
    ap = _mean([v[0] for v in per_class.values()])
    return ap, _mean(per50.values()), _mean(per25.values()), per_class


def s3dis_metrics(preds, gt: GroundTruth, n_classes, overlaps=None, notes=None):
    """``(mcov, mwcov, mprec50, mrec50)``.

    Coverage is the best same-class IoU each GT instance receives; weighted
    coverage weights it by instance size within the class. Precision and
    recall count greedy one-to-one matches with IoU strictly above 0.5.
    A class with GT but no predictions gets precision 0 and a warning.
    """
    if gt.n_instances == 0:
        raise ValueError("no ground-truth instances; coverage metrics are undefined")
    if overlaps is None:
        overlaps = mask_overlaps(preds, gt)
    kept = _kept(preds, n_classes)
    order = _ranking(preds, kept)
    tp, _ = _greedy_match(preds, order, gt.instance_class, overlaps, 0.5, strict=True)
    pred_cls = np.array([preds[k].category for k in order], dtype=np.int64)
    sizes = np.bincount(gt.instance_id[gt.instance_id >= 0], minlength=gt.n_instances).astype(np.float64)
    cov, wcov, prec, rec = [], [], [], []
    for c in np.unique(gt.instance_class):
        g = np.flatnonzero(gt.instance_class == c)
        p = order[pred_cls == c]
        best = overlaps[np.ix_(p, g)].max(axis=0) if p.size else np.zeros(g.size)
        cov.append(best.mean())
        wcov.append((best * sizes[g]).sum() / sizes[g].sum())
        n_tp = int(tp[pred_cls == c].sum())
        if p.size == 0:
            msg = f"class {int(c)}: no predictions, precision counted as 0"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            if notes is not None:
                notes.append(msg)
            prec.append(0.0)
        else:
            prec.append(n_tp / p.size)
        rec.append(n_tp / g.size)
    return float(np.mean(cov)), float(np.mean(wcov)), float(np.mean(prec)), float(np.mean(rec))


# ---------------------------------------------------------------------------
# boxes

def _check_box(box):
    lo, hi = (np.asarray(b, dtype=np.float64).reshape(3) for b in box)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
        raise ValueError(f"malformed box {box!r}")
    return lo, hi


def box_iou(box_a, box_b) -> float:
    """Volume IoU of two axis-aligned boxes given as ``(min, max)``.

    Two zero-volume boxes score 1 when identical and 0 otherwise.
    """
    lo_a, hi_a = _check_box(box_a)
    lo_b, hi_b = _check_box(box_b)
    inter = float(np.prod(np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0, None)))
    union = float(np.prod(hi_a - lo_a)) + float(np.prod(hi_b - lo_b)) - inter
    if union <= 0.0:
        return 1.0 if np.array_equal(lo_a, lo_b) and np.array_equal(hi_a, hi_b) else 0.0
    return inter / union


def gt_boxes(gt: GroundTruth, coords):
    return [extract_box(m, coords) for m in gt.instance_masks]


def box_overlaps(preds, gt: GroundTruth, coords) -> np.ndarray:
    boxes = gt_boxes(gt, coords)
    out = np.zeros((len(preds), len(boxes)))
    for r, p in enumerate(preds):
        for g, b in enumerate(boxes):
            out[r, g] = box_iou(p.box, b)
    return out


def box_ap(preds, gt: GroundTruth, coords, n_classes, thresholds=(0.5, 0.25)):
    """Mean box AP at each threshold, using the mask matching machinery."""
    if gt.n_instances == 0:
        raise ValueError("no ground-truth instances; average precision is undefined")
    overlaps = box_overlaps(preds, gt, coords)
    return tuple(average_precision(preds, gt, t, n_classes, overlaps)[1] for t in thresholds)


# ---------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap50: float
    ap25: float
    mcov: float
    mwcov: float
    mprec50: float
    mrec50: float
    box_ap50: float
    box_ap25: float
    per_class_ap: dict = field(default_factory=dict)
    notes: tuple = ()

    SCALARS = ("ap", "ap50", "ap25", "mcov", "mwcov", "mprec50", "mrec50", "box_ap50", "box_ap25")

    def flat(self) -> dict:
        """Flat ``key -> value`` view with per-class entries as ``ap50/class_3`` etc."""
        out = {k: getattr(self, k) for k in self.SCALARS}
        for c, (a, a50, a25) in sorted(self.per_class_ap.items()):
            out[f"ap/class_{c}"] = a
            out[f"ap50/class_{c}"] = a50
            out[f"ap25/class_{c}"] = a25
        return out


def evaluate(scene: Scene, preds, n_classes=None) -> EvalReport:
    gt = scene.gt
    if gt is None:
        raise ValueError("scene has no ground truth")
    if n_classes is None:
        n_classes = scene.n_classes
    if not n_classes:
        raise ValueError("number of classes is unknown; pass n_classes")
    overlaps = mask_overlaps(preds, gt)
    notes: list[str] = []
    ap, ap50, ap25, per_class = ap_suite(preds, gt, n_classes, overlaps)
    mcov, mwcov, mprec50, mrec50 = s3dis_metrics(preds, gt, n_classes, overlaps, notes=notes)
    box50, box25 = box_ap(preds, gt, scene.points.coords, n_classes)
    return EvalReport(ap, ap50, ap25, mcov, mwcov, mprec50, mrec50, box50, box25, per_class, tuple(notes))
