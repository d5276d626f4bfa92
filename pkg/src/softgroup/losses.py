"""Training losses of the point-wise and refinement heads, in float64.

Cross-entropy and binary cross-entropy take logits. Normalisers that would be
zero (no foreground points, no positive proposals) yield a loss of 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import IGNORE


@dataclass(frozen=True)
class LossReport:
    semantic: float
    offset: float
    classification: float
    mask: float
    mask_score: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.semantic + self.offset + self.classification
                           + self.mask + self.mask_score)


def _logits(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D logit array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    return x


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy(logits, labels):
    return -log_softmax(logits)[np.arange(labels.size), labels]


def semantic_loss(logits, labels) -> float:
    """Mean cross-entropy over points whose label is not ``-1``."""
    logits = _logits(logits, 2)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != logits.shape[0]:
        raise ValueError("one label per point required")
    if np.any((labels < IGNORE) | (labels >= logits.shape[1])):
        raise ValueError("semantic label out of range")
    keep = labels != IGNORE
    if not keep.any():
        raise ValueError("every point is ignored")
    return float(_cross_entropy(logits[keep], labels[keep]).mean())


def offset_loss(offsets, targets, foreground) -> float:
    """Mean l1 distance between predicted and target offsets over foreground points."""
    offsets = np.asarray(offsets, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    foreground = np.asarray(foreground, dtype=bool).reshape(-1)
    if offsets.shape != targets.shape or offsets.shape[0] != foreground.size:
        raise ValueError("offsets, targets and foreground flags must be aligned")
    n_fg = int(foreground.sum())
    if n_fg == 0:
        return 0.0
    return float(np.abs(offsets[foreground] - targets[foreground]).sum() / n_fg)


def classification_loss(logits, targets) -> float:
    """Mean cross-entropy over all proposals; background is the last class."""
    logits = _logits(logits, 2)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.size == 0:
        raise ValueError("no proposals")
    if targets.size != logits.shape[0] or np.any((targets < 0) | (targets >= logits.shape[1])):
        raise ValueError("classification targets must index the logit columns")
    return float(_cross_entropy(logits, targets).mean())


def binary_cross_entropy_with_logits(logits, targets) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


def mask_loss(mask_logits, mask_targets, positive) -> float:
    """Per-positive mean BCE, averaged over positive proposals.

    ``mask_logits[k]`` and ``mask_targets[k]`` hold one entry per point of
    proposal ``k``; entries for negatives are ignored and may be ``None``.
    """
    positive = np.asarray(positive, dtype=bool).reshape(-1)
    if not len(mask_logits) == len(mask_targets) == positive.size:
        raise ValueError("mask logits, targets and positive flags must be aligned")
    per = []
    for k in np.flatnonzero(positive):
        z = _logits(mask_logits[k], 1)
        t = np.asarray(mask_targets[k], dtype=np.float64).reshape(-1)
        if z.size != t.size or z.size == 0:
            raise ValueError(f"proposal {k}: mask logits and targets differ in length")
        per.append(binary_cross_entropy_with_logits(z, t).mean())
    return float(np.sum(per) / len(per)) if per else 0.0


def mask_score_loss(predicted, targets, positive) -> float:
    """Mean absolute error between predicted and target mask scores over positives."""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    positive = np.asarray(positive, dtype=bool).reshape(-1)
    if not predicted.size == targets.size == positive.size:
        raise ValueError("mask scores, targets and positive flags must be aligned")
    n_pos = int(positive.sum())
    if n_pos == 0:
        return 0.0
    # the l2 norm of a scalar residual
    return float(np.abs(predicted[positive] - targets[positive]).sum() / n_pos)


def total_loss(semantic, offset, classification, mask, mask_score) -> LossReport:
    parts = dict(semantic=semantic, offset=offset, classification=classification, mask=mask,
                 mask_score=mask_score)
    for name, v in parts.items():
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"{name} loss must be finite and non-negative, got {v}")
    return LossReport(**{k: float(v) for k, v in parts.items()})


def ce_logit_gradient(logits, label) -> np.ndarray:
    """Gradient of ``-log softmax(logits)[label]`` with respect to the logits."""
    z = _logits(logits, 1)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range [0, {z.size})")
    g = softmax(z)
    g[label] -= 1.0
    return g


def bce_logit_gradient(logits, targets) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * z)) - np.asarray(targets, dtype=np.float64)
