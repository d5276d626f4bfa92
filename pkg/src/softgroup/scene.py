"""In-memory scene representation and per-point helpers.

Arrays are held as read-only float64 / int64 numpy arrays. Invariants are not
enforced at construction time for the scene fields so that malformed input can
be inspected with :func:`validate_scene`; proposals and refined instances are
produced by this package and are checked eagerly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from ._validation import readonly

IGNORE = -1
ROW_SUM_TOL = 1e-6
CENTER_TOL = 1e-6


def _float_array(x, ncols=None):
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim == 1 and arr.size == 0 and ncols is not None:
        arr = arr.reshape(0, ncols)
    return readonly(arr)


def _int_array(x):
    arr = np.array(x, dtype=np.int64, copy=True).reshape(-1)
    return readonly(arr)


@dataclass(frozen=True, eq=False)
class PointCloud:
    coords: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", _float_array(self.coords, 3))
        if self.colors is not None:
            object.__setattr__(self, "colors", _float_array(self.colors, 3))

    @property
    def n_points(self) -> int:
        return int(self.coords.shape[0])


@dataclass(frozen=True, eq=False)
class SemanticField:
    """Per-point class probabilities, shape (N, C)."""

    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", _float_array(self.scores))

    @property
    def n_classes(self) -> int:
        return int(self.scores.shape[1]) if self.scores.ndim == 2 else 0

    @property
    def n_points(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True, eq=False)
class OffsetField:
    offsets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offsets", _float_array(self.offsets, 3))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Ground-truth labels.

    ``instance_class[k]`` and ``instance_center[k]`` describe instance ``k``;
    instance ids are contiguous ``0..K-1`` and ``-1`` marks points that belong
    to no instance (or, for ``semantic_label``, ignored points).
    """

    semantic_label: np.ndarray
    instance_id: np.ndarray
    instance_class: np.ndarray
    instance_center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "semantic_label", _int_array(self.semantic_label))
        object.__setattr__(self, "instance_id", _int_array(self.instance_id))
        object.__setattr__(self, "instance_class", _int_array(self.instance_class))
        object.__setattr__(self, "instance_center", _float_array(self.instance_center, 3))

    @classmethod
    def from_labels(cls, coords, semantic_label, instance_id, instance_class=None):
        """Build ground truth, deriving instance centers (and classes) from the points."""
        coords = np.asarray(coords, dtype=np.float64)
        semantic_label = np.asarray(semantic_label, dtype=np.int64)
        instance_id = np.asarray(instance_id, dtype=np.int64)
        n_inst = int(instance_id.max()) + 1 if instance_id.size and instance_id.max() >= 0 else 0
        if n_inst and instance_class is None:
            first = np.full(n_inst, -1, dtype=np.int64)
            fg = np.flatnonzero(instance_id >= 0)
            # last write wins; cross-label consistency is checked by validate_scene
            first[instance_id[fg]] = semantic_label[fg]
            instance_class = first
        elif instance_class is None:
            instance_class = np.zeros(0, dtype=np.int64)
        centers = instance_centers(coords, instance_id, n_inst)
        return cls(semantic_label, instance_id, instance_class, centers)

    @property
    def n_instances(self) -> int:
        return int(self.instance_class.shape[0])

    @property
    def foreground(self) -> np.ndarray:
        return self.instance_id >= 0

    def offset_targets(self, coords) -> np.ndarray:
        """Vector from each point to its instance center; zero for non-instance points."""
        coords = np.asarray(coords, dtype=np.float64)
        out = np.zeros_like(coords)
        fg = self.instance_id >= 0
        out[fg] = self.instance_center[self.instance_id[fg]] - coords[fg]
        return out

    @cached_property
    def instance_masks(self) -> list[np.ndarray]:
        """Sorted point indices of every instance, in instance-id order."""
        fg = np.flatnonzero(self.instance_id >= 0)
        order = fg[np.argsort(self.instance_id[fg], kind="stable")]
        counts = np.bincount(self.instance_id[fg], minlength=self.n_instances)
        return [readonly(m) for m in np.split(order, np.cumsum(counts)[:-1])] if self.n_instances else []


def instance_centers(coords, instance_id, n_instances) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    centers = np.zeros((n_instances, 3))
    if n_instances == 0:
        return centers
    fg = instance_id >= 0
    counts = np.bincount(instance_id[fg], minlength=n_instances).astype(np.float64)
    for d in range(3):
        centers[:, d] = np.bincount(instance_id[fg], weights=coords[fg, d], minlength=n_instances)
    nonzero = counts > 0
    centers[nonzero] /= counts[nonzero, None]
    return centers


@dataclass(frozen=True, eq=False)
class Scene:
    points: PointCloud
    semantic: SemanticField | None = None
    offsets: OffsetField | None = None
    gt: GroundTruth | None = None

    @property
    def n_points(self) -> int:
        return self.points.n_points

    @property
    def n_classes(self) -> int:
        return self.semantic.n_classes if self.semantic is not None else 0

    def shifted_coords(self) -> np.ndarray:
        if self.offsets is None:
            raise ValueError("scene has no offset field")
        return shift_points(self.points.coords, self.offsets.offsets)


@dataclass(frozen=True, eq=False)
class Proposal:
    point_ids: np.ndarray
    source_class: int

    def __post_init__(self):
        ids = _int_array(self.point_ids)
        if ids.size == 0:
            raise ValueError("proposal must be non-empty")
        if ids.size > 1 and np.any(np.diff(ids) <= 0):
            raise ValueError("proposal point_ids must be strictly increasing")
        if ids[0] < 0:
            raise ValueError("proposal point_ids must be non-negative")
        object.__setattr__(self, "point_ids", ids)
        object.__setattr__(self, "source_class", int(self.source_class))

    def __len__(self):
        return int(self.point_ids.size)

    def __eq__(self, other):
        if not isinstance(other, Proposal):
            return NotImplemented
        return self.source_class == other.source_class and np.array_equal(self.point_ids, other.point_ids)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RefinedInstance:
    """A scored instance mask. ``category == n_classes`` denotes background."""

    mask: np.ndarray
    category: int
    class_score: float
    mask_score: float
    box: tuple[np.ndarray, np.ndarray]
    confidence: float = field(init=False)

    def __post_init__(self):
        mask = _int_array(self.mask)
        if mask.size > 1 and np.any(np.diff(mask) <= 0):
            raise ValueError("mask must be sorted and unique")
        for name in ("class_score", "mask_score"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        lo, hi = (readonly(np.array(b, dtype=np.float64).reshape(3)) for b in self.box)
        if np.any(lo > hi):
            raise ValueError("box min must not exceed box max")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "category", int(self.category))
        object.__setattr__(self, "box", (lo, hi))
        object.__setattr__(self, "confidence", self.class_score * self.mask_score)

    def __eq__(self, other):
        if not isinstance(other, RefinedInstance):
            return NotImplemented
        return (
            self.category == other.category
            and self.class_score == other.class_score
            and self.mask_score == other.mask_score
            and np.array_equal(self.mask, other.mask)
            and all(np.array_equal(a, b) for a, b in zip(self.box, other.box))
        )

    __hash__ = None


class Violation(NamedTuple):
    field: str
    index: int | None
    reason: str


def validate_scene(scene: Scene) -> list[Violation]:
    """Check every scene invariant and return the violations found.

    An empty list means the scene is valid. Violations are reported as data;
    this function does not raise on malformed content.
    """
    out: list[Violation] = []
    coords = scene.points.coords
    if coords.ndim != 2 or coords.shape[1] != 3:
        return [Violation("points.coords", None, f"expected shape (N, 3), got {coords.shape}")]
    n = coords.shape[0]
    for i in np.flatnonzero(~np.isfinite(coords).all(axis=1)):
        out.append(Violation("points.coords", int(i), "non-finite coordinate"))

    colors = scene.points.colors
    if colors is not None:
        if colors.shape != (n, 3):
            out.append(Violation("points.colors", None, f"expected shape ({n}, 3), got {colors.shape}"))
        else:
            bad = ~((colors >= 0.0) & (colors <= 1.0)).all(axis=1)
            for i in np.flatnonzero(bad):
                out.append(Violation("points.colors", int(i), "color component outside [0, 1]"))

    n_classes = None
    if scene.semantic is not None:
        s = scene.semantic.scores
        if s.ndim != 2 or s.shape[0] != n or s.shape[1] < 1:
            out.append(Violation("semantic.scores", None, f"expected shape ({n}, C), got {s.shape}"))
        else:
            n_classes = s.shape[1]
            in_range = ((s >= 0.0) & (s <= 1.0)).all(axis=1)
            for i in np.flatnonzero(~in_range):
                out.append(Violation("semantic.scores", int(i), "score outside [0, 1]"))
            sums = s.sum(axis=1)
            for i in np.flatnonzero(in_range & ~(np.abs(sums - 1.0) <= ROW_SUM_TOL)):
                out.append(Violation("semantic.scores", int(i), f"row sums to {sums[i]:.9g}, expected 1"))

    if scene.offsets is not None:
        o = scene.offsets.offsets
        if o.shape != (n, 3):
            out.append(Violation("offsets.offsets", None, f"expected shape ({n}, 3), got {o.shape}"))
        else:
            for i in np.flatnonzero(~np.isfinite(o).all(axis=1)):
                out.append(Violation("offsets.offsets", int(i), "non-finite offset"))

    if scene.gt is not None:
        out.extend(_validate_gt(scene.gt, coords, n, n_classes))
    return out


def _validate_gt(gt: GroundTruth, coords, n, n_classes):
    out = []
    sem, inst = gt.semantic_label, gt.instance_id
    k = gt.n_instances
    if sem.shape != (n,):
        out.append(Violation("gt.semantic_label", None, f"expected length {n}, got {sem.shape[0]}"))
    if inst.shape != (n,):
        out.append(Violation("gt.instance_id", None, f"expected length {n}, got {inst.shape[0]}"))
    if gt.instance_center.shape != (k, 3):
        out.append(Violation("gt.instance_center", None, f"expected shape ({k}, 3)"))
    if out:
        return out

    upper = n_classes if n_classes is not None else np.iinfo(np.int64).max
    for i in np.flatnonzero((sem < IGNORE) | (sem >= upper)):
        out.append(Violation("gt.semantic_label", int(i), f"label {sem[i]} out of range"))
    for i in np.flatnonzero((inst < IGNORE) | (inst >= k)):
        out.append(Violation("gt.instance_id", int(i), f"instance id {inst[i]} out of range"))
    for j in np.flatnonzero((gt.instance_class < 0) | (gt.instance_class >= upper)):
        out.append(Violation("gt.instance_class", int(j), f"class {gt.instance_class[j]} out of range"))
    if out:
        return out

    fg = np.flatnonzero(inst >= 0)
    mismatch = fg[sem[fg] != gt.instance_class[inst[fg]]]
    for i in mismatch:
        out.append(Violation(
            "gt.semantic_label", int(i),
            f"label {sem[i]} differs from class {gt.instance_class[inst[i]]} of instance {inst[i]}",
        ))
    counts = np.bincount(inst[fg], minlength=k)
    means = instance_centers(coords, inst, k)
    for j in range(k):
        if counts[j] == 0:
            out.append(Violation("gt.instance_id", int(j), "instance has no points"))
        elif not np.all(np.abs(means[j] - gt.instance_center[j]) <= CENTER_TOL):
            out.append(Violation("gt.instance_center", int(j), "center differs from mean of instance points"))
    return out


def shift_points(coords, offsets) -> np.ndarray:
    """Move every point by its offset vector."""
    coords = np.asarray(coords, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if coords.shape != offsets.shape:
        raise ValueError(f"coords and offsets differ in shape: {coords.shape} vs {offsets.shape}")
    return coords + offsets


def hard_labels(field) -> np.ndarray:
    """Argmax class per point; ties go to the lowest class index."""
    scores = field.scores if isinstance(field, SemanticField) else np.asarray(field, dtype=np.float64)
    if scores.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(scores, axis=1).astype(np.int64)
