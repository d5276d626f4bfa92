"""Deterministic synthetic scenes with a part-level semantic corruption model.

Each instance is a jittered lattice filling a random box, so neighbouring
points sit well inside the grouping bandwidth. Semantic scores are smoothed
one-hot rows; offsets point exactly at the instance centers. Corruption
relabels a contiguous slab of an instance: its points prefer a wrong class
while keeping a sub-dominant but above-threshold score for the true one.

Values are rounded to float32 so scenes survive a trip through the scene file
format bit for bit.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .grouping import DEFAULT_BANDWIDTH, DEFAULT_TAU
from .scene import GroundTruth, OffsetField, PointCloud, Scene, SemanticField

_LAYOUT, _INSTANCE, _CORRUPT, _SHUFFLE = range(4)
_MAX_PLACEMENT_TRIES = 1000
# lattice spacing cap and jitter, relative to the bandwidth / spacing
_MAX_SPACING = 0.6 * DEFAULT_BANDWIDTH
_JITTER = 0.1


@dataclass(frozen=True)
class SynthConfig:
    n_instances: int = 5
    n_classes: int = 18
    points_per_instance: tuple[int, int] = (1800, 2200)
    instance_extent: tuple[float, float] = (0.2, 0.6)
    min_separation: float = 1.0
    corruption_fraction: float = 0.0
    corrupted_true_score: float = 0.35
    corrupted_wrong_score: float = 0.45
    seed: int = 0
    label_smoothing: float = 0.1
    corrupted_instance_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "points_per_instance", tuple(int(v) for v in self.points_per_instance))
        object.__setattr__(self, "instance_extent", tuple(float(v) for v in self.instance_extent))
        lo, hi = self.points_per_instance
        if self.n_instances < 0 or self.n_classes < 1:
            raise ValueError("n_instances must be >= 0 and n_classes >= 1")
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid points_per_instance range {self.points_per_instance}")
        elo, ehi = self.instance_extent
        if not 0 < elo <= ehi:
            raise ValueError(f"invalid instance_extent range {self.instance_extent}")
        if not self.min_separation > 2 * DEFAULT_BANDWIDTH:
            raise ValueError(f"min_separation must exceed {2 * DEFAULT_BANDWIDTH} m")
        if not 0.0 <= self.corruption_fraction < 1.0:
            raise ValueError("corruption_fraction must lie in [0, 1)")
        if not DEFAULT_TAU < self.corrupted_true_score < 1.0:
            raise ValueError(f"corrupted_true_score must lie in ({DEFAULT_TAU}, 1)")
        if not 0.0 < self.corrupted_wrong_score < 1.0:
            raise ValueError("corrupted_wrong_score must lie in (0, 1)")
        if self.corrupted_true_score + self.corrupted_wrong_score > 1.0:
            raise ValueError("corrupted true + wrong scores exceed 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.corrupted_instance_fraction <= 1.0:
            raise ValueError("corrupted_instance_fraction must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


def _rng(seed, *stream):
    # counter-based generator keyed by (seed, stream, ...) so streams are independent
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _place_centers(config, rng):
    n = config.n_instances
    side = config.min_separation * 1.5 * max(1.0, np.ceil(n ** (1.0 / 3.0)))
    centers = np.zeros((0, 3))
    for _ in range(n):
        for _ in range(_MAX_PLACEMENT_TRIES):
            c = rng.uniform(0.0, side, size=3)
            if centers.shape[0] == 0 or np.min(np.linalg.norm(centers - c, axis=1)) >= config.min_separation:
                centers = np.vstack([centers, c])
                break
        else:
            raise RuntimeError(f"could not place {n} instances {config.min_separation} m apart")
    return centers


def _instance_points(center, extent, n_target, rng):
    spacing = np.cbrt(np.prod(extent) / n_target)
    if spacing > _MAX_SPACING:
        extent = extent * (_MAX_SPACING / spacing)
        spacing = _MAX_SPACING
    counts = np.maximum(1, np.rint(extent / spacing).astype(np.int64))
    axes = [(np.arange(m) - (m - 1) / 2.0) * spacing for m in counts]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    jitter = rng.uniform(-_JITTER * spacing, _JITTER * spacing, size=lattice.shape)
    return center + lattice + jitter


def synth_scene(config: SynthConfig) -> Scene:
    """Generate a clean scene: perfect offsets and smoothed one-hot scores."""
    layout = _rng(config.seed, _LAYOUT)
    centers = _place_centers(config, layout)
    n, c = config.n_instances, config.n_classes
    classes = layout.integers(0, c, size=n)
    extents = layout.uniform(*config.instance_extent, size=(n, 3))
    targets = layout.integers(config.points_per_instance[0], config.points_per_instance[1] + 1, size=n)
    base_colors = layout.uniform(0.1, 0.9, size=(n, 3))

    coords, inst_ids, colors = [], [], []
    for k in range(n):
        rng = _rng(config.seed, _INSTANCE, k)
        pts = _instance_points(centers[k], extents[k], targets[k], rng)
        coords.append(pts)
        inst_ids.append(np.full(pts.shape[0], k, dtype=np.int64))
        colors.append(np.clip(base_colors[k] + rng.normal(0.0, 0.03, size=pts.shape), 0.0, 1.0))
    coords = np.concatenate(coords) if n else np.zeros((0, 3))
    inst = np.concatenate(inst_ids) if n else np.zeros(0, dtype=np.int64)
    colors = np.concatenate(colors) if n else np.zeros((0, 3))

    perm = _rng(config.seed, _SHUFFLE).permutation(coords.shape[0])
    coords, inst, colors = _f32(coords[perm]), inst[perm], _f32(colors[perm])
    labels = classes[inst] if n else np.zeros(0, dtype=np.int64)

    gt = GroundTruth.from_labels(coords, labels, inst, instance_class=classes)
    offsets = _f32(gt.offset_targets(coords))
    scores = np.full((coords.shape[0], c), config.label_smoothing / (c - 1) if c > 1 else 0.0)
    scores[np.arange(coords.shape[0]), labels] = 1.0 - config.label_smoothing if c > 1 else 1.0
    return Scene(PointCloud(coords, colors), SemanticField(_f32(scores)), OffsetField(offsets), gt)


def corrupted_rows(config: SynthConfig, true_class, wrong_class) -> np.ndarray:
    c = config.n_classes
    rest = 1.0 - config.corrupted_true_score - config.corrupted_wrong_score
    row = np.zeros(c)
    if c > 2:
        row[:] = rest / (c - 2)
    elif rest > 1e-6:
        raise ValueError("with two classes the corrupted true and wrong scores must sum to 1")
    row[true_class] = config.corrupted_true_score
    row[wrong_class] = config.corrupted_wrong_score
    if not abs(row.sum() - 1.0) <= 1e-6 or np.any(row < 0):
        raise ValueError("corrupted scores do not form a probability row")
    return row


def corrupt_semantics(scene: Scene, config: SynthConfig) -> Scene:
    """Give a contiguous fraction of each selected instance a wrong dominant class.

    For every selected instance, the ``corruption_fraction`` of its points
    lying furthest along a random axis direction get the wrong class score
    ``corrupted_wrong_score`` and keep ``corrupted_true_score`` on the true
    class; any remainder is spread evenly over the other classes.
    """
    rho = config.corruption_fraction
    if not 0.0 <= rho < 1.0:
        raise ValueError("corruption_fraction must lie in [0, 1)")
    gt = scene.gt
    if rho == 0.0 or gt is None or gt.n_instances == 0:
        return scene
    c = scene.n_classes
    if c < 2:
        raise ValueError("corruption needs at least two classes")
    pick = _rng(config.seed, _CORRUPT)
    n_sel = int(round(config.corrupted_instance_fraction * gt.n_instances))
    selected = np.sort(pick.permutation(gt.n_instances)[:n_sel])

    scores = scene.semantic.scores.copy()
    coords = scene.points.coords
    for k in selected:
        rng = _rng(config.seed, _CORRUPT, int(k))
        members = gt.instance_masks[k]
        n_bad = int(round(rho * members.size))
        axis = int(rng.integers(3))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        true_class = int(gt.instance_class[k])
        wrong_class = int(rng.choice(np.delete(np.arange(c), true_class)))
        if n_bad == 0:
            continue
        proj = sign * coords[members, axis]
        bad = members[np.lexsort((members, -proj))[:n_bad]]
        scores[bad] = corrupted_rows(config, true_class, wrong_class)
    return dataclasses.replace(scene, semantic=SemanticField(_f32(scores)))


def make_scene(config: SynthConfig) -> Scene:
    return corrupt_semantics(synth_scene(config), config)
