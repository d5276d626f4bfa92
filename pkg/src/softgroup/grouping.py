"""Bottom-up grouping of shifted points into instance proposals.

Soft grouping slices one point subset per class (points whose score for that
class exceeds ``tau``, so a point may sit in several subsets) and links points
of a subset that lie closer than ``bandwidth`` after shifting by their offsets.
Hard grouping is the argmax baseline: every point joins the subset of its
single predicted class.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_index_array, check_min_points, check_open_unit, check_positive
from .scene import Proposal, Scene, SemanticField, hard_labels
from .spatial import build_grid, forward_offsets

THREADS_ENV = "SOFTGROUP_NUM_THREADS"

DEFAULT_TAU = 0.2
DEFAULT_BANDWIDTH = 0.04
DEFAULT_MIN_POINTS = 50

# cap on candidate point pairs materialised at once during exact checks
_PAIR_CHUNK = 1 << 21
# linking cells are half a bandwidth wide (diagonal 0.87 b, so every cell is a
# clique); the slack keeps cells three apart beyond reach despite rounding in floor()
_CELL_FRACTION = 0.5 * (1.0 + 1e-9)
_REACH = 2


@dataclass(frozen=True)
class GroupingConfig:
    tau: float = DEFAULT_TAU
    bandwidth: float = DEFAULT_BANDWIDTH
    min_points: int = DEFAULT_MIN_POINTS
    n_classes: int | None = None

    def __post_init__(self):
        check_open_unit(self.tau, "tau")
        check_positive(self.bandwidth, "bandwidth")
        check_min_points(self.min_points)
        if self.n_classes is not None and (int(self.n_classes) != self.n_classes or self.n_classes < 1):
            raise ValueError(f"n_classes must be a positive integer, got {self.n_classes!r}")


def class_subset(field: SemanticField, class_j, tau) -> np.ndarray:
    """Ids of points whose score for ``class_j`` is strictly greater than ``tau``."""
    scores = field.scores if isinstance(field, SemanticField) else np.asarray(field, dtype=np.float64)
    if not 0 <= class_j < scores.shape[1]:
        raise ValueError(f"class {class_j} out of range [0, {scores.shape[1]})")
    return np.flatnonzero(scores[:, class_j] > tau)


def union_find_labels(n, a, b, parent=None) -> np.ndarray:
    """Root of every node after uniting the endpoints of each edge ``(a[k], b[k])``.

    Union by minimum index with full path compression, applied to all edges
    at once; the root of each set is its smallest member. Pass the result back
    as ``parent`` to add more edges incrementally.
    """
    parent = np.arange(n, dtype=np.int64) if parent is None else parent.copy()
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    while True:
        while True:
            grand = parent[parent]
            if np.array_equal(grand, parent):
                break
            parent = grand
        ra, rb = parent[a], parent[b]
        live = ra != rb
        if not live.any():
            return parent
        a, b, ra, rb = a[live], b[live], ra[live], rb[live]
        np.minimum.at(parent, np.maximum(ra, rb), np.minimum(ra, rb))


def _expand(starts, counts):
    """Flatten ranges ``starts[p] + arange(counts[p])`` -> (range index, value)."""
    total = int(counts.sum())
    owner = np.repeat(np.arange(counts.size), counts)
    first = np.cumsum(counts) - counts
    return owner, starts[owner] + (np.arange(total) - first[owner])


def _cross_pairs(starts_a, counts_a, starts_b, counts_b):
    """All (i, j) position pairs between range a[p] and range b[p], with p."""
    n = counts_a * counts_b
    owner = np.repeat(np.arange(n.size), n)
    local = np.arange(int(n.sum())) - (np.cumsum(n) - n)[owner]
    cb = counts_b[owner]
    return owner, starts_a[owner] + local // cb, starts_b[owner] + local % cb


def _sq(d):
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def _chunks(cost):
    """Split item indices into consecutive runs whose summed cost stays bounded."""
    csum = np.cumsum(cost)
    start = 0
    while start < cost.size:
        base = csum[start - 1] if start else 0
        stop = max(int(np.searchsorted(csum, base + _PAIR_CHUNK, side="right")), start + 1)
        yield np.arange(start, stop)
        start = stop


def _group_argmin(owner, values, counts):
    """Position of the smallest value in each owner-contiguous group (all non-empty)."""
    first = np.cumsum(counts) - counts
    best = np.minimum.reduceat(values, first)
    cand = np.flatnonzero(values == best[owner])
    return cand[np.searchsorted(owner[cand], np.arange(counts.size))]


class _Linker:
    """Collects edges whose transitive closure is the ``dist < bandwidth`` relation.

    Points are bucketed into cells of side ``bandwidth / 2``, so the points of
    a cell are pairwise linked whenever the cell's bounding box is (it always
    is, up to rounding). Neighbouring cell pairs are classified by bounding
    boxes: linked outright when the farthest box corners are within range,
    skipped when the nearest are not, and otherwise resolved by looking for a
    witness pair. Pairs already joined through other cells are never checked.
    """

    def __init__(self, pts, bandwidth):
        self.pts = pts
        self.b2 = bandwidth * bandwidth
        grid = build_grid(pts, np.arange(pts.shape[0]), bandwidth * _CELL_FRACTION)
        self.grid = grid
        self.order, self.starts, self.counts = grid.order, grid.starts, grid.counts
        self.first = self.order[self.starts]
        cell_pts = pts[self.order]
        self.lo = np.minimum.reduceat(cell_pts, self.starts, axis=0)
        self.hi = np.maximum.reduceat(cell_pts, self.starts, axis=0)
        self.tight = _sq(self.hi - self.lo) < self.b2
        self.src, self.dst = [], []

    def add(self, i, j):
        self.src.append(i)
        self.dst.append(j)

    def edges(self):
        if not self.src:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(self.src), np.concatenate(self.dst)

    def near_pairs(self, ca, cb):
        """Every linked point pair between cells ``ca[p]`` and ``cb[p]``, plus the owner p."""
        st, ct = self.starts, self.counts
        owner, i, j = _cross_pairs(st[ca], ct[ca], st[cb], ct[cb])
        i, j = self.order[i], self.order[j]
        near = _sq(self.pts[i] - self.pts[j]) < self.b2
        return owner[near], i[near], j[near]

    def link_cells(self):
        st, ct, order = self.starts, self.counts, self.order
        tight = self.tight
        # inside cells
        entry_tight = tight[self.grid.point_cells]
        self.add(order[entry_tight], order[st[self.grid.point_cells[entry_tight]]])
        loose = np.flatnonzero(~tight & (ct > 1))
        for chunk in _chunks(ct[loose] ** 2):
            c = loose[chunk]
            _, i, j = self.near_pairs(c, c)
            self.add(i, j)

        ca, cb = self.candidate_pairs()
        lo, hi = self.lo, self.hi
        upper = _sq(np.maximum(np.abs(hi[cb] - lo[ca]), np.abs(hi[ca] - lo[cb])))
        full = upper < self.b2
        self.link_full(ca[full], cb[full])
        ca, cb = self.unjoined(ca[~full], cb[~full])
        ca, cb = self.witness(ca, cb)
        self.resolve(ca, cb)

    def unjoined(self, ca, cb, parent=None):
        """Drop cell pairs whose (clique) cells are already in one component."""
        if parent is None:
            parent = union_find_labels(self.pts.shape[0], *self.edges())
        open_ = (parent[self.first[ca]] != parent[self.first[cb]]) | ~self.tight[ca] | ~self.tight[cb]
        return ca[open_], cb[open_]

    def candidate_pairs(self):
        grid, lo, hi = self.grid, self.lo, self.hi
        pa, pb = [], []
        for off in forward_offsets(_REACH):
            nb = grid.find_cells(grid.keys + off)
            ca = np.flatnonzero(nb >= 0)
            cb = nb[ca]
            gap = np.maximum(0.0, np.maximum(lo[cb] - hi[ca], lo[ca] - hi[cb]))
            keep = _sq(gap) < self.b2
            pa.append(ca[keep])
            pb.append(cb[keep])
        return np.concatenate(pa), np.concatenate(pb)

    def link_full(self, ca, cb):
        both = self.tight[ca] & self.tight[cb]
        self.add(self.first[ca[both]], self.first[cb[both]])
        ca, cb = ca[~both], cb[~both]
        if ca.size:
            owner, pos = _expand(self.starts[ca], self.counts[ca])
            self.add(self.order[pos], self.first[cb[owner]])
            owner, pos = _expand(self.starts[cb], self.counts[cb])
            self.add(self.order[pos], self.first[ca[owner]])

    def witness(self, ca, cb):
        """Test one candidate pair per cell pair; return the pairs still open.

        The candidate is the point of A nearest B's centroid and its nearest
        point in B. When A or B is a single point this is the exact answer.
        """
        if ca.size == 0:
            return ca, cb
        st, ct, pts, order = self.starts, self.counts, self.pts, self.order
        centroid_b = 0.5 * (self.lo[cb] + self.hi[cb])
        owner, pos = _expand(st[ca], ct[ca])
        a_star = order[pos[_group_argmin(owner, _sq(pts[order[pos]] - centroid_b[owner]), ct[ca])]]
        owner, pos = _expand(st[cb], ct[cb])
        d = _sq(pts[order[pos]] - pts[a_star[owner]])
        best = _group_argmin(owner, d, ct[cb])
        hit = d[best] < self.b2
        self.add(a_star[hit], order[pos[best[hit]]])
        exact = (ct[ca] == 1) | (ct[cb] == 1)
        keep = ~hit & ~exact
        return ca[keep], cb[keep]

    def resolve(self, ca, cb):
        """Exact checks, in bounded rounds, on pairs not yet known to be joined."""
        n = self.pts.shape[0]
        src, dst = self.edges()
        parent = union_find_labels(n, src, dst)
        # cheapest checks first
        rank = np.argsort(self.counts[ca] * self.counts[cb], kind="stable")
        ca, cb = ca[rank], cb[rank]
        while ca.size:
            ca, cb = self.unjoined(ca, cb, parent)
            if ca.size == 0:
                break
            batch = next(_chunks(self.counts[ca] * self.counts[cb]))
            _, i, j = self.near_pairs(ca[batch], cb[batch])
            self.add(i, j)
            parent = union_find_labels(n, i, j, parent)
            ca, cb = ca[batch.size:], cb[batch.size:]


def connected_components(ids, shifted_coords, bandwidth) -> list[np.ndarray]:
    """Partition ``ids`` into maximal groups linked by ``dist < bandwidth``.

    Each component is returned sorted; components are ordered by their
    smallest member id.
    """
    bandwidth = check_positive(bandwidth, "bandwidth")
    coords = np.asarray(shifted_coords, dtype=np.float64)
    ids = np.unique(check_index_array(ids, coords.shape[0]))
    if ids.size == 0:
        return []
    linker = _Linker(coords[ids], bandwidth)
    linker.link_cells()
    src, dst = linker.edges()
    root = union_find_labels(ids.size, src, dst)
    # roots are component minima, so a stable sort by root keeps members ascending
    perm = np.argsort(root, kind="stable")
    cut = np.flatnonzero(np.diff(root[perm])) + 1
    return [ids[g] for g in np.split(perm, cut)]


def _resolve_jobs(n_jobs):
    if n_jobs is None:
        n_jobs = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(n_jobs))


def _check_scene(scene: Scene, config: GroupingConfig):
    if scene.semantic is None or scene.offsets is None:
        raise ValueError("grouping needs a scene with semantic scores and offsets")
    n_classes = scene.semantic.n_classes
    if config.n_classes is not None and config.n_classes != n_classes:
        raise ValueError(f"config expects {config.n_classes} classes, scene has {n_classes}")
    if scene.semantic.n_points != scene.n_points or scene.offsets.offsets.shape != (scene.n_points, 3):
        raise ValueError("semantic/offset fields do not match the point count")
    return n_classes


def _group(scene, config, subsets, n_jobs):
    shifted = scene.shifted_coords()

    def run(j):
        comps = connected_components(subsets(j), shifted, config.bandwidth)
        return [Proposal(c, j) for c in comps if c.size >= config.min_points]

    classes = range(scene.semantic.n_classes)
    jobs = _resolve_jobs(n_jobs)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            per_class = list(pool.map(run, classes))
    else:
        per_class = [run(j) for j in classes]
    return [p for props in per_class for p in props]


def soft_group(scene: Scene, config: GroupingConfig = GroupingConfig(), n_jobs=None) -> list[Proposal]:
    """Score-threshold grouping; proposals ordered by (source_class, min id)."""
    _check_scene(scene, config)
    field = scene.semantic
    return _group(scene, config, lambda j: class_subset(field, j, config.tau), n_jobs)


def hard_group(scene: Scene, config: GroupingConfig = GroupingConfig(), n_jobs=None) -> list[Proposal]:
    """Argmax-label grouping with the same linking and size filter as :func:`soft_group`."""
    _check_scene(scene, config)
    labels = hard_labels(scene.semantic)
    return _group(scene, config, lambda j: np.flatnonzero(labels == j), n_jobs)


class SoftGrouping(BaseEstimator):
    """Estimator interface to :func:`soft_group`.

    Parameters
    ----------
    tau : float, default=0.2
        Score threshold; a point joins the subset of every class it scores above.
    bandwidth : float, default=0.04
        Linking distance in meters between shifted points.
    min_points : int, default=50
        Components smaller than this are discarded.
    n_jobs : int or None
        Threads used across classes. ``None`` reads ``SOFTGROUP_NUM_THREADS``.

    Attributes
    ----------
    proposals_ : list of Proposal
    """

    _grouper = staticmethod(soft_group)

    def __init__(self, tau=DEFAULT_TAU, bandwidth=DEFAULT_BANDWIDTH, min_points=DEFAULT_MIN_POINTS, n_jobs=None):
        self.tau = tau
        self.bandwidth = bandwidth
        self.min_points = min_points
        self.n_jobs = n_jobs

    def fit(self, scene, y=None):
        config = GroupingConfig(self.tau, self.bandwidth, self.min_points)
        self.proposals_ = self._grouper(scene, config, n_jobs=self.n_jobs)
        self.n_proposals_ = len(self.proposals_)
        return self

    def fit_predict(self, scene, y=None):
        return self.fit(scene).proposals_


class HardGrouping(SoftGrouping):
    """Argmax baseline; ``tau`` is accepted for API symmetry and ignored."""

    _grouper = staticmethod(hard_group)
