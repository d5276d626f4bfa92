"""Uniform voxel hash grid for radius queries, and voxel downsampling."""
from __future__ import annotations

import itertools

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_coords, check_index_array, check_positive

# the 26 neighbours plus the cell itself
NEIGHBOR_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)

_PACK_LIMIT = 2**62


def forward_offsets(reach):
    """Cell offsets within ``reach`` that are lexicographically positive."""
    span = range(-reach, reach + 1)
    return np.array([o for o in itertools.product(span, repeat=3) if o > (0, 0, 0)], dtype=np.int64)


def cell_keys(coords, cell_size) -> np.ndarray:
    return np.floor(np.asarray(coords, dtype=np.float64) / cell_size).astype(np.int64)


class VoxelHashGrid:
    """Points bucketed by ``floor(coord / cell_size)``.

    Storage is a CSR layout over the occupied cells: ``keys[c]`` is the integer
    key of cell ``c`` (cells sorted lexicographically) and
    ``order[starts[c]:starts[c] + counts[c]]`` are its point ids, ascending.
    """

    def __init__(self, cell_size, keys, starts, counts, order, point_cells):
        self.cell_size = cell_size
        self.keys = keys
        self.starts = starts
        self.counts = counts
        self.order = order
        # cell index of each entry of ``order``
        self.point_cells = point_cells
        self._lo = keys.min(axis=0) if len(keys) else np.zeros(3, dtype=np.int64)
        span = (keys.max(axis=0) + 1 - self._lo) if len(keys) else np.ones(3, dtype=np.int64)
        self._span = span.astype(np.int64)
        self._packed = None
        if float(np.prod(self._span.astype(np.float64))) < _PACK_LIMIT:
            self._packed = self._pack(keys)
        else:
            self._lookup = {tuple(k): c for c, k in enumerate(keys.tolist())}

    def __len__(self):
        return int(self.order.size)

    @property
    def n_cells(self) -> int:
        return int(self.keys.shape[0])

    @property
    def cells(self) -> dict[tuple[int, int, int], list[int]]:
        return {
            tuple(int(v) for v in k): self.order[s:s + c].tolist()
            for k, s, c in zip(self.keys, self.starts, self.counts)
        }

    def _pack(self, keys):
        k = keys - self._lo
        return (k[:, 0] * self._span[1] + k[:, 1]) * self._span[2] + k[:, 2]

    def find_cells(self, keys) -> np.ndarray:
        """Cell index for each key, or -1 where the cell is unoccupied."""
        keys = np.atleast_2d(np.asarray(keys, dtype=np.int64))
        out = np.full(keys.shape[0], -1, dtype=np.int64)
        if self.n_cells == 0:
            return out
        if self._packed is None:
            for i, k in enumerate(map(tuple, keys.tolist())):
                out[i] = self._lookup.get(k, -1)
            return out
        inside = np.all((keys >= self._lo) & (keys < self._lo + self._span), axis=1)
        packed = self._pack(keys[inside])
        pos = np.searchsorted(self._packed, packed)
        pos_c = np.minimum(pos, self.n_cells - 1)
        hit = self._packed[pos_c] == packed
        res = np.full(packed.shape[0], -1, dtype=np.int64)
        res[hit] = pos_c[hit]
        out[inside] = res
        return out

    def cell_members(self, c) -> np.ndarray:
        return self.order[self.starts[c]:self.starts[c] + self.counts[c]]


def build_grid(coords, point_ids, cell_size) -> VoxelHashGrid:
    """Bucket ``coords[point_ids]`` into cubic cells of side ``cell_size``."""
    cell_size = check_positive(cell_size, "cell_size")
    coords = np.asarray(coords, dtype=np.float64)
    point_ids = check_index_array(point_ids, coords.shape[0], "point_ids")
    if point_ids.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return VoxelHashGrid(cell_size, np.zeros((0, 3), dtype=np.int64), empty, empty, empty, empty)
    keys = cell_keys(coords[point_ids], cell_size)
    # sort by (cell key, point id)
    perm = np.lexsort((point_ids, keys[:, 2], keys[:, 1], keys[:, 0]))
    keys_sorted = keys[perm]
    new_cell = np.ones(perm.size, dtype=bool)
    new_cell[1:] = np.any(keys_sorted[1:] != keys_sorted[:-1], axis=1)
    starts = np.flatnonzero(new_cell)
    counts = np.diff(np.append(starts, perm.size))
    point_cells = np.cumsum(new_cell) - 1
    return VoxelHashGrid(cell_size, keys_sorted[starts], starts, counts, point_ids[perm], point_cells)


def query_radius(grid: VoxelHashGrid, coords, center, r) -> np.ndarray:
    """Indexed points strictly closer than ``r`` to ``center``, ascending.

    ``r`` may not exceed the grid cell size, so the 3x3x3 block of cells
    around ``center`` holds every candidate.
    """
    r = check_positive(r, "r")
    if r > grid.cell_size:
        raise ValueError(f"radius {r} exceeds grid cell size {grid.cell_size}")
    coords = np.asarray(coords, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64).reshape(3)
    cells = grid.find_cells(cell_keys(center, grid.cell_size) + NEIGHBOR_OFFSETS)
    cells = cells[cells >= 0]
    if cells.size == 0:
        return np.zeros(0, dtype=np.int64)
    cand = np.concatenate([grid.cell_members(c) for c in cells])
    d = coords[cand] - center
    sq = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    return np.sort(cand[sq < r * r])


def voxel_downsample(coords, voxel_size):
    """Replace the points of each occupied voxel with their mean.

    Returns
    -------
    representatives : ndarray of shape (M, 3)
        One point per occupied voxel, voxels in lexicographic key order.
    mapping : ndarray of shape (N,)
        Index of the representative of each input point.
    """
    voxel_size = check_positive(voxel_size, "voxel_size")
    coords = check_coords(coords)
    if coords.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    _, mapping = np.unique(cell_keys(coords, voxel_size), axis=0, return_inverse=True)
    mapping = mapping.reshape(-1).astype(np.int64)
    m = int(mapping.max()) + 1
    counts = np.bincount(mapping, minlength=m).astype(np.float64)
    reps = np.stack([np.bincount(mapping, weights=coords[:, d], minlength=m) for d in range(3)], axis=1)
    return reps / counts[:, None], mapping


class VoxelDownsampler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`voxel_downsample`.

    ``fit`` records the point-to-voxel mapping of the training cloud in
    ``mapping_``; ``transform`` returns the voxel representatives of its input.
    """

    def __init__(self, voxel_size=0.02):
        self.voxel_size = voxel_size

    def fit(self, X, y=None):
        self.representatives_, self.mapping_ = voxel_downsample(X, self.voxel_size)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "mapping_")
        return voxel_downsample(X, self.voxel_size)[0]
