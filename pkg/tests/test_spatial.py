import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from softgroup.spatial import VoxelDownsampler, build_grid, cell_keys, query_radius, voxel_downsample


def test_single_point_cell():
    grid = build_grid([[0.01, 0.01, 0.01]], [0], 0.04)
    assert grid.cells == {(0, 0, 0): [0]}


def test_floor_arithmetic_two_cells():
    grid = build_grid([[0, 0, 0], [0.05, 0, 0]], [0, 1], 0.04)
    assert grid.cells == {(0, 0, 0): [0], (1, 0, 0): [1]}


def test_negative_coordinates_floor_down():
    grid = build_grid([[-0.01, 0, 0]], [0], 0.04)
    assert list(grid.cells) == [(-1, 0, 0)]


def test_membership_matches_brute_force(rng):
    coords = rng.uniform(-1, 1, size=(1000, 3))
    ids = np.arange(1000)
    grid = build_grid(coords, ids, 0.04)
    seen = []
    for key, members in grid.cells.items():
        for i in members:
            assert tuple(int(v) for v in np.floor(coords[i] / 0.04)) == key
            lo = np.array(key) * 0.04
            assert np.all(lo <= coords[i]) and np.all(coords[i] < lo + 0.04)
        seen += members
    assert sorted(seen) == ids.tolist()


def test_grid_errors_and_empty():
    with pytest.raises(ValueError):
        build_grid(np.zeros((1, 3)), [0], 0.0)
    with pytest.raises(ValueError):
        build_grid(np.zeros((1, 3)), [1], 0.1)
    assert len(build_grid(np.zeros((1, 3)), [], 0.1)) == 0


def test_query_examples():
    coords = np.array([[0, 0, 0], [0.05, 0, 0]])
    grid = build_grid(coords, [0, 1], 0.04)
    assert query_radius(grid, coords, coords[0], 0.04).tolist() == [0]
    with pytest.raises(ValueError):
        query_radius(grid, coords, coords[0], 0.05)


def test_query_is_strict():
    coords = np.array([[0, 0, 0], [0.5, 0, 0]])
    grid = build_grid(coords, [0, 1], 0.5)
    assert query_radius(grid, coords, coords[0], 0.5).tolist() == [0]


def test_query_matches_linear_scan(rng):
    coords = rng.uniform(0, 0.5, size=(500, 3))
    grid = build_grid(coords, np.arange(500), 0.04)
    for c in coords[:100]:
        d = coords - c
        expect = np.flatnonzero(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2 < 0.04 ** 2)
        assert query_radius(grid, coords, c, 0.04).tolist() == expect.tolist()


@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.floats(0.01, 0.2), st.floats(0.1, 1.0))
def test_query_property(seed, n, cell, frac):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-0.3, 0.3, size=(n, 3))
    # duplicates are always within radius of each other
    coords[n // 2:] = coords[: n - n // 2] if rng.random() < 0.3 else coords[n // 2:]
    ids = np.sort(rng.choice(n, size=max(1, n // 2), replace=False))
    grid = build_grid(coords, ids, cell)
    assert sorted(grid.order.tolist()) == ids.tolist()
    r = cell * frac
    center = coords[rng.integers(n)]
    d = coords[ids] - center
    expect = ids[d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2] < r * r]
    assert query_radius(grid, coords, center, r).tolist() == expect.tolist()


def test_downsample_single_voxel():
    pts = np.array([[0.001, 0.002, 0.003], [0.011, 0.012, 0.013], [0.005, 0.005, 0.005]])
    reps, mapping = voxel_downsample(pts, 0.02)
    assert reps.shape == (1, 3) and mapping.tolist() == [0, 0, 0]
    assert np.allclose(reps[0], pts.mean(axis=0), atol=1e-15)


def test_downsample_identity_on_spread_grid():
    pts = np.stack(np.meshgrid(*[np.arange(4) * 0.05 + 0.001] * 3, indexing="ij"), -1).reshape(-1, 3)
    reps, mapping = voxel_downsample(pts, 0.02)
    assert reps.shape == pts.shape
    assert np.array_equal(reps[mapping], pts)


def test_downsample_matches_group_by(rng):
    pts = rng.uniform(0, 0.2, size=(2000, 3))
    reps, mapping = voxel_downsample(pts, 0.02)
    assert reps.shape[0] <= pts.shape[0]
    groups = {}
    for i, key in enumerate(map(tuple, cell_keys(pts, 0.02).tolist())):
        groups.setdefault(key, []).append(i)
    assert len(groups) == reps.shape[0]
    for members in groups.values():
        assert len(set(mapping[members].tolist())) == 1
        assert np.allclose(reps[mapping[members[0]]], pts[members].mean(axis=0), rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        voxel_downsample(pts, -1)


def test_downsampler_estimator(rng):
    pts = rng.uniform(0, 0.2, size=(300, 3))
    est = VoxelDownsampler(voxel_size=0.05)
    assert est.get_params() == {"voxel_size": 0.05}
    out = clone(est).fit_transform(pts)
    assert np.array_equal(out, voxel_downsample(pts, 0.05)[0])
    assert est.fit(pts).mapping_.shape == (300,)
