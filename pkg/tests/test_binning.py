import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsgaussian.binning import (
    UNBOUNDED, PairList, build_pairs, depth_sort_tile, dpes_cull, dpes_cull_pairs, sort_pairs,
)
from lsgaussian.preprocess import ProjectedSet, RenderConfig, TileGrid, project_set
from lsgaussian.scene import generate_synthetic_scene, look_at

from ._support import splat

GRID = TileGrid(8, 8)


def scene_pairs(mode="two_stage", seed=3, count=400, opacity_cap=None):
    gset = generate_synthetic_scene(seed, count, 2.0)
    if opacity_cap is not None:
        gset.opacities = np.minimum(gset.opacities, opacity_cap)
    pose = look_at((0, 0, -2.5), (0, 0, 0), width=128, height=128)
    ps = project_set(gset, pose, RenderConfig())
    return ps, build_pairs(ps, GRID, RenderConfig(intersection_mode=mode))


def test_empty():
    empty = ProjectedSet.from_projected([])
    pl = build_pairs(empty, GRID, RenderConfig())
    assert pl.total_pairs == 0 and len(pl.tile_counts()) == GRID.num_tiles


def test_two_tile_splat():
    pg = splat((16.0, 8.0), np.diag([2.0, 2.0]))
    pl = build_pairs(ProjectedSet.from_projected([pg]), GRID, RenderConfig())
    assert pl.total_pairs == 2
    assert [t for t in range(GRID.num_tiles) if pl.tile_counts()[t]] == [0, 1]


def test_accounting_identity_and_no_duplicates():
    for mode in ("aabb3sigma", "tight", "two_stage", "exact"):
        _, pl = scene_pairs(mode)
        assert pl.total_pairs == int(pl.tile_counts().sum())
        for t in range(pl.num_tiles):
            ids = [i for i, _ in pl.tile(t)]
            assert len(ids) == len(set(ids))


def test_stable_insertion_order():
    ps, pl = scene_pairs()
    for t in range(pl.num_tiles):
        s, e = pl.offsets[t], pl.offsets[t + 1]
        assert np.all(np.diff(pl.rows[s:e]) > 0)


def test_mode_ordering_low_opacity():
    caps = {}
    for mode in ("aabb3sigma", "two_stage", "exact"):
        caps[mode] = scene_pairs(mode, count=1000, opacity_cap=0.353)[1].total_pairs
    assert caps["exact"] <= caps["two_stage"] <= caps["aabb3sigma"]


def test_exact_never_exceeds_two_stage():
    for seed in range(3):
        assert scene_pairs("exact", seed)[1].total_pairs <= scene_pairs("two_stage", seed)[1].total_pairs


def test_active_tiles_restrict_emission():
    ps, full = scene_pairs()
    active = np.zeros(GRID.num_tiles, dtype=bool)
    active[[3, 10, 40]] = True
    part = build_pairs(ps, GRID, RenderConfig(), active)
    assert part.total_pairs == sum(full.tile_counts()[[3, 10, 40]])
    assert part.counts_by_stage["emitted"] == part.total_pairs
    assert part.counts_by_stage["stage2_all_tiles"] == full.total_pairs


# ---------------------------------------------------------------- sorting

def test_sort_basic():
    assert depth_sort_tile([("a", 3.0), ("b", 1.0), ("c", 2.0)]) == [("b", 1.0), ("c", 2.0), ("a", 3.0)]


def test_sort_tie_break():
    assert [i for i, _ in depth_sort_tile([(9, 1.0), (4, 1.0)])] == [4, 9]


def test_sort_nan_asserted():
    with pytest.raises(AssertionError):
        depth_sort_tile([(1, float("nan"))])


def test_sort_pairs_matches_oracle_10k():
    rng = np.random.default_rng(0)
    n = 10_000
    tile = rng.integers(0, 16, n)
    ids = rng.integers(0, 3000, n)
    depth = np.round(rng.uniform(0.5, 5, n), 2)  # force ties
    pl = sort_pairs(PairList.from_arrays(16, tile, np.arange(n), ids, depth))
    for t in range(16):
        sel = tile == t
        oracle = sorted(zip(ids[sel].tolist(), depth[sel].tolist()), key=lambda p: (p[1], p[0]))
        assert pl.tile(t) == oracle


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 50), st.floats(0.1, 10)), max_size=60))
def test_sort_is_permutation(items):
    tile = np.array([i[0] for i in items], dtype=np.int64)
    ids = np.array([i[1] for i in items], dtype=np.int64)
    d = np.array([i[2] for i in items], dtype=np.float64)
    pl = PairList.from_arrays(4, tile, np.arange(len(items)), ids, d)
    out = sort_pairs(pl)
    for t in range(4):
        assert sorted(out.tile(t)) == sorted(pl.tile(t))
        depths = [x for _, x in out.tile(t)]
        assert depths == sorted(depths)


# ---------------------------------------------------------------- depth culling

def test_dpes_unbounded_identity():
    pairs = [(1, 5.0), (2, 1.0)]
    assert dpes_cull(pairs, UNBOUNDED) == pairs


def test_dpes_bound():
    assert dpes_cull([(0, 1.0), (1, 2.0), (2, 3.0)], 2.0) == [(0, 1.0), (1, 2.0)]


def test_dpes_pairs_matches_per_tile():
    ps, pl = scene_pairs()
    rng = np.random.default_rng(4)
    bounds = rng.uniform(1.5, 3.5, pl.num_tiles)
    bounds[::5] = UNBOUNDED
    out = dpes_cull_pairs(pl, bounds)
    for t in range(pl.num_tiles):
        assert out.tile(t) == dpes_cull(pl.tile(t), bounds[t])
        removed = set(pl.tile(t)) - set(out.tile(t))
        assert all(d > bounds[t] for _, d in removed)
