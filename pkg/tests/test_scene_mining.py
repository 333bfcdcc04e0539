import io
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoigcn.errors import InputError
from hoigcn.pose_data import NUM_KEYPOINTS, RIGHT_WRIST, PoseFrame
from oracles import bfs_components, naive_dbscan
from hoigcn.scene_mining import (
    ANY_VIDEO, Heatmap, InteractionArea, areas_for, areas_to_json, build_heatmap, dbscan_cluster,
    extract_hotspot_areas, mine_areas_by_video, mine_interaction_areas, read_areas_json, write_heatmap_csv,
)


# ------------------------------------------------------------------ dbscan


def test_two_blobs():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal((100, 100), 5, (30, 2)), rng.normal((300, 100), 5, (30, 2))])
    lab = dbscan_cluster(pts, eps=15, min_pts=5)
    assert lab.num_clusters == 2 and (lab.labels >= 0).all()
    assert len(set(lab.labels[:30])) == 1 and len(set(lab.labels[30:])) == 1


def test_identical_points_form_one_cluster():
    lab = dbscan_cluster(np.full((7, 2), 3.0), eps=1, min_pts=7)
    assert lab.labels.tolist() == [0] * 7


def test_sparse_points_are_noise():
    pts = np.array([[0, 0], [100, 0], [0, 100], [100, 100]], dtype=float)
    assert dbscan_cluster(pts, eps=15, min_pts=2).labels.tolist() == [-1] * 4


def test_empty_input():
    lab = dbscan_cluster(np.zeros((0, 2)), eps=5, min_pts=3)
    assert lab.labels.size == 0 and lab.num_clusters == 0


def test_neighborhood_is_inclusive():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert dbscan_cluster(pts, eps=5.0, min_pts=2).labels.tolist() == [0, 0]


@pytest.mark.parametrize("eps, min_pts", [(0, 3), (-1, 3), (5, 0)])
def test_rejects_bad_params(eps, min_pts):
    with pytest.raises(InputError):
        dbscan_cluster(np.zeros((3, 2)), eps, min_pts)


def test_rejects_non_finite():
    with pytest.raises(InputError):
        dbscan_cluster(np.array([[0.0, np.nan]]), 5, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 120), st.floats(2, 40), st.integers(1, 8))
def test_matches_naive_reference(seed, n, eps, min_pts):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 300, (3, 2))
    pts = centers[rng.integers(0, 3, n)] + rng.normal(0, rng.uniform(2, 30), (n, 2))
    ours = dbscan_cluster(pts, eps, min_pts)
    ref, core = naive_dbscan(pts, eps, min_pts)
    assert np.array_equal(ours.labels, ref)
    ids = ours.labels[ours.labels >= 0]
    assert set(ids.tolist()) == set(range(ours.num_clusters))
    assert all(ours.labels[i] >= 0 for i in range(n) if core[i])


# ----------------------------------------------------------------- heatmap


def test_heatmap_single_point():
    h = build_heatmap(np.array([[5.0, 5.0]]), 10, (640, 360))
    assert h.grid.shape == (36, 64) and h.grid[0, 0] == 1 and h.grid.sum() == 1


def test_heatmap_boundary_floor_and_clamp():
    h = build_heatmap(np.array([[10.0, 0.0], [640.0, 360.0]]), 10, (640, 360))
    assert h.grid[0, 1] == 1 and h.grid[35, 63] == 1


def test_heatmap_skips_outside(caplog):
    with caplog.at_level(logging.WARNING):
        h = build_heatmap(np.array([[5.0, 5.0], [700.0, 5.0], [-1.0, 3.0]]), 10, (640, 360))
    assert h.skipped == 2 and h.grid.sum() == 1
    assert "skipped 2" in caplog.text


def test_heatmap_rejects_bad_cell():
    with pytest.raises(InputError):
        build_heatmap(np.zeros((1, 2)), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 300), st.sampled_from([3.0, 7.5, 10.0, 32.0]))
def test_heatmap_conservation(seed, n, cell):
    pts = np.random.default_rng(seed).uniform(-50, 700, (n, 2))
    h = build_heatmap(pts, cell, (640, 360))
    assert h.grid.sum() + h.skipped == n
    assert h.grid.shape == (int(np.ceil(360 / cell)), int(np.ceil(640 / cell)))


def test_heatmap_csv_rows_per_y_cell():
    h = build_heatmap(np.array([[15.0, 25.0]]), 10, (40, 30))
    buf = io.StringIO()
    write_heatmap_csv(h, buf)
    assert buf.getvalue() == "0,0,0,0\n0,0,0,0\n0,1,0,0\n"


# ---------------------------------------------------------------- hotspots


def grid_map(grid, cell=10.0):
    grid = np.asarray(grid)
    return Heatmap(cell, grid.shape[1] * cell, grid.shape[0] * cell, grid)


def test_single_hot_cell():
    g = np.zeros((5, 6), dtype=int)
    g[2, 3] = 4
    (area,) = extract_hotspot_areas(grid_map(g), 0.5)
    assert (area.x1, area.y1, area.x2, area.y2, area.mass, area.id) == (30, 20, 40, 30, 4, 0)


def test_adjacent_cells_merge():
    g = np.zeros((5, 6), dtype=int)
    g[1, 1] = g[1, 2] = 3
    (area,) = extract_hotspot_areas(grid_map(g), 0.5)
    assert (area.x1, area.y1, area.x2, area.y2, area.mass) == (10, 10, 30, 20, 6)


def test_diagonal_cells_stay_apart():
    g = np.zeros((5, 6), dtype=int)
    g[1, 1] = g[2, 2] = 3
    assert len(extract_hotspot_areas(grid_map(g), 0.5)) == 2


def test_top_four_by_mass_with_tie_break():
    g = np.zeros((10, 20), dtype=int)
    spots = [((0, 0), 5), ((0, 4), 9), ((4, 0), 7), ((4, 4), 7), ((8, 8), 6), ((8, 12), 5)]
    for (r, c), m in spots:
        g[r, c] = m
    areas = extract_hotspot_areas(grid_map(g), 0.5, max_areas=4)
    assert [(a.mass, a.y1, a.x1) for a in areas] == [(9, 0, 40), (7, 40, 0), (7, 40, 40), (6, 80, 80)]
    assert [a.id for a in areas] == [0, 1, 2, 3]


def test_zero_heatmap_has_no_areas():
    assert extract_hotspot_areas(grid_map(np.zeros((3, 3), dtype=int))) == []


@pytest.mark.parametrize("t", [0, -0.1, 1.5])
def test_threshold_range(t):
    with pytest.raises(InputError):
        extract_hotspot_areas(grid_map(np.ones((2, 2), dtype=int)), t)


def test_boxes_clip_to_frame():
    h = build_heatmap(np.array([[635.0, 355.0]] * 3), 30, (640, 360))
    (area,) = extract_hotspot_areas(h, 0.5)
    assert area.x2 == 640 and area.y2 == 360


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_components_match_bfs(seed, t):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 6, (9, 11)) * (rng.random((9, 11)) < 0.4)
    h = grid_map(g)
    areas = extract_hotspot_areas(h, t, max_areas=1000)
    if g.max() == 0:
        assert areas == []
        return
    comps = bfs_components(g >= t * g.max())
    assert len(areas) == len(comps)
    expected = []
    for comp in comps:
        rows = [r for r, _ in comp]
        cols = [c for _, c in comp]
        mass = sum(int(g[r, c]) for r, c in comp)
        expected.append((mass, min(rows) * 10.0, min(cols) * 10.0, (max(cols) + 1) * 10.0, (max(rows) + 1) * 10.0))
    expected.sort(key=lambda e: (-e[0], e[1], e[2]))
    assert [(a.mass, a.y1, a.x1, a.x2, a.y2) for a in areas] == expected
    for a in areas:
        assert 0 <= a.x1 < a.x2 <= h.width and 0 <= a.y1 < a.y2 <= h.height
    assert len(extract_hotspot_areas(h, t)) == min(4, len(comps))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9), st.floats(0.0, 0.5))
def test_threshold_monotone(seed, t, dt):
    g = np.random.default_rng(seed).integers(0, 9, (8, 8))
    if g.max() == 0:
        return
    low = g >= t * g.max()
    high = g >= min(1.0, t + dt) * g.max()
    assert not (high & ~low).any()
    wide = extract_hotspot_areas(grid_map(g), t, max_areas=1000)
    for a in extract_hotspot_areas(grid_map(g), min(1.0, t + dt), max_areas=1000):
        assert any(w.x1 <= a.x1 and w.y1 <= a.y1 and a.x2 <= w.x2 and a.y2 <= w.y2 for w in wide)


# ------------------------------------------------------------------ mining


def dwell_frames(video, boxes, per_box=60, seed=0):
    rng = np.random.default_rng(seed)
    frames, k = [], 0
    for x1, y1, x2, y2 in boxes:
        for _ in range(per_box):
            kps = np.full((NUM_KEYPOINTS, 2), 300.0)
            kps[RIGHT_WRIST] = (rng.uniform(x1, x2), rng.uniform(y1, y2))
            frames.append(PoseFrame(video, k, 0, kps))
            k += 1
    for _ in range(40):  # scattered noise
        kps = np.full((NUM_KEYPOINTS, 2), 300.0)
        kps[RIGHT_WRIST] = rng.uniform((0, 0), (640, 360))
        frames.append(PoseFrame(video, k, 0, kps))
        k += 1
    return frames


def test_mining_recovers_dwell_boxes():
    boxes = [(100, 60, 140, 100), (400, 150, 440, 190)]
    areas, heat = mine_interaction_areas(dwell_frames("v", boxes, per_box=400))
    assert heat is not None and len(areas) == 2
    found = sorted((a.x1, a.y1, a.x2, a.y2) for a in areas)
    for got, want in zip(found, sorted(boxes)):
        assert max(abs(g - w) for g, w in zip(got, want)) <= 10


def test_no_wrists_means_no_areas(caplog):
    kps = np.full((NUM_KEYPOINTS, 2), np.nan)
    frames = [PoseFrame("v", k, 0, kps) for k in range(30)]
    with caplog.at_level(logging.WARNING):
        areas, heat = mine_interaction_areas(frames)
    assert areas == [] and heat is None and "no areas mined" in caplog.text


def test_uniform_scatter_capped():
    rng = np.random.default_rng(3)
    frames = []
    for k in range(3000):
        kps = np.full((NUM_KEYPOINTS, 2), 10.0)
        kps[RIGHT_WRIST] = rng.uniform((0, 0), (640, 360))
        frames.append(PoseFrame("v", k, 0, kps))
    areas, _ = mine_interaction_areas(frames, threshold_frac=0.9, eps=20, min_pts=3)
    assert len(areas) <= 4


def test_mining_is_deterministic_and_per_video():
    frames = dwell_frames("b", [(100, 60, 140, 100)], 200) + dwell_frames("a", [(300, 60, 340, 100)], 200, 1)
    first, _ = mine_areas_by_video(frames)
    second, _ = mine_areas_by_video(list(reversed(frames)))
    assert list(first) == ["a", "b"]
    assert areas_to_json(first) == areas_to_json(second)


def test_areas_json_round_trip(tmp_path):
    areas = {"v": [InteractionArea(0, 1.5, 2.0, 30.0, 40.25, 7)]}
    path = tmp_path / "areas.json"
    path.write_text(areas_to_json(areas))
    assert read_areas_json(path) == areas


def test_areas_json_bare_list_applies_everywhere(tmp_path):
    path = tmp_path / "areas.json"
    path.write_text(json.dumps([{"id": 0, "x1": 1, "y1": 2, "x2": 3, "y2": 4, "mass": 0}]))
    areas = read_areas_json(path)
    assert list(areas) == [ANY_VIDEO]
    assert areas_for(areas, "anything")[0].x2 == 3.0


def test_areas_json_rejects_five(tmp_path):
    path = tmp_path / "areas.json"
    path.write_text(json.dumps({"v": [{"id": i, "x1": 0, "y1": 0, "x2": 1, "y2": 1} for i in range(5)]}))
    with pytest.raises(InputError):
        read_areas_json(path)
