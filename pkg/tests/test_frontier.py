import math

import numpy as np
import pytest
from scipy import ndimage

from forestexplore.frontier import (
    ClusterLabel,
    FrontierTracker,
    classify_all,
    classify_cluster,
    cluster_frontiers,
    detect_frontier_cells,
    sample_viewpoint,
)
from forestexplore.grid_map import CellState, VoxelGrid
from forestexplore.sensor import DepthCamera

from oracles import FREE, OCCUPIED, UNKNOWN, bisect_line_counts, frontier_cells_bruteforce


def grid_of(dims, fill=UNKNOWN, res=0.1):
    g = VoxelGrid(res, dims)
    g.cells[:] = fill
    return g


def cells_set(arr):
    return {tuple(c) for c in arr}


def test_uniform_grids_have_no_frontier():
    assert len(detect_frontier_cells(grid_of((6, 6, 3), UNKNOWN))) == 0
    assert len(detect_frontier_cells(grid_of((6, 6, 3), FREE))) == 0
    assert len(detect_frontier_cells(grid_of((6, 6, 3), OCCUPIED))) == 0


def test_halfspace_split_yields_single_boundary_layer():
    g = grid_of((10, 8, 4), UNKNOWN)
    g.cells[:5] = FREE
    found = cells_set(detect_frontier_cells(g))
    expect = {(4, j, k) for j in range(8) for k in range(4)}
    assert found == expect


def test_detection_matches_bruteforce_on_random_grids():
    rng = np.random.default_rng(13)
    for _ in range(8):
        g = grid_of((7, 6, 4))
        g.cells = rng.integers(0, 3, size=(7, 6, 4)).astype(np.uint8)
        assert cells_set(detect_frontier_cells(g)) == frontier_cells_bruteforce(g.cells)


def test_incremental_tracker_equals_full_recompute():
    rng = np.random.default_rng(5)
    g = grid_of((20, 20, 6))
    tracker = FrontierTracker(g)
    tracker.frontier_cells()  # prime the cache on the empty grid
    for _ in range(30):
        # random little patches of new information, as integration would produce
        i, j, k = rng.integers(0, 17), rng.integers(0, 17), rng.integers(0, 4)
        patch = rng.integers(0, 3, size=(3, 3, 2)).astype(np.uint8)
        flat = []
        for a in range(3):
            for b in range(3):
                for c in range(2):
                    idx = ((i + a) * 20 + (j + b)) * 6 + (k + c)
                    old = g.cells[i + a, j + b, k + c]
                    new = max(old, patch[a, b, c])
                    if new != old:
                        g.cells[i + a, j + b, k + c] = new
                        flat.append(idx)
        tracker.note_changes(np.asarray(flat, dtype=np.int64))
        got = cells_set(tracker.frontier_cells())
        want = cells_set(detect_frontier_cells(g))
        assert got == want


def test_two_distant_cells_make_two_clusters_and_empty_input_none():
    g = grid_of((20, 5, 3), FREE)
    cells = np.array([[2, 2, 1], [14, 2, 1]])
    clusters = cluster_frontiers(cells, g)
    assert len(clusters) == 2
    assert cluster_frontiers(np.empty((0, 3), dtype=int), g) == []
    # touching diagonally -> one cluster (26-connectivity)
    near = np.array([[2, 2, 1], [3, 3, 2]])
    assert len(cluster_frontiers(near, g)) == 1


def test_straight_line_bisects_into_expected_cluster_sizes():
    g = grid_of((110, 5, 3), FREE)
    cells = np.array([[i, 2, 1] for i in range(100)])
    max_extent = 30 * 0.1  # thirty cells
    clusters = cluster_frontiers(cells, g, max_extent=max_extent)
    sizes = sorted(len(c) for c in clusters)
    assert sizes == sorted(bisect_line_counts(100, 30))
    assert len(clusters) == 4
    for c in clusters:
        span = c.cells[:, 0].max() - c.cells[:, 0].min()
        assert span * 0.1 <= max_extent


def test_clustering_is_a_partition_of_connected_pieces():
    rng = np.random.default_rng(8)
    g = grid_of((25, 25, 4))
    g.cells = (rng.random((25, 25, 4)) < 0.3).astype(np.uint8)
    cells = np.argwhere(np.zeros((25, 25, 4)) == 0)[
        rng.random(25 * 25 * 4) < 0.08]
    clusters = cluster_frontiers(cells, g, max_extent=0.6)
    union = []
    for c in clusters:
        union.extend(map(tuple, c.cells))
        assert len(c) > 0
        # every cluster stays 26-connected
        lo = c.cells.min(axis=0)
        mask = np.zeros(c.cells.max(axis=0) - lo + 1, dtype=bool)
        mask[tuple((c.cells - lo).T)] = True
        _, n = ndimage.label(mask, structure=np.ones((3, 3, 3)))
        assert n == 1
    assert len(union) == len(set(union)) == len(cells)
    assert set(union) == cells_set(cells)


def test_cluster_ids_and_keys_deterministic():
    g = grid_of((30, 30, 3), FREE)
    rng = np.random.default_rng(3)
    cells = np.unique(rng.integers(0, [30, 30, 3], size=(60, 3)), axis=0)
    a = cluster_frontiers(cells, g, max_extent=0.5)
    b = cluster_frontiers(cells, g, max_extent=0.5)
    assert [c.id for c in a] == [c.id for c in b] == list(range(len(a)))
    assert all(x.cell_key == y.cell_key for x, y in zip(a, b))
    assert all(np.array_equal(x.cells, y.cells) for x, y in zip(a, b))


def frontier_line_world(max_extent=0.4):
    """Half-free grid: one straight exploration boundary at x=19, split into
    several clusters; end clusters have one neighbor, middle ones two."""
    g = grid_of((40, 12, 3), UNKNOWN)
    g.cells[:20] = FREE
    cells = detect_frontier_cells(g)
    clusters = cluster_frontiers(cells, g, max_extent=max_extent)
    classify_all(clusters, g)
    return g, clusters


def test_boundary_line_middles_are_frontier_ends_are_trail():
    g, clusters = frontier_line_world()
    assert len(clusters) >= 3
    by_y = sorted(clusters, key=lambda c: c.centroid[1])
    for c in by_y[1:-1]:
        assert len(c.neighbor_ids) >= 2
        assert c.label == ClusterLabel.FRONTIER  # unknown beyond the hull ring
    assert by_y[0].label == ClusterLabel.TRAIL   # corner rule: one neighbor
    assert by_y[-1].label == ClusterLabel.TRAIL
    assert len(by_y[0].neighbor_ids) == 1


def test_enclosed_unknown_island_is_a_trail():
    g = grid_of((20, 20, 3), FREE)
    g.cells[8:11, 8:11, :] = UNKNOWN
    cells = detect_frontier_cells(g)
    clusters = cluster_frontiers(cells, g)
    classify_all(clusters, g)
    assert len(clusters) == 1
    assert clusters[0].label == ClusterLabel.TRAIL
    # rule (a) alone suffices: the ring around the hull is all Free
    assert classify_cluster(clusters[0], g, clusters) == ClusterLabel.TRAIL


def test_island_with_occupied_core_still_trail_via_free_ring():
    # a tree shadow: occupied core, unknown shadow, free everywhere else
    g = grid_of((24, 24, 3), FREE)
    g.cells[10:12, 10:12, :] = OCCUPIED
    g.cells[12:16, 10:12, :] = UNKNOWN
    cells = detect_frontier_cells(g)
    clusters = cluster_frontiers(cells, g)
    classify_all(clusters, g)
    assert all(c.label == ClusterLabel.TRAIL for c in clusters)


def test_classification_invariant_under_quarter_turns():
    base = grid_of((40, 12, 3), UNKNOWN)
    base.cells[:20] = FREE
    labels_per_rot = []
    for rot in range(4):
        g = grid_of((40, 12, 3)) if rot % 2 == 0 else grid_of((12, 40, 3))
        g.cells = np.rot90(base.cells, k=rot, axes=(0, 1)).copy()
        cells = detect_frontier_cells(g)
        clusters = cluster_frontiers(cells, g, max_extent=0.4)
        classify_all(clusters, g)
        labels_per_rot.append(sorted(
            (len(c), c.label.value) for c in clusters))
    assert labels_per_rot[0] == labels_per_rot[1] == labels_per_rot[2] == labels_per_rot[3]


def one_cell_cluster(g, cell):
    clusters = cluster_frontiers(np.array([cell]), g)
    return clusters[0]


def test_viewpoint_faces_single_cell_with_coverage_one():
    g = grid_of((60, 60, 20), FREE)
    cl = one_cell_cluster(g, (30, 30, 10))
    vp = sample_viewpoint(cl, g, DepthCamera())
    assert vp is not None
    assert vp.coverage_count == 1
    want_yaw = math.atan2(cl.centroid[1] - vp.position[1],
                          cl.centroid[0] - vp.position[0])
    assert vp.yaw == pytest.approx(want_yaw, abs=1e-9)
    d = math.hypot(cl.centroid[0] - vp.position[0], cl.centroid[1] - vp.position[1])
    assert 1.0 - 0.2 <= d <= 3.5 + 0.2  # on the sampling ring (up to cell snap)


def test_viewpoint_ties_break_by_distance_then_angle_index():
    g = grid_of((60, 60, 20), FREE)
    cl = one_cell_cluster(g, (30, 30, 10))
    # four candidates at exactly 1 m N/E/S/W; all see the cell; angle 0 wins
    vp = sample_viewpoint(cl, g, DepthCamera(), radii=(1.0, 1.0),
                          n_angles=4, n_radii=1)
    assert vp.position[0] == pytest.approx(cl.centroid[0] + 1.0)
    assert vp.position[1] == pytest.approx(cl.centroid[1])
    # blocking the angle-0 candidate hands the tie to angle 1
    g.cells[40, 30, 10] = OCCUPIED
    vp2 = sample_viewpoint(cl, g, DepthCamera(), radii=(1.0, 1.0),
                           n_angles=4, n_radii=1)
    assert vp2.position[1] == pytest.approx(cl.centroid[1] + 1.0)


def test_viewpoint_through_wall_gap_maximizes_coverage():
    g = grid_of((60, 60, 8), UNKNOWN)
    # open space west of a wall; behind the wall only a short free corridor
    # through its single gap, ending in frontier cells
    wall_x = 30
    g.cells[:wall_x] = FREE
    g.cells[wall_x] = OCCUPIED
    g.cells[wall_x, 29:32, :] = FREE           # the gap
    g.cells[wall_x + 1: wall_x + 4, 29:32, :] = FREE  # corridor
    cluster_cells = np.array([[wall_x + 3, 29 + j, 4] for j in range(3)])
    cl = cluster_frontiers(cluster_cells, g)[0]
    cam = DepthCamera()
    vp = sample_viewpoint(cl, g, cam)
    assert vp is not None
    # exhaustive candidate evaluation: no candidate may beat the returned one
    best = vp.coverage_count
    res = g.resolution
    for a_idx in range(16):
        theta = 2 * math.pi * a_idx / 16
        for r in np.linspace(1.0, 3.5, 3):
            px = cl.centroid[0] + r * math.cos(theta)
            py = cl.centroid[1] + r * math.sin(theta)
            cell = (int(px / res), int(py / res), int(cl.centroid[2] / res))
            if not all(0 <= cell[a] < g.dims[a] for a in range(3)):
                continue
            if g.cells[cell] != FREE:
                continue
            from forestexplore import _kernels
            yaw = math.atan2(cl.centroid[1] - (cell[1] + 0.5) * res,
                             cl.centroid[0] - (cell[0] + 0.5) * res)
            cov = _kernels.count_visible_cells(
                g.cells, res, (cell[0] + 0.5) * res, (cell[1] + 0.5) * res,
                (cell[2] + 0.5) * res, yaw, cluster_cells.astype(np.int64),
                cam.max_range, cam.h_fov / 2, cam.v_fov / 2)
            assert cov <= best
    # and the winner actually sees through the gap, from the near side
    assert vp.coverage_count >= 1
    assert vp.position[0] < wall_x * res


def test_viewpoint_marker_when_all_candidates_invalid():
    g = grid_of((60, 60, 8), UNKNOWN)
    g.cells[30, 30, 4] = FREE
    cl = one_cell_cluster(g, (30, 30, 4))
    # every ring candidate is Unknown -> no viewpoint
    assert sample_viewpoint(cl, g, DepthCamera()) is None


def test_viewpoint_respects_planning_mask():
    g = grid_of((60, 60, 20), FREE)
    cl = one_cell_cluster(g, (30, 30, 10))
    blocked = np.zeros(g.dims, dtype=bool)  # nothing passable
    assert sample_viewpoint(cl, g, DepthCamera(), planning_free=blocked) is None


def test_viewpoint_ring_at_fixed_altitude():
    g = grid_of((40, 40, 20), FREE)
    g.cells[18:22, 18:22, 1:4] = UNKNOWN  # low pocket, centroid z ~ 0.25 m
    cells = detect_frontier_cells(g)
    cl = cluster_frontiers(cells, g)[0]
    low = sample_viewpoint(cl, g, DepthCamera())
    high = sample_viewpoint(cl, g, DepthCamera(), ring_z=1.05)
    assert low is not None and high is not None
    assert low.position[2] == pytest.approx((int(cl.centroid[2] / 0.1) + 0.5) * 0.1)
    assert high.position[2] == pytest.approx(1.05)
    assert high.coverage_count >= 1


def test_cluster_and_viewpoint_honor_grid_origin():
    g = VoxelGrid(0.1, (20, 40, 20), origin=(2.0, 0.0, 0.0))
    g.cells[:] = FREE
    g.cells[8:12, 18:22, 8:12] = UNKNOWN
    cells = detect_frontier_cells(g)
    cl = cluster_frontiers(cells, g)[0]
    # centroid sits in world coordinates, inside the slab
    assert 2.0 < cl.centroid[0] < 4.0
    vp = sample_viewpoint(cl, g, DepthCamera())
    assert vp is not None
    assert 2.0 < vp.position[0] < 4.0
    assert vp.coverage_count >= 1
