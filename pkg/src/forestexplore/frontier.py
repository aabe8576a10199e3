"""Frontier detection, clustering, trail classification, viewpoint sampling.

A frontier cell is a known-Free cell with at least one face-adjacent Unknown
neighbor (6-connectivity). Frontier cells group into 26-connected clusters;
oversized clusters split recursively across their principal axis. Clusters in
thin known-free surroundings (the shadow strips behind trees, and enclosed
islands of unknown space) classify as Trails, everything else as Frontiers.

All functions are pure with respect to the grid snapshot. The worlds this
package targets are ~2 m tall, so the trail hull test runs on the horizontal
projection (a documented 2.5D assumption).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from . import _kernels
from .geometry import wrap_angle
from .grid_map import CellState, VoxelGrid
from .sensor import DepthCamera

DEFAULT_MAX_EXTENT = 4.5          # meters; matches the sensor range
NEIGHBOR_DIST_FACTOR = 3          # neighbor_dist default = 3 * resolution
VIEWPOINT_RADII = (1.0, 3.5)      # sampling ring radii, meters
VIEWPOINT_N_ANGLES = 16
VIEWPOINT_N_RADII = 3
DEAD_AFTER_FAILURES = 3           # failed viewpoint attempts before a cluster is dead

_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


class ClusterLabel(Enum):
    FRONTIER = "frontier"
    TRAIL = "trail"


@dataclass(frozen=True)
class Viewpoint:
    position: tuple[float, float, float]  # a Free cell center
    yaw: float                            # faces the cluster centroid
    coverage_count: int


@dataclass
class FrontierCluster:
    id: int
    cells: np.ndarray                     # (K, 3) int cell indices, flat-index sorted
    centroid: tuple[float, float, float]  # meters
    label: ClusterLabel = ClusterLabel.FRONTIER
    viewpoint: Viewpoint | None = None
    neighbor_ids: list[int] = field(default_factory=list)
    dead: bool = False
    cell_key: bytes = b""                 # content hash: stable identity across replans

    def __len__(self) -> int:
        return len(self.cells)


def detect_frontier_cells(grid: VoxelGrid) -> np.ndarray:
    """All frontier cells, as an (N, 3) array in lexicographic cell order."""
    return np.argwhere(_frontier_mask(grid.cells))


def _frontier_mask(cells: np.ndarray) -> np.ndarray:
    free = cells == CellState.FREE
    unknown = cells == CellState.UNKNOWN
    near_unknown = np.zeros_like(free)
    near_unknown[1:, :, :] |= unknown[:-1, :, :]
    near_unknown[:-1, :, :] |= unknown[1:, :, :]
    near_unknown[:, 1:, :] |= unknown[:, :-1, :]
    near_unknown[:, :-1, :] |= unknown[:, 1:, :]
    near_unknown[:, :, 1:] |= unknown[:, :, :-1]
    near_unknown[:, :, :-1] |= unknown[:, :, 1:]
    return free & near_unknown


class FrontierTracker:
    """Incrementally maintained frontier mask for one agent's grid.

    Recomputing the 6-neighbor test over the whole grid at every replan is
    wasteful; only the box around cells that changed since the last query can
    gain or lose frontier status. The tracker accumulates that dirty box and
    patches the cached mask, which stays exactly equal to a full recompute
    (property-tested against detect_frontier_cells).
    """

    def __init__(self, grid: VoxelGrid):
        self.grid = grid
        self._mask: np.ndarray | None = None
        self._dirty_lo = None
        self._dirty_hi = None
        self.changed_keys_window: set[bytes] = set()

    def note_changes(self, flat_idx: np.ndarray) -> None:
        if len(flat_idx) == 0:
            return
        coords = np.array(np.unravel_index(flat_idx, self.grid.dims)).T
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        if self._dirty_lo is None:
            self._dirty_lo, self._dirty_hi = lo, hi
        else:
            self._dirty_lo = np.minimum(self._dirty_lo, lo)
            self._dirty_hi = np.maximum(self._dirty_hi, hi)

    def frontier_cells(self) -> np.ndarray:
        cells = self.grid.cells
        if self._mask is None:
            self._mask = _frontier_mask(cells)
        elif self._dirty_lo is not None:
            # a state change at c can flip frontier status of c and its face
            # neighbors, so patch the dirty box grown by one cell (with one
            # more cell of read halo for the neighbor test)
            lo = np.maximum(self._dirty_lo - 2, 0)
            hi = np.minimum(self._dirty_hi + 2, np.array(self.grid.dims) - 1)
            sl = tuple(slice(lo[a], hi[a] + 1) for a in range(3))
            patch = _frontier_mask(cells[sl])
            inner = tuple(
                slice(1 if lo[a] > 0 else 0,
                      patch.shape[a] - (1 if hi[a] < self.grid.dims[a] - 1 else 0))
                for a in range(3))
            dest = tuple(
                slice(lo[a] + (1 if lo[a] > 0 else 0),
                      lo[a] + (1 if lo[a] > 0 else 0) + (inner[a].stop - inner[a].start))
                for a in range(3))
            self._mask[dest] = patch[inner]
        self._dirty_lo = self._dirty_hi = None
        return np.argwhere(self._mask)


def cluster_frontiers(cells: np.ndarray, grid: VoxelGrid,
                      max_extent: float = DEFAULT_MAX_EXTENT) -> list[FrontierCluster]:
    """Partition frontier cells into 26-connected clusters, bisecting any
    component whose principal-axis extent exceeds max_extent.

    Ids are assigned in deterministic scan order (component discovery order,
    then depth-first bisection order), so identical inputs yield identical
    cluster lists.
    """
    clusters: list[FrontierCluster] = []
    if len(cells) == 0:
        return clusters
    mask = np.zeros(grid.dims, dtype=bool)
    mask[tuple(cells.T)] = True
    labels, n_comp = ndimage.label(mask, structure=_STRUCT_26)
    comp_of = labels[tuple(cells.T)]
    order = np.argsort(comp_of, kind="stable")
    sorted_cells = cells[order]
    sorted_comp = comp_of[order]
    res = grid.resolution
    for c in range(1, n_comp + 1):
        lo = np.searchsorted(sorted_comp, c)
        hi = np.searchsorted(sorted_comp, c + 1)
        for part in _bisect(sorted_cells[lo:hi], res, max_extent):
            clusters.append(_make_cluster(len(clusters), part, grid))
    return clusters


def _bisect(cells: np.ndarray, res: float, max_extent: float) -> list[np.ndarray]:
    """Recursive principal-axis bisection of one connected component."""
    if len(cells) <= 1:
        return [cells]
    centers = (cells + 0.5) * res
    centroid = centers.mean(axis=0)
    rel = centers - centroid
    cov = rel.T @ rel
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    for comp in axis:  # canonical sign, so splits are reproducible
        if abs(comp) > 1e-12:
            if comp < 0:
                axis = -axis
            break
    proj = rel @ axis
    if proj.max() - proj.min() <= max_extent:
        return [cells]
    left = proj <= 0.0
    if left.all() or not left.any():  # numerically one-sided: cut at the median
        cut = np.argsort(proj, kind="stable")
        half = len(cells) // 2
        left = np.zeros(len(cells), dtype=bool)
        left[cut[:half]] = True
    out = []
    for side in (cells[left], cells[~left]):
        # a plane cut can disconnect a side; keep clusters 26-connected
        for comp in _components(side):
            out.extend(_bisect(comp, res, max_extent))
    return out


def _components(cells: np.ndarray) -> list[np.ndarray]:
    """26-connected components of a cell set, in scan order."""
    if len(cells) <= 1:
        return [cells]
    lo = cells.min(axis=0)
    local = cells - lo
    mask = np.zeros(local.max(axis=0) + 1, dtype=bool)
    mask[tuple(local.T)] = True
    labels, n = ndimage.label(mask, structure=_STRUCT_26)
    if n == 1:
        return [cells]
    comp_of = labels[tuple(local.T)]
    order = np.argsort(comp_of, kind="stable")
    sc = comp_of[order]
    cs = cells[order]
    return [cs[np.searchsorted(sc, c):np.searchsorted(sc, c + 1)]
            for c in range(1, n + 1)]


def _make_cluster(cid: int, cells: np.ndarray, grid: VoxelGrid) -> FrontierCluster:
    flat = (cells[:, 0] * grid.dims[1] + cells[:, 1]) * grid.dims[2] + cells[:, 2]
    order = np.argsort(flat, kind="stable")
    cells = np.ascontiguousarray(cells[order])
    centers = np.asarray(grid.origin) + (cells + 0.5) * grid.resolution
    centroid = tuple(float(v) for v in centers.mean(axis=0))
    return FrontierCluster(id=cid, cells=cells, centroid=centroid,
                           cell_key=flat[order].tobytes())


# -- trail classification ---------------------------------------------------

def classify_all(clusters: list[FrontierCluster], grid: VoxelGrid,
                 neighbor_dist: float | None = None) -> None:
    """Label every cluster (Trail or Frontier) and fill neighbor_ids in place."""
    if neighbor_dist is None:
        neighbor_dist = NEIGHBOR_DIST_FACTOR * grid.resolution
    _fill_neighbor_ids(clusters, neighbor_dist, grid.resolution)
    for cl in clusters:
        trail = len(cl.neighbor_ids) <= 1 or _hull_ring_is_free(cl, grid)
        cl.label = ClusterLabel.TRAIL if trail else ClusterLabel.FRONTIER


def classify_cluster(cluster: FrontierCluster, grid: VoxelGrid,
                     all_clusters: list[FrontierCluster],
                     neighbor_dist: float | None = None) -> ClusterLabel:
    """Trail iff the hull ring is entirely Free, or the cluster has at most
    one neighbor (minimum inter-cell distance <= neighbor_dist)."""
    if neighbor_dist is None:
        neighbor_dist = NEIGHBOR_DIST_FACTOR * grid.resolution
    neighbors = 0
    mine = cKDTree(cluster.cells * grid.resolution)
    for other in all_clusters:
        if other.id == cluster.id:
            continue
        d = min(mine.query(other.cells * grid.resolution, k=1)[0])
        if d <= neighbor_dist + 1e-12:
            neighbors += 1
    if neighbors <= 1 or _hull_ring_is_free(cluster, grid):
        return ClusterLabel.TRAIL
    return ClusterLabel.FRONTIER


def _fill_neighbor_ids(clusters: list[FrontierCluster], neighbor_dist: float,
                       resolution: float) -> None:
    for cl in clusters:
        cl.neighbor_ids = []
    if len(clusters) < 2:
        return
    all_cells = np.concatenate([cl.cells for cl in clusters]) * resolution
    owner = np.concatenate([np.full(len(cl), i) for i, cl in enumerate(clusters)])
    tree = cKDTree(all_cells)
    pairs = tree.query_pairs(r=neighbor_dist + 1e-12, output_type="ndarray")
    for cl, other in {(int(owner[a]), int(owner[b])) for a, b in pairs if owner[a] != owner[b]}:
        clusters[cl].neighbor_ids.append(other)
        clusters[other].neighbor_ids.append(cl)
    for cl in clusters:
        cl.neighbor_ids = sorted(set(cl.neighbor_ids))


def _hull_ring_is_free(cluster: FrontierCluster, grid: VoxelGrid) -> bool:
    """Rule (a): every cell on the 1-voxel-dilated boundary ring of the 2D
    convex hull of the horizontally-projected cluster must be Free (no
    Unknown, no Occupied, no out-of-map) across the cluster's z layers."""
    pts = np.unique(cluster.cells[:, :2], axis=0)
    hull_set = _hull_cells_2d(pts)
    ring = set()
    for (i, j) in hull_set:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                cand = (i + di, j + dj)
                if cand not in hull_set:
                    ring.add(cand)
    k_lo = int(cluster.cells[:, 2].min())
    k_hi = int(cluster.cells[:, 2].max())
    nx, ny, nz = grid.dims
    for (i, j) in ring:
        if i < 0 or i >= nx or j < 0 or j >= ny:
            return False
        for k in range(k_lo, k_hi + 1):
            if grid.cells[i, j, k] != CellState.FREE:
                return False
    return True


def _hull_cells_2d(pts: np.ndarray) -> set[tuple[int, int]]:
    """Cells whose centers lie inside or on the convex hull of the given cells."""
    base = {(int(p[0]), int(p[1])) for p in pts}
    if len(pts) < 3:
        return base
    try:
        hull = ConvexHull(pts.astype(float))
    except QhullError:  # collinear
        return base
    tri = Delaunay(pts[hull.vertices].astype(float))
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    xs = np.arange(lo[0], hi[0] + 1)
    ys = np.arange(lo[1], hi[1] + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = tri.find_simplex(cand.astype(float)) >= 0
    return base | {(int(c[0]), int(c[1])) for c in cand[inside]}


# -- viewpoint sampling ------------------------------------------------------

def sample_viewpoint(cluster: FrontierCluster, grid: VoxelGrid, cam: DepthCamera,
                     radii: tuple[float, float] = VIEWPOINT_RADII,
                     n_angles: int = VIEWPOINT_N_ANGLES,
                     n_radii: int = VIEWPOINT_N_RADII,
                     planning_free: np.ndarray | None = None,
                     valid_fn=None,
                     ring_z: float | None = None) -> Viewpoint | None:
    """Best observation pose for a cluster, from a cylindrical candidate ring.

    Candidates sit on n_angles x n_radii ring points around the centroid, at
    centroid height (or at ring_z for fixed-altitude flight), snapped to cell
    centers. A candidate survives only if its cell is known-Free, passable in
    the (optional) inflated planning mask, and accepted by the (optional)
    valid_fn. Candidates are ranked by how many cluster cells they see (grid
    ray walk through Free cells, within the camera's range and FOV), ties
    broken by distance to the centroid, then by angle index. Returns None when
    no candidate survives or none sees a single cell — the caller counts such
    failures toward declaring the cluster dead.
    """
    cx, cy, cz = cluster.centroid
    if ring_z is not None:
        cz = ring_z
    res = grid.resolution
    ox, oy, oz = grid.origin
    best = None  # (-coverage, distance, angle_idx, viewpoint)
    for a_idx in range(n_angles):
        theta = 2.0 * math.pi * a_idx / n_angles
        for r in np.linspace(radii[0], radii[1], n_radii):
            px = cx + r * math.cos(theta)
            py = cy + r * math.sin(theta)
            cell = (int(math.floor((px - ox) / res)),
                    int(math.floor((py - oy) / res)),
                    int(math.floor((cz - oz) / res)))
            if not grid.in_bounds(cell):
                continue
            if grid.cells[cell] != CellState.FREE:
                continue
            if planning_free is not None and not planning_free[cell]:
                continue
            if valid_fn is not None and not valid_fn(cell):
                continue
            pos = grid.cell_to_world(cell)
            dist = math.hypot(cx - pos[0], cy - pos[1])
            if dist < 1e-9:
                continue  # on top of the centroid: yaw undefined
            yaw = wrap_angle(math.atan2(cy - pos[1], cx - pos[0]))
            coverage = int(_kernels.count_visible_cells(
                grid.cells, res, pos[0] - ox, pos[1] - oy, pos[2] - oz, yaw,
                cluster.cells.astype(np.int64), cam.max_range,
                cam.h_fov / 2.0, cam.v_fov / 2.0))
            if coverage < 1:
                continue
            key = (-coverage, dist, a_idx)
            if best is None or key < best[0]:
                best = (key, Viewpoint(position=pos, yaw=yaw, coverage_count=coverage))
    return best[1] if best else None
