"""Ternary 3D voxel map: scan integration, merging, deltas, coverage.

Cell states are ordered Unknown < Free < Occupied and every mutation is a
cellwise max, so updates are monotone: a cell never leaves Occupied and never
returns to Unknown. That makes merging a commutative idempotent monoid and
lets connected agents exchange compact change logs instead of full grids.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


class MapBoundsError(ValueError):
    """Point lies outside the grid box."""


class GridMismatchError(ValueError):
    """Grids disagree on origin, resolution, or dims."""


@dataclass(frozen=True)
class CoverageStats:
    known_cells: int
    free_cells: int
    occupied_cells: int
    explored_volume: float  # m^3, known_cells * resolution^3


class VoxelGrid:
    """Dense uint8 voxel grid over an axis-aligned box.

    Cells bin half-open: a point maps to floor((p - origin) / resolution), so a
    point exactly on an internal boundary belongs to the higher cell. The
    revision counter bumps once per mutating call that changed at least one
    cell, and each bump appends a change-log chunk used for peer deltas.
    """

    def __init__(self, resolution: float, dims: tuple[int, int, int],
                 origin: tuple[float, float, float] = (0.0, 0.0, 0.0)):
        if resolution <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        if any(d <= 0 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        self.resolution = float(resolution)
        self.dims = (int(dims[0]), int(dims[1]), int(dims[2]))
        self.origin = (float(origin[0]), float(origin[1]), float(origin[2]))
        self.cells = np.zeros(self.dims, dtype=np.uint8)  # all Unknown
        self.revision = 0
        self._free = 0
        self._occupied = 0
        self._log: list[tuple[int, np.ndarray, np.ndarray]] = []
        self._scratch_idx = np.empty(0, dtype=np.int64)
        self._scratch_state = np.empty(0, dtype=np.uint8)

    @classmethod
    def from_extent(cls, extent, resolution: float,
                    origin=(0.0, 0.0, 0.0)) -> "VoxelGrid":
        dims = tuple(int(math.ceil(e / resolution - 1e-9)) for e in extent)
        return cls(resolution, dims, origin)

    # -- geometry ----------------------------------------------------------

    def world_to_cell(self, point) -> tuple[int, int, int]:
        cell = tuple(int(math.floor((float(point[a]) - self.origin[a]) / self.resolution))
                     for a in range(3))
        if not self.in_bounds(cell):
            raise MapBoundsError(f"point {tuple(point)} outside grid")
        return cell

    def cell_to_world(self, cell) -> tuple[float, float, float]:
        return tuple(self.origin[a] + (cell[a] + 0.5) * self.resolution for a in range(3))

    def in_bounds(self, cell) -> bool:
        return all(0 <= cell[a] < self.dims[a] for a in range(3))

    def flat_index(self, cell) -> int:
        return (cell[0] * self.dims[1] + cell[1]) * self.dims[2] + cell[2]

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (self.origin == other.origin and self.dims == other.dims
                and self.resolution == other.resolution)

    # -- mutation ----------------------------------------------------------

    def integrate_scan(self, sensor_origin, endpoints: np.ndarray,
                       hits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Carve ray corridors from sensor_origin into the grid.

        Interior cells become Free, endpoint cells of hitting rays become
        Occupied, Occupied is never demoted. Returns the (flat index, state)
        arrays of cells that actually changed; empty arrays when nothing did.
        """
        ox = float(sensor_origin[0]) - self.origin[0]
        oy = float(sensor_origin[1]) - self.origin[1]
        oz = float(sensor_origin[2]) - self.origin[2]
        if endpoints.shape[0] == 0:
            return _EMPTY_IDX, _EMPTY_STATE
        local = np.asarray(endpoints, dtype=np.float64)
        if self.origin != (0.0, 0.0, 0.0):
            local = local - np.asarray(self.origin)
        # exact upper bound on cells the walk can touch, so the kernel cannot
        # overflow the scratch buffers mid-mutation
        spans = np.abs(np.floor(local / self.resolution).astype(np.int64)
                       - np.floor(np.array([ox, oy, oz]) / self.resolution).astype(np.int64))
        need = int(np.sum(spans.sum(axis=1) + 2))
        if self._scratch_idx.shape[0] < need:
            self._scratch_idx = np.empty(need, dtype=np.int64)
            self._scratch_state = np.empty(need, dtype=np.uint8)
        n, d_free, d_occ = _kernels.integrate_rays(
            self.cells, self.resolution, ox, oy, oz, local,
            np.asarray(hits, dtype=np.bool_), self._scratch_idx, self._scratch_state)
        if n < 0:  # pragma: no cover - the bound above prevents this
            raise RuntimeError("integration scratch buffer overflow")
        if n == 0:
            return _EMPTY_IDX, _EMPTY_STATE
        idx = self._scratch_idx[:n].copy()
        states = self._scratch_state[:n].copy()
        self._free += d_free
        self._occupied += d_occ
        self.revision += 1
        self._log.append((self.revision, idx, states))
        return idx, states

    def apply_delta(self, idx: np.ndarray, states: np.ndarray) -> int:
        """Cellwise-max merge of (flat index, state) pairs; returns changed count.

        A batch may mention the same cell more than once (a scan can free a
        cell through one ray and occupy it through another); duplicates are
        collapsed to their max state so the coverage counters see each cell's
        net transition exactly once.
        """
        if len(idx) == 0:
            return 0
        if len(idx) > 1 and not bool(np.all(idx[1:] > idx[:-1])):
            uniq, inverse = np.unique(idx, return_inverse=True)
            merged = np.zeros(len(uniq), dtype=np.uint8)
            np.maximum.at(merged, inverse, states)
            idx, states = uniq, merged
        flat = self.cells.reshape(-1)
        old = flat[idx]
        new = np.maximum(old, states)
        mask = new > old
        if not mask.any():
            return 0
        cidx = idx[mask]
        cold = old[mask]
        cnew = new[mask]
        flat[cidx] = cnew
        self._free += int((cnew == CellState.FREE).sum()) - int((cold == CellState.FREE).sum())
        self._occupied += int((cnew == CellState.OCCUPIED).sum())
        self.revision += 1
        self._log.append((self.revision, cidx.astype(np.int64), cnew))
        return int(mask.sum())

    def merge_from(self, other: "VoxelGrid") -> int:
        """Merge a whole peer grid into this one (cellwise max); returns changed count."""
        if not self.same_geometry(other):
            raise GridMismatchError("grid geometry mismatch")
        mask = other.cells > self.cells
        if not mask.any():
            return 0
        idx = np.flatnonzero(mask.reshape(-1)).astype(np.int64)
        return self.apply_delta(idx, other.cells.reshape(-1)[idx])

    # -- change log --------------------------------------------------------

    def changes_since(self, revision: int) -> tuple[np.ndarray, np.ndarray]:
        """All cell changes with revision > the given one, deduplicated.

        States are monotone, so the max state per index equals the latest.
        Raises GridMismatchError if the revision predates the retained log
        (callers must fall back to a full merge).
        """
        if revision >= self.revision:
            return _EMPTY_IDX, _EMPTY_STATE
        oldest = self._log[0][0] if self._log else self.revision + 1
        if revision < oldest - 1:
            raise GridMismatchError(
                f"change log starts at revision {oldest}, cannot diff since {revision}")
        parts_i = [chunk_idx for rev, chunk_idx, _ in self._log if rev > revision]
        parts_s = [chunk_states for rev, _, chunk_states in self._log if rev > revision]
        idx = np.concatenate(parts_i)
        states = np.concatenate(parts_s)
        uniq, inverse = np.unique(idx, return_inverse=True)
        out = np.zeros(len(uniq), dtype=np.uint8)
        np.maximum.at(out, inverse, states)
        return uniq, out

    def prune_log(self, up_to_revision: int) -> None:
        """Drop change-log chunks at or below the given revision."""
        self._log = [entry for entry in self._log if entry[0] > up_to_revision]

    # -- queries -----------------------------------------------------------

    def coverage(self) -> CoverageStats:
        known = self._free + self._occupied
        return CoverageStats(known_cells=known, free_cells=self._free,
                             occupied_cells=self._occupied,
                             explored_volume=known * self.resolution ** 3)

    def inflate_occupied(self, margin: float) -> "VoxelGrid":
        """New grid where every cell within Euclidean distance `margin` of an
        Occupied cell (center to center) is Occupied; other cells keep their state."""
        if margin < 0:
            raise ValueError(f"margin must be >= 0, got {margin}")
        out = self.copy()
        r = int(math.floor(margin / self.resolution + 1e-9))
        if r > 0:
            ball = _euclidean_ball(r, margin / self.resolution)
            occ = self.cells == CellState.OCCUPIED
            grown = ndimage.binary_dilation(occ, structure=ball)
            out.cells[grown] = CellState.OCCUPIED
            out._free = int((out.cells == CellState.FREE).sum())
            out._occupied = int((out.cells == CellState.OCCUPIED).sum())
        return out

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.resolution, self.dims, self.origin)
        g.cells = self.cells.copy()
        g.revision = self.revision
        g._free = self._free
        g._occupied = self._occupied
        g._log = list(self._log)
        return g

    # -- snapshot dump -----------------------------------------------------

    def save_snapshot(self, path) -> None:
        """Flat binary cell dump prefixed by a one-line JSON header."""
        header = json.dumps({"origin": list(self.origin), "resolution": self.resolution,
                             "dims": list(self.dims), "revision": self.revision})
        with open(path, "wb") as f:
            f.write(header.encode() + b"\n")
            f.write(self.cells.tobytes())

    @classmethod
    def load_snapshot(cls, path) -> "VoxelGrid":
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl].decode())
        g = cls(header["resolution"], tuple(header["dims"]), tuple(header["origin"]))
        g.cells = np.frombuffer(raw[nl + 1:], dtype=np.uint8).reshape(g.dims).copy()
        g.revision = header["revision"]
        g._free = int((g.cells == CellState.FREE).sum())
        g._occupied = int((g.cells == CellState.OCCUPIED).sum())
        return g


_EMPTY_IDX = np.empty(0, dtype=np.int64)
_EMPTY_STATE = np.empty(0, dtype=np.uint8)

_BALL_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _euclidean_ball(r: int, radius_cells: float) -> np.ndarray:
    key = (r, round(radius_cells, 12))
    ball = _BALL_CACHE.get(key)
    if ball is None:
        ax = np.arange(-r, r + 1)
        dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
        ball = (dx * dx + dy * dy + dz * dz) <= radius_cells ** 2 + 1e-9
        _BALL_CACHE[key] = ball
    return ball


def merge_maps(a: VoxelGrid, b: VoxelGrid) -> VoxelGrid:
    """Pure cellwise-max merge; inputs untouched."""
    if not a.same_geometry(b):
        raise GridMismatchError("grid geometry mismatch")
    out = a.copy()
    out.merge_from(b)
    return out
