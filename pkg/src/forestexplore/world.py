"""Ground-truth forest environments: procedural generation, occupancy queries,
and JSON persistence.

Worlds are immutable after construction and safe to share across missions.
All randomness comes from numpy's PCG64 generator seeded with the world seed,
so identical (seed, parameters) reproduce identical worlds bit-for-bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WORLD_FORMAT_VERSION = 1
DEFAULT_RADIUS_RANGE = (0.1, 0.4)
DEFAULT_SPAWN_CLEARANCE = 1.0
MIN_SPAWN_SEPARATION = 2.0  # meters between spawn points

# overall attempt budget is this multiple of the requested tree count
REJECTION_BUDGET_FACTOR = 1000


class WorldError(ValueError):
    """Invalid world parameters or world file contents."""


class WorldGenerationError(WorldError):
    """Rejection sampling could not satisfy the placement constraints."""


@dataclass(frozen=True)
class TreeObstacle:
    """Vertical cylinder obstacle (a tree trunk)."""

    x: float
    y: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0:
            raise WorldError(f"tree radius must be positive, got {self.radius}")
        if self.height <= 0:
            raise WorldError(f"tree height must be positive, got {self.height}")


@dataclass(frozen=True)
class DensityRegion:
    """Axis-aligned horizontal rectangle with its own tree density (trees/m^2)."""

    rect_min: tuple[float, float]
    rect_max: tuple[float, float]
    density: float

    def __post_init__(self):
        if not (self.rect_min[0] < self.rect_max[0] and self.rect_min[1] < self.rect_max[1]):
            raise WorldError(f"region rect_min must be < rect_max, got {self.rect_min} / {self.rect_max}")
        if self.density < 0:
            raise WorldError(f"region density must be >= 0, got {self.density}")

    @property
    def area(self) -> float:
        return (self.rect_max[0] - self.rect_min[0]) * (self.rect_max[1] - self.rect_min[1])


@dataclass(frozen=True, eq=True)
class World:
    """Ground-truth environment: a box from the origin with cylinder obstacles."""

    extent: tuple[float, float, float]
    trees: tuple[TreeObstacle, ...]
    spawn_points: tuple[tuple[float, float, float], ...]
    seed: int
    regions: tuple[DensityRegion, ...] = ()

    # dense views for vectorized queries, derived from trees
    _tree_xy: np.ndarray = field(init=False, repr=False, compare=False)
    _tree_radius: np.ndarray = field(init=False, repr=False, compare=False)
    _tree_height: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not all(e > 0 for e in self.extent):
            raise WorldError(f"extent must be positive, got {self.extent}")
        n = len(self.trees)
        xy = np.empty((n, 2), dtype=np.float64)
        rad = np.empty(n, dtype=np.float64)
        hgt = np.empty(n, dtype=np.float64)
        for i, t in enumerate(self.trees):
            xy[i, 0] = t.x
            xy[i, 1] = t.y
            rad[i] = t.radius
            hgt[i] = t.height
        object.__setattr__(self, "_tree_xy", xy)
        object.__setattr__(self, "_tree_radius", rad)
        object.__setattr__(self, "_tree_height", hgt)

    def tree_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(centers_xy, radii, heights) as read-only numpy arrays."""
        return self._tree_xy, self._tree_radius, self._tree_height

    def validate(self) -> None:
        """Check structural invariants; raises WorldError on violation."""
        ex, ey, ez = self.extent
        for i, t in enumerate(self.trees):
            if (t.x - t.radius < 0 or t.x + t.radius > ex
                    or t.y - t.radius < 0 or t.y + t.radius > ey):
                raise WorldError(f"tree {i} at ({t.x}, {t.y}) r={t.radius} outside extent")
            if t.height > ez:
                raise WorldError(f"tree {i} height {t.height} exceeds extent z {ez}")
        for s in self.spawn_points:
            if not (0 <= s[0] <= ex and 0 <= s[1] <= ey and 0 <= s[2] <= ez):
                raise WorldError(f"spawn point {s} outside extent")


def _sample_spawns(rng: np.random.Generator, extent, clearance: float, n_spawns: int):
    """Spawn points spread over the interior, pairwise >= MIN_SPAWN_SEPARATION apart."""
    ex, ey, ez = extent
    lo_x, hi_x = min(clearance, ex / 2), max(ex - clearance, ex / 2)
    lo_y, hi_y = min(clearance, ey / 2), max(ey - clearance, ey / 2)
    z = ez / 2.0
    spawns: list[tuple[float, float, float]] = []
    budget = 1000 * max(n_spawns, 1)
    while len(spawns) < n_spawns:
        if budget <= 0:
            raise WorldGenerationError(f"could not place {n_spawns} spawn points")
        budget -= 1
        x = rng.uniform(lo_x, hi_x)
        y = rng.uniform(lo_y, hi_y)
        if all(math.hypot(x - s[0], y - s[1]) >= MIN_SPAWN_SEPARATION for s in spawns):
            spawns.append((x, y, z))
    return tuple(spawns)


def generate_tiled_forest(
    seed: int,
    extent: tuple[float, float, float],
    regions: list[DensityRegion] | tuple[DensityRegion, ...],
    radius_range: tuple[float, float] = DEFAULT_RADIUS_RANGE,
    spawn_clearance: float = DEFAULT_SPAWN_CLEARANCE,
    n_spawns: int = 1,
) -> World:
    """Generate a forest whose regions tile the horizontal extent, each populated
    independently at its own density.

    Per region, the tree count is exactly round(density * area). Tree centers are
    sampled uniformly inside the region (inset by the tree radius at world edges
    so every tree fits inside the extent), and any tree whose surface would come
    within spawn_clearance of a spawn point is rejected and resampled. Trees span
    the full world height.

    Raises WorldGenerationError when rejection sampling exceeds 1000 attempts per
    requested tree (an over-dense request).
    """
    ex, ey, ez = extent
    if not (ex > 0 and ey > 0 and ez > 0):
        raise WorldError(f"extent must be positive, got {extent}")
    if radius_range[0] <= 0 or radius_range[0] > radius_range[1]:
        raise WorldError(f"invalid radius_range {radius_range}")
    regions = tuple(regions)
    _check_tiling(regions, ex, ey)

    rng = np.random.Generator(np.random.PCG64(seed))
    spawns = _sample_spawns(rng, extent, spawn_clearance, n_spawns)

    trees: list[TreeObstacle] = []
    for region in regions:
        count = int(round(region.density * region.area))
        budget = REJECTION_BUDGET_FACTOR * count
        placed = 0
        while placed < count:
            if budget <= 0:
                raise WorldGenerationError(
                    f"could not place {count} trees in region {region.rect_min}-{region.rect_max} "
                    f"(density {region.density} too high for the clearance constraints)")
            budget -= 1
            radius = rng.uniform(radius_range[0], radius_range[1])
            lo_x = max(region.rect_min[0], radius)
            hi_x = min(region.rect_max[0], ex - radius)
            lo_y = max(region.rect_min[1], radius)
            hi_y = min(region.rect_max[1], ey - radius)
            if lo_x >= hi_x or lo_y >= hi_y:
                continue
            x = rng.uniform(lo_x, hi_x)
            y = rng.uniform(lo_y, hi_y)
            too_close = any(
                math.hypot(x - s[0], y - s[1]) - radius < spawn_clearance for s in spawns)
            if too_close:
                continue
            trees.append(TreeObstacle(x=x, y=y, radius=radius, height=ez))
            placed += 1

    world = World(extent=(ex, ey, ez), trees=tuple(trees), spawn_points=spawns,
                  seed=seed, regions=regions)
    world.validate()
    return world


def generate_forest(
    seed: int,
    extent: tuple[float, float, float],
    density: float,
    radius_range: tuple[float, float] = DEFAULT_RADIUS_RANGE,
    spawn_clearance: float = DEFAULT_SPAWN_CLEARANCE,
    n_spawns: int = 1,
) -> World:
    """Generate a homogeneous forest: a single region covering the whole extent."""
    if density < 0:
        raise WorldError(f"density must be >= 0, got {density}")
    region = DensityRegion(rect_min=(0.0, 0.0), rect_max=(extent[0], extent[1]), density=density)
    world = generate_tiled_forest(seed, extent, (region,), radius_range,
                                  spawn_clearance, n_spawns)
    # a homogeneous world keeps no region list (round-trips leaner)
    return World(extent=world.extent, trees=world.trees, spawn_points=world.spawn_points,
                 seed=seed, regions=())


def quadrant_regions(extent: tuple[float, float, float],
                     densities: tuple[float, float, float, float] = (0.05, 0.10, 0.15, 0.20),
                     ) -> tuple[DensityRegion, ...]:
    """Four equal quadrants (SW, SE, NW, NE order) at the given densities."""
    ex, ey = extent[0], extent[1]
    mx, my = ex / 2.0, ey / 2.0
    boxes = [((0.0, 0.0), (mx, my)), ((mx, 0.0), (ex, my)),
             ((0.0, my), (mx, ey)), ((mx, my), (ex, ey))]
    return tuple(DensityRegion(rect_min=b[0], rect_max=b[1], density=d)
                 for b, d in zip(boxes, densities))


def _check_tiling(regions: tuple[DensityRegion, ...], ex: float, ey: float) -> None:
    """Regions must cover the horizontal extent exactly, without overlap."""
    if not regions:
        raise WorldError("at least one density region is required")
    total = 0.0
    for i, r in enumerate(regions):
        if r.rect_min[0] < -1e-9 or r.rect_min[1] < -1e-9 \
                or r.rect_max[0] > ex + 1e-9 or r.rect_max[1] > ey + 1e-9:
            raise WorldError(f"region {i} exceeds the world extent")
        total += r.area
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            a, b = regions[i], regions[j]
            ox = min(a.rect_max[0], b.rect_max[0]) - max(a.rect_min[0], b.rect_min[0])
            oy = min(a.rect_max[1], b.rect_max[1]) - max(a.rect_min[1], b.rect_min[1])
            if ox > 1e-9 and oy > 1e-9:
                raise WorldError(f"regions {i} and {j} overlap")
    if abs(total - ex * ey) > 1e-6 * max(ex * ey, 1.0):
        raise WorldError(f"regions cover {total} m^2 but the extent is {ex * ey} m^2")


def query_occupancy(world: World, point) -> bool:
    """True iff the point is inside (or on) a tree cylinder or outside the world box."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    ex, ey, ez = world.extent
    if not (0.0 <= x <= ex and 0.0 <= y <= ey and 0.0 <= z <= ez):
        return True
    xy, rad, hgt = world.tree_arrays()
    if len(rad) == 0:
        return False
    d2 = (xy[:, 0] - x) ** 2 + (xy[:, 1] - y) ** 2
    inside = (d2 <= rad ** 2) & (z >= 0.0) & (z <= hgt)
    return bool(inside.any())


def world_document(world: World) -> dict:
    """JSON-ready document for a world; the canonical on-disk representation."""
    doc = {
        "format": WORLD_FORMAT_VERSION,
        "seed": world.seed,
        "extent": list(world.extent),
        "trees": [{"x": t.x, "y": t.y, "radius": t.radius, "height": t.height}
                  for t in world.trees],
        "spawns": [list(s) for s in world.spawn_points],
    }
    if world.regions:
        doc["regions"] = [{"min": list(r.rect_min), "max": list(r.rect_max),
                           "density": r.density} for r in world.regions]
    return doc


def save_world(world: World, path) -> None:
    Path(path).write_text(json.dumps(world_document(world), indent=1) + "\n")


_WORLD_KEYS = {"format", "seed", "extent", "trees", "spawns", "regions"}
_TREE_KEYS = {"x", "y", "radius", "height"}


def load_world(path) -> World:
    """Load a world file written by save_world; load(save(w)) == w field-for-field."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorldError(f"malformed world file {path}: {e}") from e
    if not isinstance(doc, dict):
        raise WorldError(f"malformed world file {path}: expected a JSON object")
    for key in ("format", "seed", "extent", "trees", "spawns"):
        if key not in doc:
            raise WorldError(f"missing field {key}")
    for key in doc:
        if key not in _WORLD_KEYS:
            raise WorldError(f"unknown field {key}")
    if doc["format"] != WORLD_FORMAT_VERSION:
        raise WorldError(f"unsupported world format {doc['format']}")
    extent = _float_triple(doc["extent"], "extent")
    trees = []
    for i, entry in enumerate(doc["trees"]):
        for key in _TREE_KEYS:
            if key not in entry:
                raise WorldError(f"missing field {key} in trees[{i}]")
        trees.append(TreeObstacle(x=float(entry["x"]), y=float(entry["y"]),
                                  radius=float(entry["radius"]), height=float(entry["height"])))
    spawns = tuple(_float_triple(s, f"spawns[{i}]") for i, s in enumerate(doc["spawns"]))
    regions = tuple(
        DensityRegion(rect_min=tuple(float(v) for v in r["min"]),
                      rect_max=tuple(float(v) for v in r["max"]),
                      density=float(r["density"]))
        for r in doc.get("regions", []))
    world = World(extent=extent, trees=tuple(trees), spawn_points=spawns,
                  seed=int(doc["seed"]), regions=regions)
    world.validate()
    return world


def _float_triple(value, name: str) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise WorldError(f"field {name} must be a 3-vector")
    return (float(value[0]), float(value[1]), float(value[2]))
