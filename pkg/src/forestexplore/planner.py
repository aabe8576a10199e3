"""Mode selection, target-viewpoint selection, and grid path planning.

Two planning personalities share one candidate pool:

* Explorer — cautious frontier chasing. Cost couples path length, the angle
  between the current motion direction and the candidate, and a penalty that
  de-prioritizes trail clusters, so the robot sweeps large unknown regions
  and leaves small occlusion islands behind.
* Collector — aggressive trail clearing at elevated speed. Cost is the
  estimated travel time plus yaw-alignment time, re-evaluated greedily after
  each trail is cleared.

All selectors are pure functions of their inputs and break ties by cluster
id, so identical (map revision, robot state, config) always produce the same
choice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .frontier import ClusterLabel, FrontierCluster, Viewpoint
from .geometry import angle_diff
from .grid_map import CellState, VoxelGrid


class Mode(Enum):
    EXPLORER = "explorer"
    COLLECTOR = "collector"


@dataclass(frozen=True)
class CostWeights:
    w_d: float = 1.0        # per meter of path
    w_v: float = 3.0        # per radian of motion-direction mismatch
    w_l: float = 1.0        # scales the trail-label penalty
    p_trail: float = 10.0   # penalty assigned to Trail clusters
    w_p: float = 1.0        # collector: per second of travel time
    w_a: float = 1.0        # collector: per second of yaw alignment
    w_f: float = 1.0        # team-cost contribution
    d_max: float = 15.0     # fallback search radius, meters

    def __post_init__(self):
        vals = (self.w_d, self.w_v, self.w_l, self.p_trail,
                self.w_p, self.w_a, self.w_f, self.d_max)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("weights must be finite and non-negative")
        if self.w_d == 0 and self.w_v == 0:
            raise ValueError("at least one of w_d, w_v must be positive")


@dataclass(frozen=True)
class DynamicLimits:
    v_max: float = 1.5                  # m/s
    yaw_rate_max: float = 0.9           # rad/s
    collector_speed_factor: float = 2.0

    def __post_init__(self):
        if min(self.v_max, self.yaw_rate_max, self.collector_speed_factor) <= 0:
            raise ValueError("dynamic limits must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    weights: CostWeights = field(default_factory=CostWeights)
    limits: DynamicLimits = field(default_factory=DynamicLimits)
    collector_trigger_min_trails: int = 1
    collector_trigger_radius: float = 10.0
    replan_period: float = 1.0
    stuck_displacement: float = 0.2     # meters over stuck_window
    stuck_window: float = 3.0           # seconds
    mode_dwell: float = 1.0             # min seconds between mode switches

    def __post_init__(self):
        if self.collector_trigger_min_trails < 1:
            raise ValueError("collector_trigger_min_trails must be >= 1")
        if self.collector_trigger_radius <= 0 or self.replan_period <= 0:
            raise ValueError("radii and periods must be positive")


# -- path planning -----------------------------------------------------------

def astar_path(planning_grid: VoxelGrid, start, goal):
    """Shortest 26-connected path over Free cells of the planning grid.

    Edge costs are Euclidean (res, sqrt(2) res, sqrt(3) res); Unknown and
    Occupied cells are not traversable. Returns the start..goal cell list, or
    None when no Free path exists. Equal-cost ties resolve lexicographically.
    """
    passable = (planning_grid.cells == CellState.FREE).astype(np.uint8)
    return _astar_on_mask(passable, start, goal, planning_grid.dims)


def _astar_on_mask(passable: np.ndarray, start, goal, dims):
    si, sj, sk = start
    gi, gj, gk = goal
    for c, d in ((start, dims), (goal, dims)):
        if not all(0 <= c[a] < d[a] for a in range(3)):
            return None
    flat = _kernels.astar_grid(passable, si, sj, sk, gi, gj, gk)
    if len(flat) == 0:
        return None
    ny, nz = dims[1], dims[2]
    return [(int(f // (ny * nz)), int((f // nz) % ny), int(f % nz)) for f in flat]


def path_length_m(path, resolution: float) -> float:
    if path is None or len(path) < 2:
        return 0.0
    p = np.asarray(path, dtype=float)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) * resolution


# -- cost functions ----------------------------------------------------------

def direction_cost(vp_position, robot) -> float:
    """Angle in [0, pi] between the robot's motion direction and the candidate.

    Falls back to the heading vector when the robot is at rest, and is defined
    as 0 for a candidate coincident with the robot position.
    """
    dx = vp_position[0] - robot.position[0]
    dy = vp_position[1] - robot.position[1]
    dz = vp_position[2] - robot.position[2]
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    if norm < 1e-9:
        return 0.0
    v = robot.velocity
    speed = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    if speed < 1e-9:
        v = (math.cos(robot.yaw), math.sin(robot.yaw), 0.0)
        speed = 1.0
    dot = (v[0] * dx + v[1] * dy + v[2] * dz) / (speed * norm)
    return math.acos(min(1.0, max(-1.0, dot)))


def label_cost(cluster_label: ClusterLabel, weights: CostWeights) -> float:
    return weights.p_trail if cluster_label == ClusterLabel.TRAIL else 0.0


def explorer_cost(vp: Viewpoint, cluster_label: ClusterLabel, robot,
                  cfg: PlannerConfig, team=None, coord=None, *,
                  path_length: float) -> float:
    """w_d * path_length + w_v * direction angle + w_l * label penalty
    (+ w_f * team cost when a team context is given)."""
    w = cfg.weights
    cost = (w.w_d * path_length
            + w.w_v * direction_cost(vp.position, robot)
            + w.w_l * label_cost(cluster_label, w))
    if team is not None and team.peers:
        from .coordination import team_cost
        cost += w.w_f * team_cost(vp, robot, team, coord)
    return cost


def collector_cost(vp: Viewpoint, robot, cfg: PlannerConfig, team=None,
                   coord=None, *, path_length: float) -> float:
    """w_p * travel time + w_a * yaw alignment time (+ w_f * team cost)."""
    w = cfg.weights
    lim = cfg.limits
    cost = (w.w_p * path_length / lim.v_max
            + w.w_a * angle_diff(robot.yaw, vp.yaw) / lim.yaw_rate_max)
    if team is not None and team.peers:
        from .coordination import team_cost
        cost += w.w_f * team_cost(vp, robot, team, coord)
    return cost


# -- selectors ----------------------------------------------------------------

def select_target_explorer(clusters: list[FrontierCluster], robot,
                           cfg: PlannerConfig, team=None, coord=None, *,
                           path_length_fn, fresh_keys=None,
                           stuck: bool = False):
    """Explorer target choice.

    Primary rule: cheapest full-cost candidate among clusters from the latest
    map update (fresh_keys) that lie mostly ahead of the motion direction
    (direction angle <= pi/2). When that set is empty — or the robot is
    flagged stuck — fall back to the cheapest candidate with the direction
    term dropped, restricted to straight-line distance <= d_max; when even
    that is empty the d_max bound is ignored so missions can always finish.

    path_length_fn maps a viewpoint position to path length in meters (inf if
    unreachable). Returns the winning cluster or None when no live cluster has
    a reachable viewpoint.
    """
    w = cfg.weights
    live = [(c, path_length_fn(c.viewpoint.position)) for c in clusters
            if not c.dead and c.viewpoint is not None]
    live = [(c, d) for (c, d) in live if math.isfinite(d)]
    if not live:
        return None
    if fresh_keys is None:
        fresh_keys = {c.cell_key for c in clusters}

    if not stuck:
        best = None
        for c, dist in live:
            if c.cell_key not in fresh_keys:
                continue
            if direction_cost(c.viewpoint.position, robot) > math.pi / 2:
                continue
            cost = explorer_cost(c.viewpoint, c.label, robot, cfg, team, coord,
                                 path_length=dist)
            if best is None or (cost, c.id) < best[:2]:
                best = (cost, c.id, c)
        if best is not None:
            return best[2]

    def fallback_cost(c, dist):
        cost = w.w_d * dist + w.w_l * label_cost(c.label, w)
        if team is not None and team.peers:
            from .coordination import team_cost
            cost += w.w_f * team_cost(c.viewpoint, robot, team, coord)
        return cost

    for bounded in (True, False):
        best = None
        for c, dist in live:
            if bounded:
                dx = c.viewpoint.position[0] - robot.position[0]
                dy = c.viewpoint.position[1] - robot.position[1]
                dz = c.viewpoint.position[2] - robot.position[2]
                if math.sqrt(dx * dx + dy * dy + dz * dz) > w.d_max:
                    continue
            cost = fallback_cost(c, dist)
            if best is None or (cost, c.id) < best[:2]:
                best = (cost, c.id, c)
        if best is not None:
            return best[2]
    return None


def select_target_collector(trails: list[FrontierCluster], robot,
                            cfg: PlannerConfig, team=None, coord=None, *,
                            path_length_fn):
    """Greedy nearest-in-cost trail; None when no live trail remains."""
    best = None
    for c in trails:
        if c.dead or c.viewpoint is None or c.label != ClusterLabel.TRAIL:
            continue
        dist = path_length_fn(c.viewpoint.position)
        if not math.isfinite(dist):
            continue
        cost = collector_cost(c.viewpoint, robot, cfg, team, coord,
                              path_length=dist)
        if best is None or (cost, c.id) < best[:2]:
            best = (cost, c.id, c)
    return best[2] if best else None


def select_mode(robot, clusters: list[FrontierCluster], cfg: PlannerConfig) -> Mode:
    """Collector iff enough live trails sit within the trigger radius."""
    n = 0
    for c in clusters:
        if c.dead or c.label != ClusterLabel.TRAIL:
            continue
        dx = c.centroid[0] - robot.position[0]
        dy = c.centroid[1] - robot.position[1]
        dz = c.centroid[2] - robot.position[2]
        if math.sqrt(dx * dx + dy * dy + dz * dz) <= cfg.collector_trigger_radius:
            n += 1
            if n >= cfg.collector_trigger_min_trails:
                return Mode.COLLECTOR
    return Mode.EXPLORER


def speed_limit(mode: Mode, limits: DynamicLimits) -> float:
    if mode == Mode.COLLECTOR:
        return limits.collector_speed_factor * limits.v_max
    return limits.v_max
