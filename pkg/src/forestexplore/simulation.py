"""Mission orchestration: the sense -> map -> frontier -> plan -> move loop.

One `Simulation` owns the ground-truth world plus one mapping/planning stack
per agent and advances everything on a fixed time step. Agents tick in
ascending id order; the communication exchange is a barrier after all agent
ticks, so a run is fully deterministic for a given (seed, config).

Strategies:
* adaptive        — the full two-mode planner with peer coordination.
* fixed_explorer  — identical loop, mode pinned to Explorer at normal speed.
* split_map_*     — centralized baseline: the box is cut into equal slabs
                    along its longest horizontal axis, one agent confined to
                    each slab, no communication.

The vehicle flies at a fixed altitude (its spawn height snapped to a cell
center): planning reduces to the flight layer of the 3D map, which keeps
per-replan path queries cheap while the camera's vertical field of view still
paints the full height of the forest.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .coordination import (
    CoordinationParams,
    attraction_cost,
    exchange_and_sync,
    repulsion_pair,
    team_context,
)
from .frontier import (
    DEAD_AFTER_FAILURES,
    ClusterLabel,
    FrontierTracker,
    Viewpoint,
    cluster_frontiers,
    classify_all,
    sample_viewpoint,
)
from .grid_map import CellState, VoxelGrid
from .motion import AgentState, check_collision, has_arrived, step, string_pull
from .planner import (
    Mode,
    PlannerConfig,
    _astar_on_mask,
    collector_cost,
    explorer_cost,
    select_mode,
    select_target_collector,
    select_target_explorer,
)
from .sensor import DepthCamera, Pose, clamp_endpoints_to_box, render_depth_scan
from .world import World, WorldError, world_document

STRATEGIES = ("adaptive", "fixed_explorer", "split_map_adaptive", "split_map_fixed")

MAX_SPAWN_BUBBLE = 0.9          # m; stays inside the 1.0 m takeoff clearance
RETRY_REPLAN_GAP = 3            # replans between attempts on a stubborn cluster
SPLIT_SPAWN_CLEARANCE = 1.0     # m surface distance for synthesized slab spawns
TARGET_SWITCH_GAIN = 0.8        # a challenger must undercut the committed
                                # target's cost by this factor on a routine
                                # replan (stuck/arrival/mode-change replans
                                # re-select freely)


@dataclass(frozen=True)
class MissionConfig:
    world: World
    resolution: float = 0.1
    n_agents: int = 1
    strategy: str = "adaptive"
    dt: float = 0.1
    max_mission_time: float = 1500.0
    metric_sample_period: float = 1.0
    sensor_period: float = 0.1
    safety_margin: float = 0.3
    camera: DepthCamera | None = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    coordination: CoordinationParams = field(default_factory=CoordinationParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; "
                             f"expected one of {STRATEGIES}")
        if self.resolution <= 0 or self.max_mission_time <= 0:
            raise ValueError("resolution and max_mission_time must be positive")
        if self.metric_sample_period < self.dt or self.sensor_period < self.dt:
            raise ValueError("sample and sensor periods must be >= dt")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be non-negative")

    @property
    def adaptive_modes(self) -> bool:
        return self.strategy in ("adaptive", "split_map_adaptive")

    @property
    def split_map(self) -> bool:
        return self.strategy.startswith("split_map")

    def resolved_camera(self) -> DepthCamera:
        if self.camera is not None:
            return self.camera
        return DepthCamera.for_resolution(self.resolution)

    def to_dict(self) -> dict:
        p, c = self.planner, self.coordination
        cam = self.resolved_camera()
        return {
            "strategy": self.strategy,
            "n_agents": self.n_agents,
            "resolution": self.resolution,
            "dt": self.dt,
            "max_mission_time": self.max_mission_time,
            "metric_sample_period": self.metric_sample_period,
            "sensor_period": self.sensor_period,
            "safety_margin": self.safety_margin,
            "seed": self.seed,
            "camera": {"max_range": cam.max_range, "h_fov": cam.h_fov,
                       "v_fov": cam.v_fov, "h_rays": cam.h_rays,
                       "v_rays": cam.v_rays},
            "planner": {
                "weights": {"w_d": p.weights.w_d, "w_v": p.weights.w_v,
                            "w_l": p.weights.w_l, "p_trail": p.weights.p_trail,
                            "w_p": p.weights.w_p, "w_a": p.weights.w_a,
                            "w_f": p.weights.w_f, "d_max": p.weights.d_max},
                "limits": {"v_max": p.limits.v_max,
                           "yaw_rate_max": p.limits.yaw_rate_max,
                           "collector_speed_factor": p.limits.collector_speed_factor},
                "collector_trigger_min_trails": p.collector_trigger_min_trails,
                "collector_trigger_radius": p.collector_trigger_radius,
                "replan_period": p.replan_period,
                "stuck_displacement": p.stuck_displacement,
                "stuck_window": p.stuck_window,
                "mode_dwell": p.mode_dwell,
            },
            "coordination": {"comm_range": c.comm_range, "k_a": c.k_a,
                             "k_r": c.k_r, "d_0": c.d_0, "d_c": c.d_c,
                             "w_f": c.w_f, "sync_period": c.sync_period,
                             "verbatim_attraction": c.verbatim_attraction},
            "world": world_document(self.world),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class AgentReport:
    id: int
    distance_m: float
    mean_velocity: float
    active_time: float
    direct_explored_m3: float
    coverage_series: list[tuple[float, float]]
    mode_timeline: list[tuple[float, str]]
    collector_entries: int
    final_live_clusters: int
    final_live_trails: int
    dead_clusters: int


@dataclass
class MissionResult:
    completed: bool
    completion_time: float | None
    sim_time: float
    collision_count: int
    team_series: list[tuple[float, float]]
    agents: list[AgentReport]
    metrics_rows: list[dict]
    trajectory_rows: list[dict]
    message_log: list[dict]
    strategy: str
    seed: int
    config_digest: str
    config: dict = field(default_factory=dict)

    @property
    def team_explored_m3(self) -> float:
        return self.team_series[-1][1] if self.team_series else 0.0

    def summary_dict(self) -> dict:
        return {
            "schema": 1,
            "strategy": self.strategy,
            "seed": self.seed,
            "config_hash": self.config_digest,
            "config": self.config,  # every default materialized, for provenance
            "completed": self.completed,
            "completion_time": self.completion_time,
            "sim_time": self.sim_time,
            "collision_count": self.collision_count,
            "team_explored_m3": self.team_explored_m3,
            "total_distance_m": sum(a.distance_m for a in self.agents),
            "mean_velocity_mps": (sum(a.mean_velocity for a in self.agents)
                                  / len(self.agents)),
            "messages_exchanged": len(self.message_log),
            "agents": [{
                "id": a.id,
                "distance_m": a.distance_m,
                "mean_velocity": a.mean_velocity,
                "active_time": a.active_time,
                "direct_explored_m3": a.direct_explored_m3,
                "collector_entries": a.collector_entries,
                "final_live_clusters": a.final_live_clusters,
                "final_live_trails": a.final_live_trails,
                "dead_clusters": a.dead_clusters,
            } for a in self.agents],
        }

    def summary_json(self) -> bytes:
        return json.dumps(self.summary_dict(), sort_keys=True,
                          indent=1).encode() + b"\n"


class Agent:
    """Per-agent mapping, frontier, and planning state."""

    def __init__(self, aid: int, spawn, grid: VoxelGrid, team_grid: VoxelGrid):
        self.id = aid
        self.grid = grid
        self.tracker = FrontierTracker(grid)
        k_f = grid.world_to_cell(spawn)[2]
        self.k_f = k_f
        self.flight_z = grid.cell_to_world((0, 0, k_f))[2]
        self.state = AgentState(
            id=aid,
            position=np.array([spawn[0], spawn[1], self.flight_z]),
            yaw=0.0)
        self.cell_offset = tuple(
            int(round((grid.origin[a] - team_grid.origin[a]) / grid.resolution))
            for a in range(3))
        # exchange interface
        self.peers: dict[int, object] = {}
        self.connected: set[int] = set()
        self.goal: tuple[float, float, float] | None = None
        # planner bookkeeping
        self.complete = False
        self.complete_since: float | None = None
        self.prev_keys: set[bytes] = set()
        self.fail_counts: dict[bytes, int] = {}
        self.vp_cache: dict[bytes, Viewpoint | None] = {}
        self.retry_at: dict[bytes, int] = {}
        self.replan_counter = 0
        self.next_replan = 0.0
        self.next_sense = 0.0
        self.target_key: bytes | None = None
        self.arrived_at: float | None = None
        self.align_since: float | None = None
        self.stuck_pending = False
        self.history: deque[tuple[float, np.ndarray]] = deque()
        self.mode_changed_at = -math.inf
        self.mode_timeline: list[tuple[float, str]] = [(0.0, Mode.EXPLORER.value)]
        self.direct_known_cells = 0
        self.coverage_series: list[tuple[float, float]] = []
        self.live_clusters = 0
        self.live_trails = 0
        self.dead_keys: set[bytes] = set()

    def apply_map_update(self, idx: np.ndarray, states: np.ndarray) -> None:
        """Exchange entry point: merge peer cells and dirty the frontier mask."""
        changed = self.grid.apply_delta(idx, states)
        if changed:
            self.tracker.note_changes(idx)
            self.complete = False
            self.complete_since = None


def _disk_structure(radius_cells: float) -> np.ndarray:
    return _disk_cached(round(radius_cells, 9))


@lru_cache(maxsize=64)
def _disk_cached(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells + 1e-9))
    ii, jj = np.ogrid[-r:r + 1, -r:r + 1]
    return (ii * ii + jj * jj) <= radius_cells * radius_cells + 1e-9


class Simulation:
    """One deterministic mission; instrumentable via tick()."""

    def __init__(self, cfg: MissionConfig):
        cfg.world.validate()
        self.cfg = cfg
        self.world = cfg.world
        self.camera = cfg.resolved_camera()
        self.team_grid = VoxelGrid.from_extent(self.world.extent, cfg.resolution)
        self.comm_enabled = (not cfg.split_map) and cfg.n_agents > 1
        # set to a small value to force an out-of-range interval (the radio
        # blackout harness); the exchange keeps running and finds no peers
        self.comm_range_override: float | None = None
        self.agents: list[Agent] = []
        for aid, (grid, spawn) in enumerate(self._agent_slots()):
            ag = Agent(aid, spawn, grid, self.team_grid)
            self._carve_bubble(ag, spawn)
            self.agents.append(ag)
        self.t = 0.0
        self.ticks = 0
        # longest the vehicle can need to acquire a target yaw (a half turn),
        # plus slack; after this an un-acquired pose still counts as arrived
        self._align_grace = (math.pi / cfg.planner.limits.yaw_rate_max
                             + 2.0 * cfg.dt)
        self.next_sync = cfg.coordination.sync_period
        self.next_metric = cfg.metric_sample_period
        self.collision_count = 0
        self.completion_time: float | None = None
        self.message_log: list[dict] = []
        self.metrics_rows: list[dict] = []
        self.trajectory_rows: list[dict] = []
        self.team_series: list[tuple[float, float]] = []
        self._sample_metrics()  # t = 0 row: the spawn bubbles

    # -- construction -------------------------------------------------------

    def _agent_slots(self) -> list[tuple[VoxelGrid, tuple]]:
        cfg = self.cfg
        spawns = list(self.world.spawn_points)
        if not cfg.split_map:
            if cfg.n_agents > len(spawns):
                raise WorldError(
                    f"world provides {len(spawns)} spawn points, "
                    f"mission needs {cfg.n_agents}")
            return [(VoxelGrid.from_extent(self.world.extent, cfg.resolution),
                     spawns[i]) for i in range(cfg.n_agents)]
        return self._split_slots()

    def _split_slots(self) -> list[tuple[VoxelGrid, tuple]]:
        cfg = self.cfg
        ex, ey, ez = self.world.extent
        axis = 0 if ex >= ey else 1
        total = self.team_grid.dims[axis]
        res = cfg.resolution
        slots = []
        used = set()
        for i in range(cfg.n_agents):
            lo = round(i * total / cfg.n_agents)
            hi = round((i + 1) * total / cfg.n_agents)
            dims = list(self.team_grid.dims)
            dims[axis] = hi - lo
            origin = [0.0, 0.0, 0.0]
            origin[axis] = lo * res
            grid = VoxelGrid(res, tuple(dims), origin=tuple(origin))
            lo_m, hi_m = lo * res, hi * res
            spawn = self._slab_spawn(axis, lo_m, hi_m, used)
            slots.append((grid, spawn))
        return slots

    def _slab_spawn(self, axis, lo_m, hi_m, used) -> tuple:
        for s in self.world.spawn_points:
            if lo_m <= s[axis] < hi_m and s not in used:
                used.add(s)
                return s
        # no listed spawn in this slab: synthesize one near the slab center
        ex, ey, ez = self.world.extent
        xy, rad, hgt = self.world.tree_arrays()
        center = [ex / 2.0, ey / 2.0]
        center[axis] = (lo_m + hi_m) / 2.0
        res = self.cfg.resolution
        box_lo = [0.5, 0.5]
        box_hi = [ex - 0.5, ey - 0.5]
        box_lo[axis] = max(box_lo[axis], lo_m + 0.5)
        box_hi[axis] = min(box_hi[axis], hi_m - 0.5)
        candidates = []
        ni = int((box_hi[0] - box_lo[0]) / res) + 1
        nj = int((box_hi[1] - box_lo[1]) / res) + 1
        for i in range(ni):
            for j in range(nj):
                x = box_lo[0] + i * res
                y = box_lo[1] + j * res
                candidates.append((math.hypot(x - center[0], y - center[1]), x, y))
        candidates.sort()
        for _, x, y in candidates:
            if len(rad) == 0 or np.all(np.hypot(xy[:, 0] - x, xy[:, 1] - y)
                                       - rad >= SPLIT_SPAWN_CLEARANCE):
                spawn = (x, y, ez / 2.0)
                used.add(spawn)
                return spawn
        raise WorldError(f"no collision-free spawn found for slab "
                         f"[{lo_m:.1f}, {hi_m:.1f}) on axis {axis}")

    def _carve_bubble(self, ag: Agent, spawn) -> None:
        """Mark the certified-free takeoff ball around the spawn as known,
        giving the planner somewhere to stand before the first scan lands.

        The radius is capped by the true distance to the nearest obstacle
        surface (minus a half cell so every carved cell lies wholly in empty
        space) — the flying-site equivalent of checking the launch area."""
        xy, rad, _ = self.world.tree_arrays()
        r_max = MAX_SPAWN_BUBBLE
        if len(rad):
            nearest = float(np.min(np.hypot(xy[:, 0] - spawn[0],
                                            xy[:, 1] - spawn[1]) - rad))
            r_max = min(r_max, nearest - math.sqrt(3.0) / 2.0 * self.cfg.resolution)
        if r_max <= 0:
            return
        for grid, own in ((ag.grid, True), (self.team_grid, False)):
            res = grid.resolution
            r = r_max
            lo = [int(math.floor((spawn[a] - r - grid.origin[a]) / res)) for a in range(3)]
            hi = [int(math.floor((spawn[a] + r - grid.origin[a]) / res)) for a in range(3)]
            lo = [max(v, 0) for v in lo]
            hi = [min(hi[a], grid.dims[a] - 1) for a in range(3)]
            if any(lo[a] > hi[a] for a in range(3)):
                continue
            ii, jj, kk = np.mgrid[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            cx = grid.origin[0] + (ii + 0.5) * res - spawn[0]
            cy = grid.origin[1] + (jj + 0.5) * res - spawn[1]
            cz = grid.origin[2] + (kk + 0.5) * res - spawn[2]
            inside = cx * cx + cy * cy + cz * cz <= r * r
            idx = np.ravel_multi_index(
                (ii[inside], jj[inside], kk[inside]), grid.dims).astype(np.int64)
            states = np.full(len(idx), int(CellState.FREE), dtype=np.uint8)
            if own:
                before = grid.coverage().known_cells
                ag.apply_map_update(idx, states)
                ag.direct_known_cells += grid.coverage().known_cells - before
                ag.complete = False
            else:
                grid.apply_delta(idx, states)

    # -- per-tick pipeline ----------------------------------------------------

    def tick(self) -> None:
        """Advance the mission by one dt."""
        cfg = self.cfg
        # multiples of dt rounded at the 9th decimal, so sampled times are
        # exact decimals rather than accumulated float drift
        t_now = self.t
        t_next = round((self.ticks + 1) * cfg.dt, 9)
        self.ticks += 1
        for ag in self.agents:
            if t_now >= ag.next_sense - 1e-9:
                self._sense(ag)
                ag.next_sense += cfg.sensor_period
            stuck = self._update_stuck(ag, t_now)
            at_pose = (ag.state.target is not None and not ag.state.path
                       and float(np.linalg.norm(
                           ag.state.position
                           - np.asarray(ag.state.target.position)))
                       <= cfg.resolution)
            if not at_pose:
                ag.align_since = None
            elif ag.align_since is None:
                ag.align_since = t_now
            arrived = at_pose and (
                has_arrived(ag.state, cfg.resolution)
                or t_now - ag.align_since >= self._align_grace)
            if arrived and ag.arrived_at is None:
                ag.arrived_at = t_now
            periodic = t_now >= ag.next_replan - 1e-9
            if at_pose and not arrived:
                # hold the goal while the yaw settles on the pose just
                # reached; a periodic re-selection here can flip the goal
                # every period (peer goal repulsion does exactly that when
                # two agents meet) and starve the arrival — and the failure
                # accounting that retires unresolvable clusters — forever
                periodic = False
            if (periodic or stuck
                    or (arrived and ag.arrived_at is not None
                        and t_now > ag.arrived_at)):
                self._replan(ag, t_now, stuck=stuck, arrived=arrived)
                ag.next_replan = t_now + cfg.planner.replan_period
            step(ag.state, cfg.dt, cfg.planner.limits,
                 ag.state.mode if cfg.adaptive_modes else Mode.EXPLORER)
            if check_collision(ag.state, self.world, cfg.safety_margin):
                self.collision_count += 1
        self.t = t_next
        if self.comm_enabled and t_next >= self.next_sync - 1e-9:
            params = cfg.coordination
            if self.comm_range_override is not None:
                params = dataclasses.replace(
                    params, comm_range=self.comm_range_override)
            exchange_and_sync(self.agents, params, t_next, self.message_log)
            self.next_sync += cfg.coordination.sync_period
        if t_next >= self.next_metric - 1e-9:
            self._sample_metrics()
            self.next_metric += cfg.metric_sample_period
        if self.completion_time is None and all(a.complete for a in self.agents):
            self.completion_time = t_next

    def run(self) -> MissionResult:
        n_ticks = int(round(self.cfg.max_mission_time / self.cfg.dt))
        for _ in range(n_ticks):
            self.tick()
            if self.collision_count or self.completion_time is not None:
                break
        if self.team_series[-1][0] != self.t:
            self._sample_metrics()  # exact end-state row
        return compute_metrics(self)

    # -- sensing --------------------------------------------------------------

    def _sense(self, ag: Agent) -> None:
        st = ag.state
        pose = Pose(position=(st.position[0], st.position[1], st.position[2]),
                    yaw=st.yaw)
        scan = render_depth_scan(self.world, pose, self.camera)
        ends = clamp_endpoints_to_box(scan.endpoints(), self.world.extent)
        before = ag.grid.coverage().known_cells
        idx, states = ag.grid.integrate_scan(pose.position, ends, scan.hits)
        if len(idx):
            ag.tracker.note_changes(idx)
            ag.complete = False
            ag.complete_since = None
            ag.direct_known_cells += ag.grid.coverage().known_cells - before
            self.team_grid.apply_delta(self._to_team_idx(ag, idx), states)

    def _to_team_idx(self, ag: Agent, idx: np.ndarray) -> np.ndarray:
        if ag.cell_offset == (0, 0, 0) and ag.grid.dims == self.team_grid.dims:
            return idx
        coords = np.array(np.unravel_index(idx, ag.grid.dims))
        for a in range(3):
            coords[a] += ag.cell_offset[a]
        return np.ravel_multi_index(tuple(coords), self.team_grid.dims).astype(np.int64)

    # -- planning -------------------------------------------------------------

    def _plan_mask2d(self, ag: Agent) -> np.ndarray:
        """Traversability at the flight layer: known-Free and clear of any
        Occupied or Unknown cell by the safety margin.

        Unknown repels because an obstacle surface can sit just past the
        known/unknown boundary. The margin is padded by one cell diagonal:
        the dilation measures center-to-center distance, but the vehicle
        moves continuously between cell centers and an obstacle surface sits
        up to half a diagonal from the center of the cell recording it."""
        grid = ag.grid
        res = grid.resolution
        cells = grid.cells
        r_cells = (self.cfg.safety_margin + math.sqrt(2.0) * res + 1e-9) / res
        max_dz = int(math.floor(r_cells))
        nz = grid.dims[2]
        blocked = np.zeros(grid.dims[:2], dtype=bool)
        for dz in range(-max_dz, max_dz + 1):
            k = ag.k_f + dz
            if k < 0 or k >= nz:
                continue
            lateral = math.sqrt(max(r_cells * r_cells - dz * dz, 0.0))
            layer = cells[:, :, k] != int(CellState.FREE)
            if lateral < 1e-9:
                blocked |= layer
            else:
                blocked |= ndimage.binary_dilation(
                    layer, structure=_disk_structure(lateral))
        return (cells[:, :, ag.k_f] == int(CellState.FREE)) & ~blocked

    def _update_stuck(self, ag: Agent, t_now: float) -> bool:
        pcfg = self.cfg.planner
        ag.history.append((t_now, ag.state.position.copy()))
        while ag.history and ag.history[0][0] < t_now - pcfg.stuck_window - 1e-9:
            ag.history.popleft()
        if ag.state.target is None or has_arrived(ag.state, self.cfg.resolution):
            return False
        t0, p0 = ag.history[0]
        if t_now - t0 < pcfg.stuck_window - 1e-9:
            return False
        if float(np.linalg.norm(ag.state.position - p0)) >= pcfg.stuck_displacement:
            return False
        ag.history.clear()
        ag.history.append((t_now, ag.state.position.copy()))
        if ag.target_key is not None:
            ag.fail_counts[ag.target_key] = ag.fail_counts.get(ag.target_key, 0) + 1
        return True

    def _replan(self, ag: Agent, t_now: float, stuck: bool, arrived: bool) -> None:
        cfg = self.cfg
        pcfg = cfg.planner
        grid = ag.grid
        res = grid.resolution
        ag.replan_counter += 1

        frontier_idx = ag.tracker.frontier_cells()
        clusters = cluster_frontiers(frontier_idx, grid)
        classify_all(clusters, grid)
        keys = {c.cell_key for c in clusters}
        fresh = keys - ag.prev_keys
        ag.prev_keys = keys

        # an arrival that failed to dissolve the targeted cluster is a failed
        # attempt; three of those kill the cluster so missions always end
        if arrived and ag.target_key is not None and ag.target_key in keys:
            ag.fail_counts[ag.target_key] = ag.fail_counts.get(ag.target_key, 0) + 1
        if arrived:
            ag.arrived_at = None
            ag.state.target = None
            ag.target_key = None
            ag.goal = None

        mask2d = self._plan_mask2d(ag)
        ci, cj, _ = grid.world_to_cell(ag.state.position)
        mask2d[ci, cj] = True
        dist2d = _kernels.dijkstra_grid(mask2d.astype(np.uint8), ci, cj)

        mask3d = np.zeros(grid.dims, dtype=bool)
        mask3d[:, :, ag.k_f] = mask2d

        def reachable_cell(cell) -> bool:
            return bool(dist2d[cell[0], cell[1]] < _kernels.UNREACHED)

        def path_length_fn(pos) -> float:
            i = int(math.floor((pos[0] - grid.origin[0]) / res))
            j = int(math.floor((pos[1] - grid.origin[1]) / res))
            if not (0 <= i < grid.dims[0] and 0 <= j < grid.dims[1]):
                return math.inf
            d = float(dist2d[i, j])
            return math.inf if d >= _kernels.UNREACHED else d * res

        self._attach_viewpoints(ag, clusters, mask2d, mask3d, reachable_cell,
                                path_length_fn)

        live = [c for c in clusters if not c.dead]
        ag.live_clusters = len(live)
        ag.live_trails = sum(1 for c in live if c.label == ClusterLabel.TRAIL)
        ag.dead_keys = {c.cell_key for c in clusters if c.dead}
        if not live:
            ag.complete = True
            if ag.complete_since is None:
                ag.complete_since = t_now
            ag.state.target = None
            ag.state.path = []
            ag.target_key = None
            ag.goal = None
            return
        ag.complete = False
        ag.complete_since = None

        mode_changed = False
        if cfg.adaptive_modes:
            want = select_mode(ag.state, clusters, pcfg)
            if (want != ag.state.mode
                    and t_now - ag.mode_changed_at >= pcfg.mode_dwell - 1e-9):
                ag.state.mode = want
                ag.mode_changed_at = t_now
                ag.mode_timeline.append((t_now, want.value))
                mode_changed = True
        team = None
        if self.comm_enabled and ag.connected:
            team = team_context(ag, t_now)

        sticky = not (stuck or ag.stuck_pending or mode_changed)
        candidates = list(clusters)
        while True:
            target = None
            if ag.state.mode == Mode.COLLECTOR:
                target = select_target_collector(
                    candidates, ag.state, pcfg, team, cfg.coordination,
                    path_length_fn=path_length_fn)
            if target is None:
                target = select_target_explorer(
                    candidates, ag.state, pcfg, team, cfg.coordination,
                    path_length_fn=path_length_fn, fresh_keys=fresh,
                    stuck=stuck or ag.stuck_pending)
            if target is None:
                # live clusters remain but none is targetable right now
                ag.state.target = None
                ag.state.path = []
                ag.target_key = None
                ag.goal = None
                ag.stuck_pending = False
                return
            if sticky and target.cell_key != ag.target_key:
                kept = self._keep_incumbent(ag, target, clusters, pcfg, team,
                                            path_length_fn)
                if kept is not None:
                    target = kept
            waypoints = self._commit_path(ag, mask2d, target.viewpoint)
            if waypoints is None:
                key = target.cell_key
                ag.fail_counts[key] = ag.fail_counts.get(key, 0) + 1
                candidates = [c for c in candidates if c.cell_key != key]
                continue
            ag.state.target = target.viewpoint
            ag.state.path = waypoints
            ag.target_key = target.cell_key
            ag.goal = target.viewpoint.position
            ag.stuck_pending = False
            return

    def _keep_incumbent(self, ag: Agent, challenger, clusters, pcfg, team,
                        path_length_fn):
        """The committed target, if it should survive a routine replan.

        Re-selecting from scratch every period lets perfectly synchronized
        agents with merged maps flap: they pick the same viewpoint, the goal
        repulsion makes both flee it at the next replan, and the pair
        oscillates in lockstep without ever finishing an approach — the yaw
        never settles, so arrivals (and the failure accounting that retires
        unresolvable clusters) never fire. Demanding that a challenger
        decisively undercut the committed target breaks the cycle; a stuck,
        arrived, or mode-switch replan still re-selects freely.

        The comparison strips cost terms that are identical for every
        candidate (peer-position repulsion, and attraction under the verbatim
        flag): they cannot change which target wins, but left in they dilute
        the ratio test whenever agents stand close together — exactly the
        situation the commitment exists for.

        Returns the incumbent cluster to keep, or None to adopt the
        challenger.
        """
        if ag.target_key is None:
            return None
        inc = next((c for c in clusters if c.cell_key == ag.target_key), None)
        if inc is None or inc.dead or inc.viewpoint is None:
            return None
        d_inc = path_length_fn(inc.viewpoint.position)
        if not math.isfinite(d_inc):
            return None
        d_new = path_length_fn(challenger.viewpoint.position)
        coord = self.cfg.coordination
        if ag.state.mode == Mode.COLLECTOR:
            c_new = collector_cost(challenger.viewpoint, ag.state, pcfg,
                                   team, coord, path_length=d_new)
            c_inc = collector_cost(inc.viewpoint, ag.state, pcfg,
                                   team, coord, path_length=d_inc)
        else:
            c_new = explorer_cost(challenger.viewpoint, challenger.label,
                                  ag.state, pcfg, team, coord,
                                  path_length=d_new)
            c_inc = explorer_cost(inc.viewpoint, inc.label, ag.state, pcfg,
                                  team, coord, path_length=d_inc)
        flat = 0.0
        if team is not None and team.peers:
            here = tuple(ag.state.position)
            flat = sum(repulsion_pair(math.dist(here, tuple(p.position)),
                                      coord.k_r, coord.d_0, coord.d_c)
                       for p in team.peers)
            if coord.verbatim_attraction:
                flat += attraction_cost(here, ag.state.mode, team.peers,
                                        coord.k_a)
            flat *= pcfg.weights.w_f
        if c_new - flat < TARGET_SWITCH_GAIN * (c_inc - flat):
            return None
        return inc

    def _attach_viewpoints(self, ag: Agent, clusters, mask2d, mask3d,
                           reachable_cell, path_length_fn) -> None:
        """Give every live cluster its cached or freshly sampled viewpoint.

        Sampling failures (no valid pose, or pose unreachable) are retried at
        most every RETRY_REPLAN_GAP replans and each failure counts toward the
        cluster's death, so unviewable pockets cannot stall completion."""
        grid = ag.grid
        res = grid.resolution
        for c in clusters:
            c.dead = ag.fail_counts.get(c.cell_key, 0) >= DEAD_AFTER_FAILURES
            if c.dead:
                c.viewpoint = None
                continue
            key = c.cell_key
            vp = ag.vp_cache.get(key)
            valid = False
            if vp is not None:
                i = int(math.floor((vp.position[0] - grid.origin[0]) / res))
                j = int(math.floor((vp.position[1] - grid.origin[1]) / res))
                valid = (0 <= i < grid.dims[0] and 0 <= j < grid.dims[1]
                         and mask2d[i, j] and reachable_cell((i, j)))
            if not valid:
                if key in ag.vp_cache and ag.retry_at.get(key, 0) > ag.replan_counter:
                    c.viewpoint = None
                    continue
                vp = sample_viewpoint(c, grid, self.camera,
                                      planning_free=mask3d,
                                      valid_fn=reachable_cell,
                                      ring_z=ag.flight_z)
                ag.vp_cache[key] = vp
                if vp is None:
                    ag.fail_counts[key] = ag.fail_counts.get(key, 0) + 1
                    ag.retry_at[key] = ag.replan_counter + RETRY_REPLAN_GAP
                    c.dead = ag.fail_counts[key] >= DEAD_AFTER_FAILURES
            c.viewpoint = vp

    def _commit_path(self, ag: Agent, mask2d, vp: Viewpoint):
        grid = ag.grid
        res = grid.resolution
        ci, cj, _ = grid.world_to_cell(ag.state.position)
        gi = int(math.floor((vp.position[0] - grid.origin[0]) / res))
        gj = int(math.floor((vp.position[1] - grid.origin[1]) / res))
        passable = mask2d[:, :, None].astype(np.uint8)
        path = _astar_on_mask(passable, (ci, cj, 0), (gi, gj, 0),
                              passable.shape)
        if path is None:
            return None
        waypoints = string_pull(path, passable, res)
        out = []
        for wp in waypoints:
            out.append(np.array([grid.origin[0] + wp[0],
                                 grid.origin[1] + wp[1], ag.flight_z]))
        return out

    # -- metrics ----------------------------------------------------------------

    def _sample_metrics(self) -> None:
        t = self.t
        vol_scale = self.cfg.resolution ** 3
        team_m3 = self.team_grid.coverage().explored_volume
        self.team_series.append((t, team_m3))
        mean_vs = []
        total_dist = 0.0
        for ag in self.agents:
            active = ag.complete_since if ag.complete_since is not None else t
            dist = ag.state.distance_travelled
            mean_v = dist / active if active > 0 else 0.0
            mean_vs.append(mean_v)
            total_dist += dist
            direct_m3 = ag.direct_known_cells * vol_scale
            ag.coverage_series.append((t, direct_m3))
            self.metrics_rows.append({
                "t": t, "agent": str(ag.id), "explored_m3": direct_m3,
                "distance_m": dist, "mean_v": mean_v})
            self.trajectory_rows.append({
                "t": t, "agent": ag.id,
                "x": float(ag.state.position[0]),
                "y": float(ag.state.position[1]),
                "z": float(ag.state.position[2]),
                "yaw": ag.state.yaw,
                "speed": ag.state.speed,
                "mode": ag.state.mode.value,
                "target": (list(ag.state.target.position)
                           if ag.state.target is not None else None)})
        self.metrics_rows.append({
            "t": t, "agent": "team", "explored_m3": team_m3,
            "distance_m": total_dist,
            "mean_v": sum(mean_vs) / len(mean_vs)})


def compute_metrics(sim: Simulation) -> MissionResult:
    """Fold a finished simulation's raw logs into the mission report."""
    completed = sim.completion_time is not None and sim.collision_count == 0
    end = sim.completion_time if completed else sim.t
    agents = []
    for ag in sim.agents:
        active = ag.complete_since if ag.complete_since is not None else end
        dist = ag.state.distance_travelled
        agents.append(AgentReport(
            id=ag.id,
            distance_m=dist,
            mean_velocity=dist / active if active > 0 else 0.0,
            active_time=active,
            direct_explored_m3=ag.direct_known_cells * sim.cfg.resolution ** 3,
            coverage_series=list(ag.coverage_series),
            mode_timeline=list(ag.mode_timeline),
            collector_entries=sum(1 for _, m in ag.mode_timeline
                                  if m == Mode.COLLECTOR.value),
            final_live_clusters=ag.live_clusters,
            final_live_trails=ag.live_trails,
            dead_clusters=len(ag.dead_keys),
        ))
    return MissionResult(
        completed=completed,
        completion_time=sim.completion_time if completed else None,
        sim_time=end,
        collision_count=sim.collision_count,
        team_series=list(sim.team_series),
        agents=agents,
        metrics_rows=list(sim.metrics_rows),
        trajectory_rows=list(sim.trajectory_rows),
        message_log=list(sim.message_log),
        strategy=sim.cfg.strategy,
        seed=sim.cfg.seed,
        config_digest=sim.cfg.digest(),
        config=sim.cfg.to_dict(),
    )


def run_mission(cfg: MissionConfig) -> MissionResult:
    return Simulation(cfg).run()


def run_fixed_mode_baseline(cfg: MissionConfig) -> MissionResult:
    if not cfg.strategy.startswith("split_map"):
        cfg = MissionConfig(**{**_cfg_kwargs(cfg), "strategy": "fixed_explorer"})
    else:
        cfg = MissionConfig(**{**_cfg_kwargs(cfg), "strategy": "split_map_fixed"})
    return Simulation(cfg).run()


def run_split_map(cfg: MissionConfig) -> MissionResult:
    if cfg.n_agents < 1:
        raise ValueError("split-map needs at least one agent")
    if not cfg.strategy.startswith("split_map"):
        strategy = ("split_map_adaptive" if cfg.adaptive_modes
                    else "split_map_fixed")
        cfg = MissionConfig(**{**_cfg_kwargs(cfg), "strategy": strategy})
    return Simulation(cfg).run()


def _cfg_kwargs(cfg: MissionConfig) -> dict:
    return {
        "world": cfg.world, "resolution": cfg.resolution,
        "n_agents": cfg.n_agents, "strategy": cfg.strategy, "dt": cfg.dt,
        "max_mission_time": cfg.max_mission_time,
        "metric_sample_period": cfg.metric_sample_period,
        "sensor_period": cfg.sensor_period,
        "safety_margin": cfg.safety_margin, "camera": cfg.camera,
        "planner": cfg.planner, "coordination": cfg.coordination,
        "seed": cfg.seed,
    }


# -- artifacts ----------------------------------------------------------------

def write_artifacts(result: MissionResult, outdir) -> dict[str, Path]:
    """Write trajectory JSONL, metrics CSV, and summary JSON; returns paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    traj = out / "trajectory.jsonl"
    with traj.open("w") as f:
        for row in result.trajectory_rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    paths["trajectory"] = traj

    metrics = out / "metrics.csv"
    with metrics.open("w") as f:
        f.write("# schema=1 config_hash=%s seed=%d\n"
                % (result.config_digest, result.seed))
        f.write("t,agent,explored_m3,distance_m,mean_v\n")
        for row in result.metrics_rows:
            f.write("%s,%s,%s,%s,%s\n" % (
                _num(row["t"]), row["agent"], _num(row["explored_m3"]),
                _num(row["distance_m"]), _num(row["mean_v"])))
    paths["metrics"] = metrics

    summary = out / "summary.json"
    summary.write_bytes(result.summary_json())
    paths["summary"] = summary
    return paths


def _num(v: float) -> str:
    return repr(float(v))
