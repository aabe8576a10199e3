"""Kinematic vehicle model and path following.

A deliberately simple stand-in for a full trajectory optimizer: the vehicle
slides along its string-pulled waypoint path at the mode speed limit and
slews its yaw at the rate limit. Velocity direction may change instantly;
only speed and yaw rate are capped, matching the two limits the planner's
cost functions reason about.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .frontier import Viewpoint
from .geometry import wrap_angle
from .planner import DynamicLimits, Mode, speed_limit
from .world import World

ARRIVAL_YAW_TOL = 0.1  # radians


@dataclass
class AgentState:
    id: int
    position: np.ndarray                  # (3,) meters
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mode: Mode = Mode.EXPLORER
    target: Viewpoint | None = None
    distance_travelled: float = 0.0
    path: list[np.ndarray] = field(default_factory=list)  # remaining waypoints

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.velocity = np.asarray(self.velocity, dtype=np.float64).copy()
        self.yaw = wrap_angle(self.yaw)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


def step(state: AgentState, dt: float, limits: DynamicLimits,
         mode: Mode) -> AgentState:
    """Advance one time step along the waypoint path; returns the same
    (mutated) state object.

    Moves at most speed_limit(mode) * dt along the remaining path, never
    overshooting the final waypoint. Yaw slews toward the direction of motion
    while moving, and toward the target yaw once the path is exhausted, at
    most yaw_rate_max * dt per step.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    old_pos = state.position.copy()
    budget = speed_limit(mode, limits) * dt
    while budget > 1e-12 and state.path:
        wp = state.path[0]
        to_wp = wp - state.position
        d = float(np.linalg.norm(to_wp))
        # snap tolerance stops float error from leaving a waypoint
        # perpetually a few ulps away
        if d <= budget + 1e-9:
            state.position = wp.copy()
            state.path.pop(0)
            budget -= d
        else:
            state.position = state.position + to_wp * (budget / d)
            budget = 0.0

    # distance is the per-step displacement so it exactly matches what an
    # observer of the pose sequence would integrate
    moved = state.position - old_pos
    dist = float(np.linalg.norm(moved))
    state.distance_travelled += dist
    state.velocity = moved / dt

    if dist > 1e-9 and math.hypot(moved[0], moved[1]) > 1e-9:
        desired = math.atan2(moved[1], moved[0])
    elif not state.path and state.target is not None:
        desired = state.target.yaw
    else:
        desired = state.yaw
    err = wrap_angle(desired - state.yaw)
    max_slew = limits.yaw_rate_max * dt
    state.yaw = wrap_angle(state.yaw + max(-max_slew, min(max_slew, err)))
    return state


def has_arrived(state: AgentState, resolution: float) -> bool:
    """Within one cell of the target position with the target yaw acquired."""
    if state.target is None or state.path:
        return False
    d = float(np.linalg.norm(state.position - np.asarray(state.target.position)))
    if d > resolution:
        return False
    return abs(wrap_angle(state.yaw - state.target.yaw)) <= ARRIVAL_YAW_TOL


def check_collision(state: AgentState, world: World,
                    safety_radius: float) -> bool:
    """True iff any tree is closer than its radius + safety_radius at the
    vehicle's height (ground truth check, not the mapped world)."""
    xy, rad, hgt = world.tree_arrays()
    if len(rad) == 0:
        return False
    x, y, z = state.position
    at_height = (z >= 0.0) & (z <= hgt)
    d = np.hypot(xy[:, 0] - x, xy[:, 1] - y)
    return bool((at_height & (d < rad + safety_radius)).any())


def string_pull(path_cells: list[tuple[int, int, int]], passable: np.ndarray,
                resolution: float) -> list[np.ndarray]:
    """Greedy line-of-sight shortcutting of a grid path.

    Keeps the first cell, then repeatedly extends each segment to the farthest
    following cell still visible through passable cells (grid-walk check), and
    emits the surviving cell centers as waypoints.
    """
    if not path_cells:
        return []
    if len(path_cells) <= 2:
        keep = path_cells
    else:
        keep = [path_cells[0]]
        i = 0
        while i < len(path_cells) - 1:
            j = i + 1
            while j + 1 < len(path_cells) and _kernels.line_of_sight(
                    passable,
                    path_cells[i][0], path_cells[i][1], path_cells[i][2],
                    path_cells[j + 1][0], path_cells[j + 1][1], path_cells[j + 1][2]):
                j += 1
            keep.append(path_cells[j])
            i = j
    return [np.array([(c[0] + 0.5) * resolution, (c[1] + 0.5) * resolution,
                      (c[2] + 0.5) * resolution]) for c in keep]
