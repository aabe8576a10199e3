"""Simulated forward-looking depth camera.

Rays are cast analytically against the ground-truth world (tree cylinders
plus the world box treated as a closed occupied shell), so scans are exact
and deterministic — no renderer, no noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .geometry import wrap_angle
from .world import World

DEFAULT_MAX_RANGE = 4.5
DEFAULT_H_FOV = math.radians(87.0)
DEFAULT_V_FOV = math.radians(58.0)


@dataclass(frozen=True)
class Pose:
    """Camera/vehicle pose: position plus yaw; pitch and roll are fixed level."""

    position: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class DepthCamera:
    max_range: float = DEFAULT_MAX_RANGE
    h_fov: float = DEFAULT_H_FOV
    v_fov: float = DEFAULT_V_FOV
    h_rays: int = 87
    v_rays: int = 51

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")
        if not (0 < self.h_fov < math.pi and 0 < self.v_fov < math.pi):
            raise ValueError("FOVs must lie in (0, pi)")
        if self.h_rays < 2 or self.v_rays < 2:
            raise ValueError("ray counts must be >= 2")

    @classmethod
    def for_resolution(cls, resolution: float, max_range: float = DEFAULT_MAX_RANGE,
                       h_fov: float = DEFAULT_H_FOV, v_fov: float = DEFAULT_V_FOV,
                       ) -> "DepthCamera":
        """Camera whose ray grid is dense enough for the map resolution: the
        angle between adjacent rays stays <= atan(resolution / max_range), so
        no voxel inside the FOV at max range falls between rays."""
        return cls(max_range=max_range, h_fov=h_fov, v_fov=v_fov,
                   h_rays=_rays_for(h_fov, resolution, max_range),
                   v_rays=_rays_for(v_fov, resolution, max_range))


def _rays_for(fov: float, resolution: float, max_range: float) -> int:
    # uniform tan-space spacing; the widest angular gap sits at the image
    # center where it equals atan(delta_u), hence delta_u <= res / range
    span = 2.0 * math.tan(fov / 2.0)
    return max(2, int(math.ceil(span / (resolution / max_range))) + 1)


@dataclass
class DepthScan:
    """Result of one render: unit ray directions in the world frame, per-ray
    hit flags, and ranges (range = max_range for misses)."""

    origin: np.ndarray
    directions: np.ndarray  # (N, 3)
    hits: np.ndarray        # (N,) bool
    ranges: np.ndarray      # (N,)
    max_range: float

    def endpoints(self) -> np.ndarray:
        return self.origin[None, :] + self.directions * self.ranges[:, None]


@lru_cache(maxsize=32)
def _camera_dirs(h_fov: float, v_fov: float, h_rays: int, v_rays: int) -> np.ndarray:
    """Unit ray directions in the camera frame (x forward, y left, z up),
    row-major over (horizontal index, vertical index)."""
    u = np.linspace(-math.tan(h_fov / 2.0), math.tan(h_fov / 2.0), h_rays)
    v = np.linspace(-math.tan(v_fov / 2.0), math.tan(v_fov / 2.0), v_rays)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    dirs = np.stack([np.ones_like(uu), uu, vv], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs.setflags(write=False)
    return dirs


def render_depth_scan(world: World, pose: Pose, cam: DepthCamera) -> DepthScan:
    """Cast the full ray grid from the pose; nearest cylinder/boundary hit wins."""
    cam_dirs = _camera_dirs(cam.h_fov, cam.v_fov, cam.h_rays, cam.v_rays)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dirs = np.empty_like(cam_dirs)
    dirs[:, 0] = c * cam_dirs[:, 0] - s * cam_dirs[:, 1]
    dirs[:, 1] = s * cam_dirs[:, 0] + c * cam_dirs[:, 1]
    dirs[:, 2] = cam_dirs[:, 2]

    origin = np.asarray(pose.position, dtype=np.float64)
    xy, rad, hgt = world.tree_arrays()
    if len(rad):
        # only trees whose surface can be inside the sensing sphere matter
        horiz = np.hypot(xy[:, 0] - origin[0], xy[:, 1] - origin[1])
        near = horiz - rad <= cam.max_range
        xy, rad, hgt = xy[near], rad[near], hgt[near]
    ranges, hits = _kernels.cast_rays(
        origin, dirs, cam.max_range, np.ascontiguousarray(xy),
        np.ascontiguousarray(rad), np.ascontiguousarray(hgt),
        np.asarray(world.extent, dtype=np.float64))
    return DepthScan(origin=origin, directions=dirs, hits=hits, ranges=ranges,
                     max_range=cam.max_range)


def clamp_endpoints_to_box(endpoints: np.ndarray, extent, eps: float = 1e-7) -> np.ndarray:
    """Nudge points lying exactly on the world box faces inward, so boundary
    ray hits bin into the outermost cell layer instead of falling outside the
    grid (the box shell acts as an occupied surface)."""
    hi = np.asarray(extent, dtype=np.float64) - eps
    return np.clip(endpoints, eps, hi)
