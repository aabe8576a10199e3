"""Small angle helpers used across planning and motion."""
from __future__ import annotations

import math


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    w = math.remainder(a, math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


def angle_diff(a: float, b: float) -> float:
    """Absolute wrapped difference between two angles, in [0, pi]."""
    return abs(wrap_angle(a - b))
