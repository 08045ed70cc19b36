"""Follow-the-gap steering with a reversal-turn escape macro."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from deadend.geometry import normalize_angle
from deadend.kinematics import VehicleSpec


@dataclass(frozen=True)
class FTGParams:
    bubble_radius: float = 0.3
    gap_threshold: float = 1.0
    reverse_trigger: float = 0.45
    reverse_cone_deg: float = 15.0
    macro_cycles: int = 15
    field_of_view_deg: float = 90.0
    cruise_speed: float = 0.4
    reverse_speed: float = 0.3


@dataclass(frozen=True)
class GapSegment:
    """A run of admissible beams; indices refer to the field-of-view array."""

    start: int
    end: int
    width: float
    mid_bearing: float
    min_range: float


def fov_view(ranges: np.ndarray, d_max: float, fov_deg: float):
    """Beams from -fov to +fov degrees (right to left) with their bearings.

    Missing beams read as ``d_max``.
    """
    n = len(ranges)
    step = 360.0 / n
    k = int(round(fov_deg / step))
    idx = np.arange(-k, k + 1) % n
    r = np.asarray(ranges, float)[idx]
    r = np.where(np.isfinite(r), np.minimum(r, d_max), d_max)
    bearings = np.deg2rad(np.arange(-k, k + 1) * step)
    return r, bearings


def apply_bubble(r: np.ndarray, bearings: np.ndarray, radius: float, d_max: float) -> np.ndarray:
    """Zero every beam whose direction passes within ``radius`` of a closest return."""
    out = r.copy()
    closest = r.min()
    if closest >= d_max:
        return out
    half = math.asin(min(1.0, radius / closest)) if closest > 0 else math.pi
    for b in bearings[r == closest]:
        out[np.abs(bearings - b) <= half] = 0.0
    return out


def find_gaps(r: np.ndarray, bearings: np.ndarray, threshold: float) -> list[GapSegment]:
    """Maximal runs of beams strictly beyond ``threshold``."""
    ok = r > threshold
    gaps = []
    i = 0
    n = len(r)
    while i < n:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and ok[j + 1]:
            j += 1
        step = bearings[1] - bearings[0] if n > 1 else 0.0
        gaps.append(GapSegment(i, j, (j - i + 1) * step, 0.5 * (bearings[i] + bearings[j]),
                               float(r[i:j + 1].min())))
        i = j + 1
    return gaps


def widest_gap(gaps: list[GapSegment], goal_bearing: float) -> Optional[GapSegment]:
    if not gaps:
        return None
    return max(gaps, key=lambda g: (round(g.width, 9), -abs(normalize_angle(g.mid_bearing - goal_bearing))))


def forward_clearance(ranges: np.ndarray, d_max: float, cone_deg: float) -> float:
    r, _ = fov_view(ranges, d_max, cone_deg)
    return float(r.min())


def gap_steering(ranges: np.ndarray, d_max: float, goal_bearing: float, spec: VehicleSpec,
                 params: FTGParams = FTGParams()) -> tuple[float, Optional[GapSegment]]:
    """Normalized steering toward the widest gap (or the farthest beam when none is admissible)."""
    r, bearings = fov_view(ranges, d_max, params.field_of_view_deg)
    r = apply_bubble(r, bearings, params.bubble_radius, d_max)
    gap = widest_gap(find_gaps(r, bearings, params.gap_threshold), goal_bearing)
    if gap is not None:
        target = gap.mid_bearing
    else:
        # farthest beam; ties go to the one nearest the goal bearing
        far = np.flatnonzero(r == r.max())
        target = float(bearings[far[np.argmin(np.abs(bearings[far] - goal_bearing))]])
    return float(np.clip(target / spec.delta_max, -1.0, 1.0)), gap


def ftg_step(ranges: np.ndarray, d_max: float, goal_bearing: float, spec: VehicleSpec,
             params: FTGParams = FTGParams()) -> np.ndarray:
    """Memoryless part of the controller: the cruise action, or a reversing action when blocked."""
    d_hat, _ = gap_steering(ranges, d_max, goal_bearing, spec, params)
    if forward_clearance(ranges, d_max, params.reverse_cone_deg) < params.reverse_trigger:
        return np.array([-params.reverse_speed, -math.copysign(1.0, d_hat) if d_hat else 1.0])
    return np.array([params.cruise_speed, d_hat])


class FollowTheGap:
    """Reactive controller; state is only the remaining reversal-macro cycles."""

    def __init__(self, spec: VehicleSpec, params: FTGParams = FTGParams()):
        self.spec = spec
        self.params = params
        self.macro_left = 0
        self.macro_steer = 0.0

    def reset(self) -> None:
        self.macro_left = 0

    def step(self, ranges: np.ndarray, d_max: float, goal_bearing: float) -> np.ndarray:
        p = self.params
        if self.macro_left > 0:
            self.macro_left -= 1
            return np.array([-p.reverse_speed, self.macro_steer])
        action = ftg_step(ranges, d_max, goal_bearing, self.spec, p)
        if action[0] < 0:
            # reverse with opposite lock so the nose swings toward the gap
            self.macro_steer = float(action[1])
            self.macro_left = p.macro_cycles - 1
        return action
