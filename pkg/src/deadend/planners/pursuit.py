"""Pure-pursuit tracking of forward/reverse path segments."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from deadend.geometry import Pose2D, normalize_angle
from deadend.kinematics import VehicleSpec
from deadend.planners.hybrid_astar import FORWARD, PlannedPath


def pursuit_steering(pose: Pose2D, target, wheelbase: float, direction: int = FORWARD) -> float:
    """Steering angle that puts the reference point on an arc through ``target``.

    For reverse travel the geometry is mirrored: the bearing is measured from
    the backward-facing axis and the resulting angle changes sign.
    """
    dx, dy = target[0] - pose.x, target[1] - pose.y
    ld = math.hypot(dx, dy)
    if ld < 1e-9:
        return 0.0
    facing = pose.theta if direction == FORWARD else pose.theta + math.pi
    alpha = normalize_angle(math.atan2(dy, dx) - facing)
    delta = math.atan(2.0 * wheelbase * math.sin(alpha) / ld)
    return delta if direction == FORWARD else -delta


class PathExhausted(RuntimeError):
    pass


class PurePursuit:
    """Follows a :class:`PlannedPath` one gear segment at a time.

    A segment is finished when the reference point is within ``switch_radius``
    of its last pose or has passed it; the tracker then moves to the next
    segment (a cusp).
    """

    def __init__(self, path: PlannedPath, spec: VehicleSpec, lookahead: float = 0.3,
                 speed: float = 0.3, switch_radius: float = 0.05):
        if len(path) == 0:
            raise ValueError("cannot track an empty path")
        self.spec = spec
        self.lookahead = lookahead
        self.speed = speed
        self.switch_radius = switch_radius
        self.segments = [(d, np.array([[p.x, p.y, p.theta] for p in poses])) for d, poses in path.segments()]
        self.index = 0
        self.progress = 0

    @property
    def finished(self) -> bool:
        return self.index >= len(self.segments)

    def _segment_done(self, pose: Pose2D) -> bool:
        _, pts = self.segments[self.index]
        end = pts[-1, :2]
        if math.hypot(end[0] - pose.x, end[1] - pose.y) <= self.switch_radius:
            return True
        # passed the end along the segment's final travel direction
        if len(pts) >= 2 and math.hypot(end[0] - pose.x, end[1] - pose.y) < self.lookahead:
            t = pts[-1, :2] - pts[-2, :2]
            return float(np.dot(np.array([pose.x, pose.y]) - end, t)) > 0.0
        return False

    def tracking_error(self, pose: Pose2D) -> float:
        if self.finished:
            return 0.0
        pts = self.segments[self.index][1]
        return float(np.min(np.hypot(pts[:, 0] - pose.x, pts[:, 1] - pose.y)))

    def remaining_poses(self) -> np.ndarray:
        """(N, 3) poses not yet passed."""
        if self.finished:
            return np.zeros((0, 3))
        parts = [self.segments[self.index][1][self.progress:]] + [pts for _, pts in self.segments[self.index + 1:]]
        return np.vstack(parts)

    def lookahead_point(self, pose: Pose2D) -> np.ndarray:
        _, pts = self.segments[self.index]
        d = np.hypot(pts[:, 0] - pose.x, pts[:, 1] - pose.y)
        nearest = max(self.progress, int(np.argmin(d[self.progress:])) + self.progress)
        self.progress = nearest
        ahead = np.flatnonzero(d[nearest:] >= self.lookahead)
        return pts[nearest + ahead[0]] if len(ahead) else pts[-1]

    def step(self, pose: Pose2D) -> np.ndarray:
        """Normalized action (v_hat, delta_hat) for the current pose."""
        while not self.finished and self._segment_done(pose):
            self.index += 1
            self.progress = 0
        if self.finished:
            raise PathExhausted("path fully tracked")
        direction = self.segments[self.index][0]
        target = self.lookahead_point(pose)
        delta = pursuit_steering(pose, target, self.spec.wheelbase, direction)
        d_hat = float(np.clip(delta / self.spec.delta_max, -1.0, 1.0))
        return np.array([direction * self.speed, d_hat])


def pure_pursuit(path: PlannedPath, pose: Pose2D, spec: VehicleSpec, lookahead: float = 0.3,
                 speed: float = 0.3) -> np.ndarray:
    """Stateless single-shot tracking action from the start of ``path``."""
    return PurePursuit(path, spec, lookahead, speed).step(pose)
