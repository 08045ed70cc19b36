"""Ackermann (kinematic bicycle) model with exact constant-control integration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from deadend.geometry import FootprintRect, Pose2D

# |tan(delta)| below this is integrated as a straight line
STRAIGHT_EPS = 1e-9
_LIMIT_TOL = 1e-12

# steering gain of the low-level yaw-rate controller
K_P = 1.0


@dataclass(frozen=True)
class VehicleSpec:
    length: float = 0.37
    width: float = 0.36
    wheelbase: float = 0.21
    delta_max: float = 0.645
    v_max: float = 1.0
    # reference point (odometry frame, LiDAR mount) to footprint centre, along heading
    ref_offset: float = 0.0

    def __post_init__(self):
        if not (0 < self.wheelbase < self.length):
            raise ValueError(f"need 0 < wheelbase < length, got L={self.wheelbase}, length={self.length}")
        if not (0 < self.delta_max < math.pi / 2):
            raise ValueError("delta_max must lie in (0, pi/2)")
        if self.v_max <= 0 or self.width <= 0:
            raise ValueError("v_max and width must be positive")

    @property
    def footprint(self) -> FootprintRect:
        return FootprintRect(self.length, self.width, self.ref_offset)

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "width": self.width,
            "wheelbase": self.wheelbase,
            "delta_max": self.delta_max,
            "v_max": self.v_max,
            "ref_offset": self.ref_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleSpec":
        return cls(**d)


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0


def steering_to_yawrate(v: float, delta_hat: float, spec: VehicleSpec) -> float:
    """Yaw rate commanded by a normalized steering input in [-1, 1]."""
    if abs(delta_hat) > 1.0 + _LIMIT_TOL:
        raise ValueError(f"normalized steering must lie in [-1, 1], got {delta_hat}")
    return K_P * (v / spec.wheelbase) * math.tan(spec.delta_max * delta_hat)


def min_turning_radius(spec: VehicleSpec) -> float:
    return spec.wheelbase / math.tan(spec.delta_max)


def curvature(delta: float, spec: VehicleSpec) -> float:
    return math.tan(delta) / spec.wheelbase


def _sinc(h: float) -> float:
    if abs(h) < 1e-6:
        return 1.0 - h * h / 6.0
    return math.sin(h) / h


def integrate(pose: Pose2D, v: float, delta: float, dt: float, wheelbase: float) -> Pose2D:
    """Exact arc integration without limit checks."""
    tan_d = math.tan(delta)
    dist = v * dt
    if abs(tan_d) < STRAIGHT_EPS:
        return Pose2D(pose.x + dist * math.cos(pose.theta), pose.y + dist * math.sin(pose.theta), pose.theta)
    dtheta = dist * tan_d / wheelbase
    chord = dist * _sinc(dtheta / 2)
    mid = pose.theta + dtheta / 2
    return Pose2D(pose.x + chord * math.cos(mid), pose.y + chord * math.sin(mid), pose.theta + dtheta)


def step(state: VehicleState, v: float, delta: float, dt: float, spec: VehicleSpec) -> VehicleState:
    """Advance one constant-control interval along the exact circular arc."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if abs(v) > spec.v_max * (1 + _LIMIT_TOL):
        raise ValueError(f"|v|={abs(v)} exceeds v_max={spec.v_max}")
    if abs(delta) > spec.delta_max * (1 + _LIMIT_TOL):
        raise ValueError(f"|delta|={abs(delta)} exceeds delta_max={spec.delta_max}")
    pose = integrate(state.pose, v, delta, dt, spec.wheelbase)
    return VehicleState(pose, v, v * math.tan(delta) / spec.wheelbase)


def rollout(pose: Pose2D, v: float, delta: float, duration: float, spec: VehicleSpec, n: int) -> list[Pose2D]:
    """Poses at ``n`` equal fractions of a constant-control phase (excluding the start)."""
    out = []
    for k in range(1, n + 1):
        out.append(integrate(pose, v, delta, duration * k / n, spec.wheelbase))
    return out


def nonholonomic_residual(times: Sequence[float], poses: Sequence[Pose2D]) -> float:
    """Largest central-difference estimate of |y' cos(theta) - x' sin(theta)|."""
    t = np.asarray(times, float)
    if len(t) < 3 or len(t) != len(poses):
        raise ValueError("need at least three timestamped poses")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    xy = np.array([[p.x, p.y] for p in poses])
    th = np.array([p.theta for p in poses])
    span = t[2:] - t[:-2]
    xd = (xy[2:, 0] - xy[:-2, 0]) / span
    yd = (xy[2:, 1] - xy[:-2, 1]) / span
    res = np.abs(yd * np.cos(th[1:-1]) - xd * np.sin(th[1:-1]))
    return float(res.max())
