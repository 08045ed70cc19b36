"""Observation, action and reward construction shared by the simulator and learners."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from deadend.geometry import Pose2D, normalize_angle
from deadend.kinematics import VehicleSpec, steering_to_yawrate
from deadend.scenario import Scenario
from deadend.simulator import LidarScan, SimConfig, SimState, Simulator, Status, StepEvents

N_BEAMS = 360
N_SECTORS = 40
OBS_DIM = N_SECTORS + 5
ACT_DIM = 2


@dataclass(frozen=True)
class RewardWeights:
    goal: float = 500.0
    collision: float = -100.0
    crash: float = -500.0
    move: float = 1.0
    turn: float = 1.0
    align: float = 1.0


def goal_features(pose: Pose2D, goal: Sequence[float]) -> tuple[float, float]:
    """Distance to the goal and its bearing in the vehicle frame."""
    dx, dy = goal[0] - pose.x, goal[1] - pose.y
    return math.hypot(dx, dy), normalize_angle(math.atan2(dy, dx) - pose.theta)


def sector_minima(ranges: np.ndarray, d_max: float, n_sectors: int = N_SECTORS) -> np.ndarray:
    """Per-sector minimum of a full scan, missing beams counted as ``d_max``."""
    ranges = np.asarray(ranges, float)
    if len(ranges) % n_sectors:
        raise ValueError(f"{len(ranges)} beams do not split into {n_sectors} sectors")
    clean = np.where(np.isfinite(ranges), np.minimum(ranges, d_max), d_max)
    return clean.reshape(n_sectors, -1).min(axis=1)


def build_observation(scan: LidarScan, pose: Pose2D, goal: Sequence[float],
                      prev_v: float, prev_omega: float) -> np.ndarray:
    if len(scan.ranges) != N_BEAMS:
        raise ValueError(f"expected {N_BEAMS} beams, got {len(scan.ranges)}")
    d, theta = goal_features(pose, goal)
    out = np.empty(OBS_DIM)
    out[:N_SECTORS] = sector_minima(scan.ranges, scan.d_max)
    out[N_SECTORS:] = (d, math.cos(theta), math.sin(theta), prev_v, prev_omega)
    return out


def clamp_action(a) -> np.ndarray:
    return np.clip(np.asarray(a, float).reshape(ACT_DIM), -1.0, 1.0)


def map_action(a, spec: VehicleSpec) -> tuple[float, float, float]:
    """Normalized action -> (v, omega, delta)."""
    v_hat, d_hat = clamp_action(a)
    v = float(v_hat) * spec.v_max
    return v, steering_to_yawrate(v, float(d_hat), spec), spec.delta_max * float(d_hat)


def compute_reward(events: StepEvents, v: float, omega: float, goal_bearing: float, scan_ok: bool = True,
                   weights: RewardWeights = RewardWeights()) -> float:
    if not scan_ok:
        return 0.0
    w = weights
    r = w.goal * events.goal + w.collision * events.collision + w.crash * events.crash
    return float(r + w.move * abs(v) + w.turn * abs(omega) + w.align * v * math.cos(goal_bearing))


class EscapeEnv:
    """Episode wrapper exposing the 45-D observation and shaped reward.

    ``robot`` overrides the scenario's vehicle (used for size curricula);
    ``goal_center`` overrides the goal (used for distance budgets).
    ``scan_fault`` is called with each scan and may return a corrupted one.
    """

    def __init__(self, scenario: Scenario, robot: Optional[VehicleSpec] = None,
                 config: Optional[SimConfig] = None, goal_center: Optional[Sequence[float]] = None,
                 weights: RewardWeights = RewardWeights(), scan_fault=None):
        self.sim = Simulator(scenario, robot, config, goal_center)
        self.weights = weights
        self.scan_fault = scan_fault
        self.state: Optional[SimState] = None

    @property
    def spec(self) -> VehicleSpec:
        return self.sim.robot

    @property
    def goal(self) -> np.ndarray:
        return self.sim.goal_center

    def _scan(self, state: SimState) -> LidarScan:
        scan = self.sim.lidar(state)
        return self.scan_fault(scan) if self.scan_fault else scan

    def observe(self, state: SimState, scan: Optional[LidarScan] = None) -> np.ndarray:
        scan = scan if scan is not None else self._scan(state)
        return build_observation(scan, self.sim.observed_pose(state), self.goal, state.vehicle.v, state.vehicle.omega)

    def reset(self, start: Optional[Pose2D] = None) -> np.ndarray:
        self.state = self.sim.reset(start)
        return self.observe(self.state)

    def step(self, action):
        """Returns ``(obs, reward, terminal, info)``; ``terminal`` excludes timeouts."""
        v, omega, _ = map_action(action, self.spec)
        _, d_hat = clamp_action(action)
        _, bearing = goal_features(self.state.pose, self.goal)
        self.state, events = self.sim.step(self.state, v, float(d_hat))
        scan = self._scan(self.state)
        obs = self.observe(self.state, scan)
        # a scan counts as missing only when no beam returned
        reward = compute_reward(events, v, omega, bearing, bool(np.any(scan.valid)), self.weights)
        terminal = self.state.status in (Status.GOAL, Status.CRASH)
        return obs, reward, terminal, {"events": events, "status": self.state.status}

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.status is not Status.RUNNING
