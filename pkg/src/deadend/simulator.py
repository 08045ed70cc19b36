"""Discrete-time episode engine: kinematics, contact classification, LiDAR."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from deadend import geometry as geo
from deadend.geometry import Pose2D
from deadend.kinematics import VehicleSpec, VehicleState, integrate
from deadend.scenario import ControlPhase, Scenario


class Status(str, Enum):
    RUNNING = "running"
    GOAL = "goal"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    max_steps: int = 500
    substeps: int = 10
    d_max: float = 10.0
    n_beams: int = 360
    # contact at or above this fraction of v_max is a crash
    crash_speed_frac: float = 0.5
    penetration_threshold: float = 0.02
    # standard deviation of Gaussian noise on reported poses (m for x/y, rad for heading)
    odometry_noise: float = 0.0
    noise_seed: int = 0


@dataclass(frozen=True)
class StepEvents:
    goal: bool = False
    collision: bool = False
    crash: bool = False
    timeout: bool = False

    def labels(self) -> str:
        names = [n for n in ("goal", "collision", "crash", "timeout") if getattr(self, n)]
        return "|".join(names)


@dataclass(frozen=True)
class SimState:
    vehicle: VehicleState
    step_count: int = 0
    status: Status = Status.RUNNING
    collision_events: int = 0
    t: float = 0.0

    @property
    def pose(self) -> Pose2D:
        return self.vehicle.pose


@dataclass(frozen=True)
class LidarScan:
    """Ranges indexed by bearing in whole degrees, vehicle frame, CCW from ahead.

    Missing beams are NaN.
    """

    ranges: np.ndarray
    d_max: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.ranges)

    @property
    def bearings(self) -> np.ndarray:
        return np.deg2rad(np.arange(len(self.ranges), dtype=float))

    def dropped(self) -> "LidarScan":
        return LidarScan(np.full(len(self.ranges), np.nan), self.d_max)


@dataclass(frozen=True)
class LogRow:
    t: float
    x: float
    y: float
    theta: float
    v: float
    omega: float
    events: str = ""


class TerminatedEpisode(RuntimeError):
    pass


class Simulator:
    def __init__(
        self,
        scenario: Scenario,
        robot: Optional[VehicleSpec] = None,
        config: Optional[SimConfig] = None,
        goal_center: Optional[Sequence[float]] = None,
    ):
        self.scenario = scenario
        self.robot = robot or scenario.vehicle
        self.config = config or SimConfig()
        self.footprint = self.robot.footprint
        self.capsules = geo.as_capsules(scenario.obstacles)
        self.goal_center = np.asarray(goal_center if goal_center is not None else scenario.goal.center, float)
        self.goal_radius = scenario.goal.radius
        self._odometry_rng = np.random.default_rng(self.config.noise_seed)

    # -- contact ---------------------------------------------------------

    def clearance(self, pose: Pose2D, caps: Optional[geo.Capsules] = None) -> float:
        if caps is None:
            caps = self.capsules.near((pose.x, pose.y), self.footprint.circumradius + 0.05)
        if len(caps) == 0:
            return math.inf
        return geo.footprint_clearance(pose, self.footprint, caps)

    def in_collision(self, pose: Pose2D) -> bool:
        return self.clearance(pose) <= 0.0

    # -- episode ---------------------------------------------------------

    def reset(self, start: Optional[Pose2D] = None) -> SimState:
        pose = start or self.scenario.start
        if self.in_collision(pose):
            raise ValueError(f"start pose of scenario {self.scenario.id} is in collision")
        return SimState(VehicleState(pose, 0.0, 0.0))

    def step(self, state: SimState, v: float, delta_hat: float, dt: Optional[float] = None):
        """Advance one control cycle; returns ``(next_state, events)``."""
        if state.status is not Status.RUNNING:
            raise TerminatedEpisode(f"episode already ended with status {state.status.value}")
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        spec = self.robot
        if abs(v) > spec.v_max * (1 + 1e-12):
            raise ValueError(f"|v|={abs(v)} exceeds v_max")
        if abs(delta_hat) > 1 + 1e-12:
            raise ValueError("normalized steering must lie in [-1, 1]")
        delta = spec.delta_max * delta_hat
        omega = v * math.tan(delta) / spec.wheelbase
        start = state.vehicle.pose
        n_steps = state.step_count + 1
        t = state.t + dt

        contact = None
        pose = start
        # one broad-phase query covers every sub-step of this cycle
        caps = self.capsules.near((start.x, start.y), self.footprint.circumradius + abs(v) * dt + 0.05)
        subposes = [integrate(start, v, delta, dt * k / cfg.substeps, spec.wheelbase)
                    for k in range(1, cfg.substeps + 1)]
        pose = subposes[-1]
        if len(caps):
            arr = np.array([[p.x, p.y, p.theta] for p in subposes])
            gaps = geo.rect_gaps_many(arr, self.footprint, caps).min(axis=1)
            touching = np.flatnonzero(gaps <= 0.0)
            if len(touching):
                k = int(touching[0])
                contact = (subposes[k], -float(gaps[k]))

        if contact is not None:
            hit_pose, depth = contact
            if depth > cfg.penetration_threshold or abs(v) >= cfg.crash_speed_frac * spec.v_max:
                nxt = SimState(VehicleState(hit_pose, v, omega), n_steps, Status.CRASH,
                               state.collision_events, t)
                return nxt, StepEvents(crash=True)
            status = Status.TIMEOUT if n_steps >= cfg.max_steps else Status.RUNNING
            nxt = SimState(VehicleState(start, 0.0, 0.0), n_steps, status, state.collision_events + 1, t)
            return nxt, StepEvents(collision=True, timeout=status is Status.TIMEOUT)

        dist = math.hypot(pose.x - self.goal_center[0], pose.y - self.goal_center[1])
        if dist < self.goal_radius:
            return SimState(VehicleState(pose, v, omega), n_steps, Status.GOAL, state.collision_events, t), StepEvents(goal=True)
        status = Status.TIMEOUT if n_steps >= cfg.max_steps else Status.RUNNING
        nxt = SimState(VehicleState(pose, v, omega), n_steps, status, state.collision_events, t)
        return nxt, StepEvents(timeout=status is Status.TIMEOUT)

    def observed_pose(self, state: SimState) -> Pose2D:
        """Pose as reported by odometry; exact unless ``odometry_noise`` is set."""
        sigma = self.config.odometry_noise
        if sigma <= 0:
            return state.pose
        dx, dy, dth = self._odometry_rng.normal(0.0, sigma, 3)
        p = state.pose
        return Pose2D(p.x + dx, p.y + dy, geo.normalize_angle(p.theta + dth))

    def lidar(self, state: SimState) -> LidarScan:
        cfg = self.config
        pose = state.vehicle.pose
        angles = pose.theta + np.deg2rad(np.arange(cfg.n_beams) * (360.0 / cfg.n_beams))
        ranges = geo.raycast_many((pose.x, pose.y), angles, self.capsules, cfg.d_max)
        return LidarScan(ranges, cfg.d_max)

    def replay(self, controls: Sequence[ControlPhase], start: Optional[Pose2D] = None,
               max_steps: Optional[int] = None) -> "ReplayResult":
        """Execute constant-control phases in ``dt`` slices through :meth:`step`."""
        sim = self
        if max_steps is not None and max_steps != self.config.max_steps:
            sim = Simulator(self.scenario, self.robot, replace(self.config, max_steps=max_steps), self.goal_center)
        state = sim.reset(start)
        log = [LogRow(0.0, state.pose.x, state.pose.y, state.pose.theta, 0.0, 0.0, "")]
        dt = sim.config.dt
        crashes = 0
        for phase in controls:
            n_full = int(math.floor(phase.duration / dt + 1e-9))
            rest = phase.duration - n_full * dt
            slices = [dt] * n_full + ([rest] if rest > 1e-9 else [])
            delta_hat = phase.delta / sim.robot.delta_max
            delta_hat = max(-1.0, min(1.0, delta_hat))
            for h in slices:
                if state.status is not Status.RUNNING:
                    break
                state, ev = sim.step(state, phase.v, delta_hat, h)
                crashes += ev.crash
                p = state.pose
                log.append(LogRow(state.t, p.x, p.y, p.theta, state.vehicle.v, state.vehicle.omega, ev.labels()))
            if state.status is not Status.RUNNING:
                break
        return ReplayResult(log, state.status, state.collision_events, crashes, state.step_count)


@dataclass
class ReplayResult:
    log: list[LogRow]
    status: Status
    collisions: int
    crashes: int
    steps: int

    @property
    def poses(self) -> list[Pose2D]:
        return [Pose2D(r.x, r.y, r.theta) for r in self.log]


def replay(scenario: Scenario, controls: Sequence[ControlPhase], robot: Optional[VehicleSpec] = None,
           config: Optional[SimConfig] = None, max_steps: Optional[int] = None) -> ReplayResult:
    return Simulator(scenario, robot, config).replay(controls, max_steps=max_steps)


LOG_COLUMNS = ("t", "x", "y", "theta", "v", "omega", "events")


def write_log(rows: Sequence[LogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([repr(r.t), repr(r.x), repr(r.y), repr(r.theta), repr(r.v), repr(r.omega), r.events])


def read_log(path) -> list[LogRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != LOG_COLUMNS:
            raise ValueError(f"unexpected trajectory log header {header}")
        return [LogRow(*(float(v) for v in row[:6]), row[6]) for row in rd]
