"""One per-cycle interface for the learned policy and the classical baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from deadend.geometry import OccupancyGrid, Pose2D
from deadend.kinematics import VehicleSpec
from deadend.mdp import build_observation, goal_features
from deadend.planners.ftg import FollowTheGap, FTGParams
from deadend.planners.hybrid_astar import (GridCollisionChecker, Heuristic, NoPath, PlannedPath,
                                           PlannerParams, hybrid_astar)
from deadend.planners.pursuit import PathExhausted, PurePursuit
from deadend.scenario import Scenario
from deadend.simulator import LidarScan


@dataclass(frozen=True)
class Percept:
    """What a controller sees each cycle."""

    pose: Pose2D
    v: float
    omega: float
    scan: LidarScan
    goal: tuple[float, float]

    @property
    def goal_bearing(self) -> float:
        return goal_features(self.pose, self.goal)[1]


class Controller:
    name = "controller"

    def reset(self, scenario: Scenario, robot: VehicleSpec) -> None:
        self.spec = robot

    def act(self, percept: Percept) -> np.ndarray:
        raise NotImplementedError


class NullController(Controller):
    name = "null"

    def act(self, percept: Percept) -> np.ndarray:
        return np.zeros(2)


class PolicyController(Controller):
    """Wraps a trained agent; acts on the 45-D observation."""

    name = "sac"

    def __init__(self, agent, deterministic: bool = True):
        self.agent = agent
        self.deterministic = deterministic

    def act(self, percept: Percept) -> np.ndarray:
        obs = build_observation(percept.scan, percept.pose, percept.goal, percept.v, percept.omega)
        return self.agent.act(obs, self.deterministic)


class FTGController(Controller):
    name = "ftg"

    def __init__(self, params: FTGParams = FTGParams()):
        self.params = params

    def reset(self, scenario: Scenario, robot: VehicleSpec) -> None:
        super().reset(scenario, robot)
        self.ftg = FollowTheGap(robot, self.params)

    def act(self, percept: Percept) -> np.ndarray:
        return self.ftg.step(percept.scan.ranges, percept.scan.d_max, percept.goal_bearing)


class HybridAStarController(Controller):
    """Maps scan returns into a raster, plans with Hybrid A*, tracks with pure pursuit.

    Adjacent returns closer together than the vehicle width are joined in the
    raster: no footprint fits through such a slit, so this removes no feasible
    path but stops the planner from threading between sparse far hits.

    Paths are planned with ``plan_padding`` extra clearance when possible (off
    by default), and a path only counts as blocked once a mapped cell centre
    falls inside the bare footprint somewhere along it. Replans when tracking
    error exceeds ``replan_error``, when newly mapped cells block the remaining
    path, or when the path runs out. With ``replan_on_stall`` it also replans
    when a motion command left the pose unchanged (the vehicle is pressed
    against an obstacle it cannot see as blocking). After a failed query it
    waits ``retry_interval`` cycles and for the map to change before trying
    again.
    """

    name = "hybrid-astar"

    def __init__(self, params: PlannerParams = PlannerParams(), window_margin: float = 3.0,
                 replan_error: float = 0.3, lookahead: float = 0.3, speed: float = 0.3,
                 retry_interval: int = 10, plan_padding: float = 0.0, replan_on_stall: bool = False):
        self.params = params
        self.replan_on_stall = replan_on_stall
        self.plan_padding = plan_padding
        self.window_margin = window_margin
        self.replan_error = replan_error
        self.lookahead = lookahead
        self.speed = speed
        self.retry_interval = retry_interval

    def reset(self, scenario: Scenario, robot: VehicleSpec) -> None:
        super().reset(scenario, robot)
        xs = [scenario.start.x, scenario.goal.center[0]]
        ys = [scenario.start.y, scenario.goal.center[1]]
        m = self.window_margin
        res = self.params.resolution
        x0 = math.floor((min(xs) - m) / res) * res
        y0 = math.floor((min(ys) - m) / res) * res
        self.grid = OccupancyGrid.empty(x0, y0, max(xs) + m, max(ys) + m, res)
        self.map_version = 0
        self.failed_version = -1
        self.failed_cycle = -self.retry_interval
        self.cycle = 0
        self.tracker: Optional[PurePursuit] = None
        self.path: Optional[PlannedPath] = None
        self.plans = 0
        self.last_pose: Optional[Pose2D] = None
        self.last_speed = 0.0

    def scan_points(self, pose: Pose2D, scan: LidarScan) -> np.ndarray:
        """World-frame returns plus fill-in points along short gaps between neighbouring beams."""
        ranges = scan.ranges
        ok = np.isfinite(ranges) & (ranges < scan.d_max)
        ang = pose.theta + scan.bearings
        r = np.where(ok, ranges, 0.0)
        pts = np.stack([pose.x + r * np.cos(ang), pose.y + r * np.sin(ang)], axis=1)
        nxt = np.roll(np.arange(len(ranges)), -1)
        gap = np.linalg.norm(pts[nxt] - pts, axis=1)
        join = ok & ok[nxt] & (gap < self.spec.width)
        out = [pts[ok]]
        step = self.params.resolution / 2
        for i in np.flatnonzero(join & (gap > step)):
            k = int(math.ceil(gap[i] / step))
            t = np.arange(1, k)[:, None] / k
            out.append(pts[i] + t * (pts[nxt[i]] - pts[i]))
        return np.vstack(out)

    def _integrate_scan(self, pose: Pose2D, scan: LidarScan) -> bool:
        rows, cols = self.grid.cell_of(self.scan_points(pose, scan))
        inside = (rows >= 0) & (rows < self.grid.height) & (cols >= 0) & (cols < self.grid.width)
        rows, cols = rows[inside], cols[inside]
        new = ~self.grid.cells[rows, cols]
        self.grid.cells[rows[new], cols[new]] = True
        if new.any():
            self.map_version += 1
        return bool(new.any())

    def _grid_around(self, pose: Pose2D) -> OccupancyGrid:
        """Copy of the map with cells under the vehicle's inflated footprint cleared.

        The vehicle is known to be in free space, but scan hits are quantized to
        cell centres, which can sit inside the planner's inflated footprint and
        make the start pose look occupied. Clearing is per query only, so walls
        the vehicle touches stay in the map.
        """
        g = self.grid
        cells = g.cells.copy()
        m = self.params.margin + self.plan_padding
        hl = self.spec.length / 2 + m
        hw = self.spec.width / 2 + m
        off = self.spec.ref_offset
        reach = math.hypot(hl, hw) + abs(off)
        res = g.resolution
        c0 = max(0, math.floor((pose.x - reach - g.origin[0]) / res))
        c1 = min(g.width, math.floor((pose.x + reach - g.origin[0]) / res) + 1)
        r0 = max(0, math.floor((pose.y - reach - g.origin[1]) / res))
        r1 = min(g.height, math.floor((pose.y + reach - g.origin[1]) / res) + 1)
        if c1 > c0 and r1 > r0:
            c, s = math.cos(pose.theta), math.sin(pose.theta)
            dx = (g.origin[0] + (np.arange(c0, c1) + 0.5) * res - pose.x)[None, :]
            dy = (g.origin[1] + (np.arange(r0, r1) + 0.5) * res - pose.y)[:, None]
            inside = (np.abs(dx * c + dy * s - off) <= hl) & (np.abs(dy * c - dx * s) <= hw)
            cells[r0:r1, c0:c1] &= ~inside
        return OccupancyGrid(g.origin, res, cells)

    def _path_blocked(self, pose: Pose2D) -> bool:
        checker = GridCollisionChecker(self._grid_around(pose), self.spec, 0.0)
        rest = self.tracker.remaining_poses()
        return len(rest) > 0 and not checker.free(rest).all()

    def _plan(self, pose: Pose2D, goal) -> None:
        self.tracker = None
        self.path = None
        if self.failed_version == self.map_version or self.cycle - self.failed_cycle < self.retry_interval:
            return
        self.plans += 1
        goal_pose = Pose2D(goal[0], goal[1], 0.0)
        # aim inside the goal disk so tracking error does not leave the episode short of it
        base = {**self.params.__dict__, "heading_tolerance": None,
                "goal_tolerance": min(self.params.goal_tolerance, 0.1)}
        path = None
        grid = self._grid_around(pose)
        # optionally plan with extra clearance first so that hits trickling in
        # next to known walls do not invalidate the path; fall back to the
        # nominal margin when the padded query fails
        margins = [self.params.margin]
        if self.plan_padding > 0:
            margins.insert(0, self.params.margin + self.plan_padding)
        for margin in margins:
            try:
                path = hybrid_astar(grid, pose, goal_pose, self.spec,
                                    PlannerParams(**{**base, "cell_margin": margin}))
                break
            except NoPath:
                continue
        if path is None:
            self.failed_version = self.map_version
            self.failed_cycle = self.cycle
            return
        if len(path) == 0:
            return
        self.path = path
        self.tracker = PurePursuit(path, self.spec, self.lookahead, self.speed)

    def _stalled(self, pose: Pose2D) -> bool:
        """True when the last command asked for motion but the pose did not change (contact)."""
        return (self.replan_on_stall and self.last_pose is not None and self.last_speed != 0.0
                and pose.x == self.last_pose.x and pose.y == self.last_pose.y
                and pose.theta == self.last_pose.theta)

    def act(self, percept: Percept) -> np.ndarray:
        a = self._command(percept)
        self.last_pose = percept.pose
        self.last_speed = float(a[0])
        return a

    def _command(self, percept: Percept) -> np.ndarray:
        self.cycle += 1
        changed = self._integrate_scan(percept.pose, percept.scan)
        pose = percept.pose
        if self.tracker is not None:
            if self.tracker.finished or self.tracker.tracking_error(pose) > self.replan_error:
                self.tracker = None
            elif self._stalled(pose) or (changed and self._path_blocked(pose)):
                self.tracker = None
        if self.tracker is None:
            self._plan(pose, percept.goal)
        if self.tracker is None:
            return np.zeros(2)
        try:
            return self.tracker.step(pose)
        except PathExhausted:
            self._plan(pose, percept.goal)
            if self.tracker is None:
                return np.zeros(2)
            try:
                return self.tracker.step(pose)
            except PathExhausted:
                return np.zeros(2)
