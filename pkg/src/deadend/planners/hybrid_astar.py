"""Hybrid A* over an (x, y, heading, gear) lattice with Ackermann motion primitives."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from deadend.geometry import OccupancyGrid, Pose2D, normalize_angle
from deadend.kinematics import VehicleSpec, integrate

FORWARD, REVERSE = 1, -1
# worst-case ratio of an 8-connected grid path to the straight segment it follows
OCTILE_STRETCH = math.sqrt(4 - 2 * math.sqrt(2))


@dataclass(frozen=True)
class PlannerParams:
    resolution: float = 0.05
    n_headings: int = 32
    steer_samples: int = 5
    arc_factor: float = 1.5
    reverse_factor: float = 1.5
    gear_switch_penalty: float = 0.5
    goal_tolerance: float = 0.2
    # goal heading tolerance in bins; None accepts any heading
    heading_tolerance: Optional[int] = 1
    max_expansions: int = 200_000
    samples_per_primitive: int = 5
    # occupied cells act as disks of this radius (default: half a cell)
    cell_margin: Optional[float] = None

    @property
    def arc(self) -> float:
        return self.arc_factor * self.resolution * math.sqrt(2)

    @property
    def margin(self) -> float:
        return self.resolution / 2 if self.cell_margin is None else self.cell_margin


@dataclass(frozen=True)
class LatticeState:
    row: int
    col: int
    heading: int
    direction: int
    pose: Pose2D

    @property
    def key(self) -> tuple:
        return (self.row, self.col, self.heading, self.direction)


def heading_index(theta: float, n_headings: int) -> int:
    return int(round(theta / (2 * math.pi / n_headings))) % n_headings


def lattice_state(pose: Pose2D, direction: int, grid: OccupancyGrid, n_headings: int) -> LatticeState:
    row, col = grid.cell_of(np.array([pose.x, pose.y]))
    return LatticeState(int(row), int(col), heading_index(pose.theta, n_headings), direction, pose)


@dataclass(frozen=True)
class Primitive:
    direction: int
    delta: float
    arc: float
    samples: tuple[Pose2D, ...]
    cost: float

    @property
    def end(self) -> Pose2D:
        return self.samples[-1]


def steering_set(spec: VehicleSpec, n: int) -> np.ndarray:
    return np.linspace(-spec.delta_max, spec.delta_max, n)


class PrimitiveTable:
    """Body-frame samples of every primitive, so expanding a node is one rigid transform."""

    def __init__(self, spec: VehicleSpec, params: PlannerParams = PlannerParams()):
        arc = params.arc
        k = params.samples_per_primitive
        origin = Pose2D(0.0, 0.0, 0.0)
        self.directions, self.deltas, self.base_costs, local = [], [], [], []
        for direction in (FORWARD, REVERSE):
            for delta in steering_set(spec, params.steer_samples):
                pts = [integrate(origin, direction, float(delta), arc * j / k, spec.wheelbase) for j in range(1, k + 1)]
                local.append([[p.x, p.y, p.theta] for p in pts])
                self.directions.append(direction)
                self.deltas.append(float(delta))
                self.base_costs.append(arc * (params.reverse_factor if direction == REVERSE else 1.0))
        self.local = np.array(local)
        self.directions = np.array(self.directions)
        self.base_costs = np.array(self.base_costs)
        self.arc = arc
        self.gear_switch_penalty = params.gear_switch_penalty

    def __len__(self) -> int:
        return len(self.directions)

    def samples_from(self, pose: Pose2D) -> np.ndarray:
        """World-frame samples, shape (n_primitives, samples_per_primitive, 3)."""
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        lx, ly, lt = self.local[..., 0], self.local[..., 1], self.local[..., 2]
        return np.stack([pose.x + c * lx - s * ly, pose.y + s * lx + c * ly, pose.theta + lt], axis=-1)

    def costs_from(self, direction: int) -> np.ndarray:
        switch = (self.directions != direction) & (direction != 0)
        return self.base_costs + self.gear_switch_penalty * switch


def motion_primitives(s: LatticeState, spec: VehicleSpec, params: PlannerParams = PlannerParams(),
                      table: Optional[PrimitiveTable] = None) -> list[Primitive]:
    """Successors for every steering sample in both gears."""
    table = table or PrimitiveTable(spec, params)
    samples = table.samples_from(s.pose)
    costs = table.costs_from(s.direction)
    return [Primitive(int(table.directions[i]), table.deltas[i], table.arc,
                      tuple(Pose2D(*row) for row in samples[i]), float(costs[i]))
            for i in range(len(table))]


# --------------------------------------------------------------------------
# collision checking


class GridCollisionChecker:
    """Footprint test against occupied cells, each treated as a disk of radius ``margin``.

    Poses whose footprint leaves the raster count as colliding.
    """

    def __init__(self, grid: OccupancyGrid, spec: VehicleSpec, margin: float):
        self.grid = grid
        self.hl = spec.length / 2 + margin
        self.hw = spec.width / 2 + margin
        self.offset = spec.ref_offset
        self.reach = math.hypot(self.hl, self.hw) + abs(self.offset)
        x0, y0, x1, y1 = grid.extent
        self.inner = (x0 + self.reach, y0 + self.reach, x1 - self.reach, y1 - self.reach)
        # distance from each cell centre to the nearest occupied centre; a pose whose
        # footprint centre cell is farther than the inflated circumradius plus the
        # quantization slack is certainly free
        if grid.cells.any():
            self.clear = distance_transform_edt(~grid.cells) * grid.resolution
        else:
            self.clear = np.full(grid.cells.shape, np.inf)
        self.safe = math.hypot(self.hl, self.hw) + grid.resolution / math.sqrt(2)

    def _points_near(self, xy_lo, xy_hi) -> np.ndarray:
        g = self.grid
        ox, oy = g.origin
        res = g.resolution
        c0 = max(math.floor((xy_lo[0] - ox) / res), 0)
        r0 = max(math.floor((xy_lo[1] - oy) / res), 0)
        c1 = min(math.floor((xy_hi[0] - ox) / res) + 1, g.width)
        r1 = min(math.floor((xy_hi[1] - oy) / res) + 1, g.height)
        if r1 <= r0 or c1 <= c0:
            return np.zeros((0, 2))
        rows, cols = np.nonzero(g.cells[r0:r1, c0:c1])
        return np.stack([g.origin[0] + (cols + c0 + 0.5) * g.resolution,
                         g.origin[1] + (rows + r0 + 0.5) * g.resolution], axis=1)

    def free(self, poses: np.ndarray) -> np.ndarray:
        """Per-pose collision-free flags for an (N, 3) array."""
        poses = np.asarray(poses, float).reshape(-1, 3)
        ok = ((poses[:, 0] >= self.inner[0]) & (poses[:, 0] <= self.inner[2])
              & (poses[:, 1] >= self.inner[1]) & (poses[:, 1] <= self.inner[3]))
        if not ok.any():
            return ok
        c = np.cos(poses[:, 2])
        s = np.sin(poses[:, 2])
        g = self.grid
        cx = poses[:, 0] + self.offset * c
        cy = poses[:, 1] + self.offset * s
        cols = np.clip(np.floor((cx - g.origin[0]) / g.resolution).astype(int), 0, g.width - 1)
        rows = np.clip(np.floor((cy - g.origin[1]) / g.resolution).astype(int), 0, g.height - 1)
        check = ok & (self.clear[rows, cols] <= self.safe)
        if not check.any():
            return ok
        sub = poses[check]
        lo = sub[:, :2].min(axis=0) - self.reach
        hi = sub[:, :2].max(axis=0) + self.reach
        pts = self._points_near(lo, hi)
        if len(pts) == 0:
            return ok
        c = c[check][:, None]
        s = s[check][:, None]
        dx = pts[None, :, 0] - sub[:, 0:1]
        dy = pts[None, :, 1] - sub[:, 1:2]
        along = dx * c + dy * s - self.offset
        across = dy * c - dx * s
        hit = (np.abs(along) <= self.hl) & (np.abs(across) <= self.hw)
        out = ok.copy()
        out[check] = ~hit.any(axis=1)
        return out

    def pose_free(self, pose: Pose2D) -> bool:
        return bool(self.free(np.array([[pose.x, pose.y, pose.theta]]))[0])


# --------------------------------------------------------------------------
# heuristic


def grid_distance_to(grid: OccupancyGrid, goal_xy: Sequence[float]) -> np.ndarray:
    """8-connected shortest-path length from every free cell to the goal cell (inf if unreachable)."""
    h, w = grid.cells.shape
    dist = np.full((h, w), np.inf)
    gr, gc = (int(v) for v in grid.cell_of(np.asarray(goal_xy, float)))
    if not (0 <= gr < h and 0 <= gc < w) or grid.cells[gr, gc]:
        return dist
    res = grid.resolution
    steps = [(dr, dc, res * math.hypot(dr, dc)) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    free = ~grid.cells
    dist[gr, gc] = 0.0
    heap = [(0.0, gr, gc)]
    while heap:
        d, r, c = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for dr, dc, step in steps:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and free[rr, cc] and d + step < dist[rr, cc]:
                dist[rr, cc] = d + step
                heapq.heappush(heap, (d + step, rr, cc))
    return dist


class Heuristic:
    """max(Euclidean, obstacle-aware grid distance scaled to stay admissible) minus goal tolerance."""

    def __init__(self, grid: OccupancyGrid, goal_xy: Sequence[float], tolerance: float):
        self.grid = grid
        self.goal = np.asarray(goal_xy, float)
        self.tolerance = tolerance
        self.flood = grid_distance_to(grid, goal_xy)
        # cell-centre quantization at both ends
        self.slack = grid.resolution * math.sqrt(2)

    def grid_lower_bound(self, pose: Pose2D) -> float:
        r, c = (int(v) for v in self.grid.cell_of(np.array([pose.x, pose.y])))
        if not (0 <= r < self.grid.height and 0 <= c < self.grid.width):
            return 0.0
        return max(0.0, self.flood[r, c] / OCTILE_STRETCH - self.slack)

    def __call__(self, pose: Pose2D) -> float:
        euclid = math.hypot(pose.x - self.goal[0], pose.y - self.goal[1])
        return max(0.0, max(euclid, self.grid_lower_bound(pose)) - self.tolerance)


# --------------------------------------------------------------------------
# search


@dataclass
class PlannedPath:
    """Poses from the start; ``directions[i]``/``steering[i]`` drive ``poses[i] -> poses[i + 1]``.

    Each step is one sample of a motion primitive, so consecutive poses are
    joined by a constant-control arc of length ``step_length``.
    """

    poses: list[Pose2D]
    directions: list[int] = field(default_factory=list)
    steering: list[float] = field(default_factory=list)
    step_length: float = 0.0
    expansions: int = 0

    @property
    def cusp_count(self) -> int:
        return sum(1 for a, b in zip(self.directions, self.directions[1:]) if a != b)

    @property
    def length(self) -> float:
        return self.step_length * len(self.directions)

    def __len__(self) -> int:
        return len(self.directions)

    def segments(self) -> list[tuple[int, list[Pose2D]]]:
        """Maximal runs of one gear as (direction, poses including both ends)."""
        out = []
        start = 0
        for i in range(1, len(self.directions) + 1):
            if i == len(self.directions) or self.directions[i] != self.directions[start]:
                out.append((self.directions[start], self.poses[start:i + 1]))
                start = i
        return out


class NoPath(RuntimeError):
    def __init__(self, reason: str, expansions: int):
        super().__init__(f"no path: {reason} after {expansions} expansions")
        self.reason = reason
        self.expansions = expansions


def _goal_reached(pose: Pose2D, goal: Pose2D, params: PlannerParams) -> bool:
    if math.hypot(pose.x - goal.x, pose.y - goal.y) > params.goal_tolerance:
        return False
    if params.heading_tolerance is None:
        return True
    bin_width = 2 * math.pi / params.n_headings
    return abs(normalize_angle(pose.theta - goal.theta)) <= params.heading_tolerance * bin_width + 1e-9


def hybrid_astar(grid: OccupancyGrid, start: Pose2D, goal: Pose2D, spec: VehicleSpec,
                 params: PlannerParams = PlannerParams(),
                 checker: Optional[GridCollisionChecker] = None,
                 heuristic: Optional[Heuristic] = None) -> PlannedPath:
    """Plan from ``start`` to ``goal``; raises :class:`NoPath` on exhaustion or budget."""
    checker = checker or GridCollisionChecker(grid, spec, params.margin)
    if not checker.pose_free(start):
        raise NoPath("start in collision", 0)
    if _goal_reached(start, goal, params):
        return PlannedPath([start])
    h = heuristic or Heuristic(grid, (goal.x, goal.y), params.goal_tolerance)
    h0 = h(start)
    if not math.isfinite(h.grid_lower_bound(start)):
        raise NoPath("goal unreachable on the grid", 0)

    table = PrimitiveTable(spec, params)
    n_h = params.n_headings
    bin_width = 2 * math.pi / n_h
    ox, oy = grid.origin
    res = grid.resolution
    height, width = grid.height, grid.width
    heading_tol = None if params.heading_tolerance is None else params.heading_tolerance * bin_width + 1e-9
    flood = h.flood
    directions = [int(d) for d in table.directions]
    cost_rows = {d: table.costs_from(d).tolist() for d in (0, FORWARD, REVERSE)}

    root = lattice_state(start, 0, grid, n_h)
    # node table: pose row, gear, key, g, parent index, primitive index from parent
    nodes = [((start.x, start.y, start.theta), 0, root.key, 0.0, -1, -1)]
    best_g = {root.key: 0.0}
    closed = set()
    heap = [(h0, 0, 0)]
    tie = 1
    expansions = 0
    while heap:
        _, _, idx = heapq.heappop(heap)
        pose, direction, key, g, _, _ = nodes[idx]
        if key in closed:
            continue
        closed.add(key)
        expansions += 1
        if expansions > params.max_expansions:
            raise NoPath("node budget exhausted", expansions - 1)
        samples = table.samples_from(Pose2D(*pose))
        free = checker.free(samples.reshape(-1, 3)).reshape(len(table), -1).all(axis=1)
        if not free.any():
            continue
        # per-successor bookkeeping for all primitives at once
        ends = samples[:, -1, :]
        cols = np.floor((ends[:, 0] - ox) / res).astype(int)
        rows = np.floor((ends[:, 1] - oy) / res).astype(int)
        heads = np.rint(ends[:, 2] / bin_width).astype(int) % n_h
        euclid = np.hypot(ends[:, 0] - goal.x, ends[:, 1] - goal.y)
        inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        grid_lb = np.zeros(len(table))
        grid_lb[inside] = np.maximum(0.0, flood[rows[inside], cols[inside]] / OCTILE_STRETCH - h.slack)
        hvals = np.maximum(0.0, np.maximum(euclid, grid_lb) - h.tolerance)
        at_goal = euclid <= params.goal_tolerance
        if heading_tol is not None:
            at_goal &= np.abs((ends[:, 2] - goal.theta + math.pi) % (2 * math.pi) - math.pi) <= heading_tol
        costs = cost_rows[direction]
        ends_l, rows_l, cols_l, heads_l = ends.tolist(), rows.tolist(), cols.tolist(), heads.tolist()
        hvals_l, goal_l = hvals.tolist(), at_goal.tolist()
        for i in np.flatnonzero(free).tolist():
            child_key = (rows_l[i], cols_l[i], heads_l[i], directions[i])
            if child_key in closed:
                continue
            g2 = g + costs[i]
            if goal_l[i]:
                nodes.append((tuple(ends_l[i]), directions[i], child_key, g2, idx, i))
                return _extract(nodes, len(nodes) - 1, table, params, expansions)
            if g2 >= best_g.get(child_key, math.inf):
                continue
            hv = hvals_l[i]
            if not math.isfinite(hv):
                continue
            best_g[child_key] = g2
            nodes.append((tuple(ends_l[i]), directions[i], child_key, g2, idx, i))
            heapq.heappush(heap, (g2 + hv, tie, len(nodes) - 1))
            tie += 1
    raise NoPath("search space exhausted", expansions)


def _extract(nodes, idx: int, table: PrimitiveTable, params: PlannerParams, expansions: int) -> PlannedPath:
    chain = []
    while idx >= 0:
        pose, _, _, _, parent, prim = nodes[idx]
        chain.append((pose, prim))
        idx = parent
    chain.reverse()
    path = PlannedPath([Pose2D(*chain[0][0])], step_length=params.arc / params.samples_per_primitive,
                       expansions=expansions)
    # regenerate samples from each parent pose so the stored path is exactly what the primitives produce
    for (parent, _), (_, prim) in zip(chain, chain[1:]):
        for row in table.samples_from(Pose2D(*parent))[prim]:
            path.poses.append(Pose2D(*row))
            path.directions.append(int(table.directions[prim]))
            path.steering.append(table.deltas[prim])
    return path
