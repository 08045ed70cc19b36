"""Procedural dead-end generation with a built-in feasible escape.

Pipeline per instance: sample a multi-phase seed trajectory under Ackermann
limits, sweep its inflated footprint into an envelope, march out along the final
heading to cut one exit, then turn the remaining boundary into walls or posts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from deadend import geometry as geo
from deadend.geometry import Cylinder, OccupancyGrid, Pose2D, Wall
from deadend.kinematics import VehicleSpec, integrate
from deadend.scenario import (
    EXIT_MODES,
    GOAL_RADIUS,
    STYLES,
    VARIANTS,
    ControlPhase,
    Goal,
    Scenario,
    SeedTrajectory,
)
from deadend.simulator import SimConfig, Simulator, Status

DT = 0.1


class GenerationError(RuntimeError):
    pass


class CarveError(GenerationError):
    """The exit march or strip produced an unusable layout for this seed."""


@dataclass(frozen=True)
class ManeuverStyle:
    """Maneuver style for seed sampling.

    ``kind`` fixes the style; with ``kind=None`` every seed draws corridor with
    probability ``mix_probability`` and tight_turn otherwise.
    """

    kind: Optional[str] = None
    mix_probability: float = 0.5

    def __post_init__(self):
        if self.kind is not None and self.kind not in STYLES:
            raise ValueError(f"unknown style {self.kind!r}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ValueError("mix_probability must lie in [0, 1]")


@dataclass(frozen=True)
class GenParams:
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    style: ManeuverStyle = field(default_factory=ManeuverStyle)
    variant: str = "walls"  # walls | cylinders | both
    n_phases: int = 50
    reverse_probability: float = 0.5
    clearance: float = 0.05
    wall_thickness: float = 0.05
    cylinder_radius: float = 0.05
    cylinder_spacing_frac: float = 0.5
    exit_margin: float = 0.1
    resolution: float = 0.025
    spacing: float = 0.02
    goal_radius: float = GOAL_RADIUS
    tile_margin: float = 2.0
    max_attempts: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicle"] = self.vehicle.to_dict()
        d["style"] = {"kind": self.style.kind, "mix_probability": self.style.mix_probability}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        d = dict(d)
        if "vehicle" in d:
            d["vehicle"] = VehicleSpec.from_dict(d["vehicle"])
        if "style" in d:
            d["style"] = ManeuverStyle(**d["style"])
        return cls(**d)

    @property
    def obstacle_reach(self) -> float:
        return max(self.wall_thickness / 2, self.cylinder_radius)

    @property
    def guard(self) -> float:
        """Extra inflation so that ``clearance`` survives rasterization,
        simplification (one cell) and the obstacle thickness."""
        return self.obstacle_reach + self.resolution * (1.0 + math.sqrt(0.5))


# --------------------------------------------------------------------------
# seed sampling


def _phase(rng: np.random.Generator, style: str, spec: VehicleSpec, sign: float) -> tuple[float, float, float]:
    if style == "corridor":
        v = sign * rng.uniform(0.5, 1.0) * spec.v_max
        delta = rng.uniform(-0.2, 0.2) * spec.delta_max
    else:
        v = sign * rng.uniform(0.1, 0.3) * spec.v_max
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.7, 1.0) * spec.delta_max
    # whole control cycles so replay slices phases exactly
    duration = int(rng.integers(3, 16)) * DT
    return float(v), float(delta), duration


def seed_from_controls(
    controls: Sequence[tuple[float, float, float]],
    spec: VehicleSpec,
    start: Pose2D = Pose2D(0.0, 0.0, 0.0),
    style: str = "corridor",
    spacing: float = 0.02,
) -> SeedTrajectory:
    """Build a seed from explicit ``(v, delta, duration)`` phases."""
    phases = []
    t = 0.0
    for v, delta, duration in controls:
        if duration <= 0:
            raise ValueError("phase durations must be positive")
        if abs(v) > spec.v_max * (1 + 1e-12) or abs(delta) > spec.delta_max * (1 + 1e-12):
            raise ValueError("phase violates vehicle limits")
        phases.append(ControlPhase(float(v), float(delta), float(duration), round(t, 10)))
        t += duration
    exit_mode = "reverse" if phases and phases[-1].v < 0 else "forward"
    return SeedTrajectory(tuple(_densify_phases(start, phases, spec, spacing)), tuple(phases), exit_mode, style)


def sample_seed(
    style: ManeuverStyle,
    spec: VehicleSpec,
    rng_seed,
    n_phases: int = 50,
    reverse_probability: float = 0.5,
    spacing: float = 0.02,
) -> SeedTrajectory:
    """Random multi-phase forward/reverse maneuver starting at the origin.

    The start heading is uniform; each phase draws a direction of travel and
    style-specific speed, steering and duration. The last phase's direction is
    reverse with ``reverse_probability`` and fixes the exit mode.
    """
    if n_phases < 1:
        raise ValueError("n_phases must be >= 1")
    rng = np.random.default_rng(rng_seed)
    kind = style.kind
    if kind is None:
        kind = "corridor" if rng.random() < style.mix_probability else "tight_turn"
    heading = rng.uniform(-math.pi, math.pi)
    controls = []
    for i in range(n_phases):
        if i == n_phases - 1:
            sign = -1.0 if rng.random() < reverse_probability else 1.0
        else:
            sign = -1.0 if rng.random() < 0.5 else 1.0
        controls.append(_phase(rng, kind, spec, sign))
    return seed_from_controls(controls, spec, Pose2D(0.0, 0.0, heading), kind, spacing)


def _densify_phases(start: Pose2D, phases: Sequence[ControlPhase], spec: VehicleSpec,
                    spacing: float, max_turn: float = 0.05) -> list[Pose2D]:
    poses = [start]
    pose = start
    for ph in phases:
        arc = abs(ph.v) * ph.duration
        turn = arc * abs(math.tan(ph.delta)) / spec.wheelbase
        n = max(1, math.ceil(arc / spacing - 1e-9), math.ceil(turn / max_turn - 1e-9))
        for k in range(1, n + 1):
            poses.append(integrate(pose, ph.v, ph.delta, ph.duration * k / n, spec.wheelbase))
        pose = poses[-1]
    return poses


def densify(seed: SeedTrajectory, spec: VehicleSpec, spacing: float = 0.02) -> list[Pose2D]:
    """Poses along the seed at most ``spacing`` apart in arclength, phase ends included."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    return _densify_phases(seed.start, seed.controls, spec, spacing)


# --------------------------------------------------------------------------
# envelope and exit


@dataclass
class Envelope:
    grid: OccupancyGrid  # swept, gap-closed free region for the vehicle
    filled: OccupancyGrid  # same with enclosed holes filled
    loops: list[np.ndarray]  # simplified boundary loops

    @property
    def outer_index(self) -> int:
        areas = [geo.signed_area(l) for l in self.loops]
        return int(np.argmax(areas))


def build_envelope(poses: Sequence[Pose2D], spec: VehicleSpec, clearance: float = 0.05,
                   resolution: float = 0.025, guard: float = 0.0) -> Envelope:
    """Sweep the footprint inflated by ``clearance + guard`` and trace its boundary."""
    if not poses:
        raise ValueError("build_envelope needs at least one pose")
    if clearance < 0:
        raise ValueError("clearance must be non-negative")
    fp = spec.footprint.inflated(clearance + guard)
    grid = geo.close_gaps(geo.sweep_union(poses, fp, resolution, margin_cells=3), 1)
    loops = geo.extract_boundary(grid)
    return Envelope(grid, geo.fill_holes(grid), loops)


def _polygon_touches(grid: OccupancyGrid, poly: np.ndarray) -> bool:
    rs, cs, mask = grid.polygon_mask(poly)
    return bool(np.any(grid.cells[rs, cs] & mask))


def _clip_interval(p: np.ndarray, q: np.ndarray, poly: np.ndarray) -> Optional[tuple[float, float]]:
    """Parameter interval of segment p->q inside a CCW convex polygon (Cyrus-Beck)."""
    t0, t1 = 0.0, 1.0
    d = q - p
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        edge = b - a
        # inside: cross(edge, x - a) >= 0
        num = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
        den = edge[0] * d[1] - edge[1] * d[0]
        if abs(den) < 1e-15:
            if num < 0:
                return None
            continue
        t = -num / den
        if den > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    if t1 - t0 <= 1e-12:
        return None
    return t0, t1


@dataclass
class CarvedBoundary:
    polylines: list[tuple[np.ndarray, bool]]  # (points, closed)
    goal: tuple[float, float]
    strip: np.ndarray
    clear_pose: Pose2D
    gap_endpoints: tuple[np.ndarray, np.ndarray]


def exit_direction(final_pose: Pose2D, exit_mode: str) -> float:
    return final_pose.theta if exit_mode == "forward" else final_pose.theta + math.pi


def carve_exit(envelope: Envelope, final_pose: Pose2D, exit_mode: str, spec: VehicleSpec,
               exit_margin: float = 0.1, goal_radius: float = GOAL_RADIUS) -> CarvedBoundary:
    """March out along the exit direction and cut one gap in the boundary.

    Raises :class:`CarveError` when the march exceeds ten envelope diameters or
    when the layout would not leave exactly one clean gap in the outer boundary.
    """
    if exit_mode not in EXIT_MODES:
        raise ValueError(f"unknown exit mode {exit_mode!r}")
    filled = envelope.filled
    res = filled.resolution
    fp = spec.footprint
    if not filled.is_occupied(final_pose.x, final_pose.y):
        raise CarveError("final pose lies outside the envelope")
    phi = exit_direction(final_pose, exit_mode)
    u = np.array([math.cos(phi), math.sin(phi)])
    x0, y0, x1, y1 = filled.extent
    diameter = math.hypot(x1 - x0, y1 - y0)

    def pose_at(s):
        return Pose2D(final_pose.x + s * u[0], final_pose.y + s * u[1], final_pose.theta)

    k = 0
    while True:
        k += 1
        s_clear = k * res
        if s_clear > 10 * diameter:
            raise CarveError("exit march exceeded ten envelope diameters")
        if not _polygon_touches(filled, geo.footprint_polygon(pose_at(s_clear), fp)):
            break

    clear_pose = pose_at(s_clear)
    s_goal = s_clear + 0.5 * spec.length
    goal = final_pose.xy + s_goal * u
    # nothing of the envelope may lie beyond the clear pose inside the exit lane
    s = s_clear
    while s <= s_goal + goal_radius + res:
        if _polygon_touches(filled, geo.footprint_polygon(pose_at(s), fp)):
            raise CarveError("exit lane re-enters the envelope")
        s += res

    half = spec.width / 2 + exit_margin
    s_end = s_goal + max(goal_radius, spec.length / 2 + abs(spec.ref_offset)) + res
    nrm = np.array([-u[1], u[0]])
    p0 = final_pose.xy
    strip = np.array([p0 - half * nrm, p0 + s_end * u - half * nrm, p0 + s_end * u + half * nrm, p0 + half * nrm])
    if geo.signed_area(strip) < 0:
        strip = strip[::-1]

    polylines: list[tuple[np.ndarray, bool]] = []
    outer = envelope.outer_index
    gap_endpoints = None
    for li, ring in enumerate(envelope.loops):
        pieces, n_cuts, cut_points = _cut_ring(ring, strip)
        if li == outer:
            if n_cuts != 1:
                raise CarveError(f"exit strip cut the outer boundary {n_cuts} times")
            a, b = cut_points[0]
            la = float(np.dot(a - p0, nrm))
            lb = float(np.dot(b - p0, nrm))
            if not (abs(abs(la) - half) < 1e-6 and abs(abs(lb) - half) < 1e-6 and la * lb < 0):
                raise CarveError("outer boundary gap does not span the exit strip")
            gap_endpoints = (a, b)
        polylines.extend(pieces)
    if sum(1 for l in envelope.loops if geo.signed_area(l) > 0) != 1:
        raise CarveError("envelope is not a single region")
    return CarvedBoundary(polylines, (float(goal[0]), float(goal[1])), strip, clear_pose, gap_endpoints)


def _cut_ring(ring: np.ndarray, strip: np.ndarray):
    """Remove the parts of a closed ring inside ``strip``.

    Returns ``(pieces, n_cuts, cut_points)`` where pieces are ``(points, closed)``
    and every cut is reported by its (exit, re-entry) points on the ring.
    """
    n = len(ring)
    # per edge: list of kept sub-intervals
    inside_any = False
    edges = []
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        iv = _clip_interval(p, q, strip)
        if iv is None:
            edges.append([(0.0, 1.0)])
            continue
        inside_any = True
        kept = []
        if iv[0] > 1e-12:
            kept.append((0.0, iv[0]))
        if iv[1] < 1 - 1e-12:
            kept.append((iv[1], 1.0))
        edges.append(kept)
    if not inside_any:
        return [(ring.copy(), True)], 0, []

    # Walk around the ring starting right after a removed stretch.
    def point(i, t):
        p, q = ring[i], ring[(i + 1) % n]
        return p + t * (q - p)

    # sequence of (edge index, t0, t1) kept spans in ring order
    spans = [(i, a, b) for i in range(n) for (a, b) in edges[i]]
    # a removed stretch exists between consecutive spans that do not touch
    def touches(s1, s2):
        i1, _, b1 = s1
        i2, a2, _ = s2
        return b1 >= 1 - 1e-12 and a2 <= 1e-12 and (i1 + 1) % n == i2

    if not spans:
        return [], 1, []
    m = len(spans)
    breaks = [j for j in range(m) if not touches(spans[j], spans[(j + 1) % m])]
    if not breaks:
        # removed part lies strictly inside one edge; cannot happen for a convex strip
        return [(ring.copy(), True)], 0, []
    pieces = []
    cut_points = []
    for bi, j in enumerate(breaks):
        start = (j + 1) % m
        end = breaks[(bi + 1) % len(breaks)]
        pts = []
        idx = start
        while True:
            i, a, b = spans[idx]
            if not pts:
                pts.append(point(i, a))
            pts.append(point(i, b))
            if idx == end:
                break
            idx = (idx + 1) % m
        cut_points.append((point(spans[j][0], spans[j][2]), point(spans[start][0], spans[start][1])))
        arr = np.array(pts)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(arr, axis=0), axis=1) > 1e-12])
        arr = arr[keep]
        if len(arr) >= 2:
            pieces.append((arr, False))
    return pieces, len(breaks), cut_points


def realize_obstacles(polylines: Sequence[tuple[np.ndarray, bool]], variant: str, spec: VehicleSpec,
                      wall_thickness: float = 0.05, cylinder_radius: float = 0.05,
                      spacing_frac: float = 0.5) -> list:
    """Walls along every boundary edge, or posts spaced at most ``spacing_frac * width``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    out = []
    for pts, closed in polylines:
        path = np.vstack([pts, pts[:1]]) if closed else pts
        if variant == "walls":
            for a, b in zip(path[:-1], path[1:]):
                if np.linalg.norm(b - a) > 1e-9:
                    out.append(Wall((a[0], a[1]), (b[0], b[1]), wall_thickness))
        else:
            spacing = spacing_frac * spec.width
            posts = [path[0]]
            for a, b in zip(path[:-1], path[1:]):
                seg = np.linalg.norm(b - a)
                k = max(1, math.ceil(seg / spacing - 1e-9))
                for j in range(1, k + 1):
                    posts.append(a + (b - a) * j / k)
            if closed:
                posts.pop()
            for p in posts:
                out.append(Cylinder((float(p[0]), float(p[1])), cylinder_radius))
    return out


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    feasible: bool
    collision_count: int
    reached_goal: bool
    crashed: bool
    status: str
    steps: int


def exit_extension(scenario: Scenario, speed_frac: float = 0.5) -> ControlPhase:
    """Straight phase from the seed's final pose through the exit to the goal."""
    final = scenario.seed.final
    d = math.hypot(scenario.goal.center[0] - final.x, scenario.goal.center[1] - final.y)
    v = speed_frac * scenario.vehicle.v_max
    n = max(1, math.ceil(d / (v * DT) - 1e-9))
    sign = -1.0 if scenario.seed.exit_mode == "reverse" else 1.0
    return ControlPhase(sign * v, 0.0, n * DT, scenario.seed.duration)


def validate_scenario(s: Scenario, config: Optional[SimConfig] = None) -> ValidationReport:
    """Replay the seed plus the exit extension; feasible means no contact and goal reached."""
    controls = list(s.seed.controls) + [exit_extension(s)]
    total = sum(c.duration for c in controls)
    horizon = max((config or SimConfig()).max_steps, int(math.ceil(total / DT)) + 10)
    try:
        sim = Simulator(s, config=config)
        res = sim.replay(controls, max_steps=horizon)
    except ValueError:
        return ValidationReport(False, 0, False, False, "invalid-start", 0)
    reached = res.status is Status.GOAL
    ok = reached and res.collisions == 0 and res.crashes == 0
    return ValidationReport(ok, res.collisions + res.crashes, reached, res.crashes > 0, res.status.value, res.steps)


# --------------------------------------------------------------------------
# batches


def _instance_rng_seed(batch_seed: int, index: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(batch_seed) & 0xFFFFFFFF, index, attempt])


@dataclass
class Layout:
    """One carved envelope; both obstacle variants can be realized from it."""

    seed: SeedTrajectory
    envelope: Envelope
    carved: CarvedBoundary
    attempts: int


def make_layout(params: GenParams, batch_seed: int, index: int) -> Layout:
    spec = params.vehicle
    last_err = None
    for attempt in range(params.max_attempts):
        ss = _instance_rng_seed(batch_seed, index, attempt)
        seed = sample_seed(params.style, spec, ss, params.n_phases, params.reverse_probability, params.spacing)
        env = build_envelope(seed.poses, spec, params.clearance, params.resolution, params.guard)
        try:
            carved = carve_exit(env, seed.final, seed.exit_mode, spec, params.exit_margin, params.goal_radius)
        except CarveError as err:
            last_err = err
            continue
        return Layout(seed, env, carved, attempt + 1)
    raise GenerationError(f"instance {index}: no usable layout in {params.max_attempts} attempts ({last_err})")


def scenario_from_layout(layout: Layout, params: GenParams, variant: str, scenario_id: str) -> Scenario:
    obstacles = realize_obstacles(layout.carved.polylines, variant, params.vehicle, params.wall_thickness,
                                  params.cylinder_radius, params.cylinder_spacing_frac)
    return Scenario(
        id=scenario_id,
        vehicle=params.vehicle,
        start=layout.seed.start,
        goal=Goal(layout.carved.goal, params.goal_radius),
        obstacles=tuple(obstacles),
        seed=layout.seed,
        variant=variant,
    )


def _variants(params: GenParams, index: int) -> list[str]:
    if params.variant == "both":
        return list(VARIANTS)
    if params.variant == "alternate":
        return [VARIANTS[index % 2]]
    if params.variant not in VARIANTS:
        raise ValueError(f"unknown variant {params.variant!r}")
    return [params.variant]


def generate_instance(params: GenParams, batch_seed: int, index: int) -> list[Scenario]:
    """All scenarios for one layout index (one per requested variant), untiled."""
    layout = make_layout(params, batch_seed, index)
    out = []
    for variant in _variants(params, index):
        suffix = "" if params.variant != "both" else "-" + variant[0]
        out.append(scenario_from_layout(layout, params, variant, f"s{batch_seed}-{index:04d}{suffix}"))
    return out


def tile(groups: Sequence[Sequence[Scenario]], margin: float) -> list[Scenario]:
    """Place each group (scenarios sharing a layout) in its own grid tile."""
    boxes = []
    for g in groups:
        bs = np.array([s.bounds() for s in g])
        boxes.append((bs[:, 0].min(), bs[:, 1].min(), bs[:, 2].max(), bs[:, 3].max()))
    size = max(max(b[2] - b[0], b[3] - b[1]) for b in boxes)
    pitch = math.ceil(size + margin)
    cols = max(1, math.ceil(math.sqrt(len(groups))))
    out = []
    for i, (g, b) in enumerate(zip(groups, boxes)):
        tx = (i % cols) * pitch + margin / 2
        ty = (i // cols) * pitch + margin / 2
        dx, dy = tx - b[0], ty - b[1]
        if i == 0 and len(groups) == 1:
            dx = dy = 0.0
        out.extend(s.translated(dx, dy) for s in g)
    return out


def generate_batch(n: int, params: GenParams, batch_seed: int = 0, jobs: int = 1,
                   validate: bool = True) -> list[Scenario]:
    """Generate ``n`` layouts, tile them disjointly and check every scenario.

    Raises :class:`GenerationError` naming the first failing index.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    indices = list(range(n))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            groups = list(ex.map(generate_instance, [params] * n, [batch_seed] * n, indices))
    else:
        groups = [generate_instance(params, batch_seed, i) for i in indices]
    scenarios = tile(groups, params.tile_margin)
    if validate:
        bad = []
        for s in scenarios:
            rep = validate_scenario(s)
            if not rep.feasible:
                bad.append((s.id, rep))
        if bad:
            sid, rep = bad[0]
            raise GenerationError(f"{len(bad)} infeasible scenario(s), first {sid}: {rep}")
    return scenarios
