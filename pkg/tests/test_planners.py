import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deadend.geometry import OccupancyGrid, Pose2D, Wall, footprint_collides, rasterize_obstacles
from deadend.kinematics import VehicleSpec, integrate, min_turning_radius
from deadend.planners import (FollowTheGap, FTGParams, NoPath, PlannerParams, PurePursuit, ftg_step,
                              hybrid_astar, motion_primitives, pure_pursuit, pursuit_steering)
from deadend.planners.ftg import fov_view, gap_steering
from deadend.planners.hybrid_astar import (FORWARD, REVERSE, Heuristic, PlannedPath, lattice_state)

SPEC = VehicleSpec()
PARAMS = PlannerParams()
D_MAX = 10.0


def open_grid(size=4.0):
    return OccupancyGrid.empty(-size, -size, size, size, PARAMS.resolution)


def path_cost(path: PlannedPath, params=PARAMS) -> float:
    """Cost of a stored path from its gears, recomputed independently of the search."""
    per_prim = params.samples_per_primitive
    dirs = path.directions[::per_prim]
    cost = 0.0
    prev = 0
    for d in dirs:
        cost += params.arc * (params.reverse_factor if d == REVERSE else 1.0)
        if prev and d != prev:
            cost += params.gear_switch_penalty
        prev = d
    return cost


# --------------------------------------------------------------------------
# lattice and primitives


def test_primitive_set():
    s = lattice_state(Pose2D(0.0, 0.0, 0.0), FORWARD, open_grid(), PARAMS.n_headings)
    prims = motion_primitives(s, SPEC, PARAMS)
    assert len(prims) == 10
    assert sorted(p.direction for p in prims) == [REVERSE] * 5 + [FORWARD] * 5
    for p in prims:
        expect = integrate(s.pose, p.direction, p.delta, p.arc, SPEC.wheelbase)
        assert (p.end.x, p.end.y, p.end.theta) == pytest.approx((expect.x, expect.y, expect.theta), abs=1e-12)
        assert p.cost == pytest.approx(p.arc * (1.0 if p.direction == FORWARD else PARAMS.reverse_factor)
                                       + (PARAMS.gear_switch_penalty if p.direction == REVERSE else 0.0))


def test_primitive_leaves_its_cell_and_heading_bin():
    # a straight primitive moves at least one cell diagonal; a full-lock one turns by at least one bin
    assert PARAMS.arc >= PARAMS.resolution * math.sqrt(2)
    assert PARAMS.arc / min_turning_radius(SPEC) >= 2 * math.pi / PARAMS.n_headings


# --------------------------------------------------------------------------
# search


def test_straight_path_is_shortest_forward_run():
    start, goal = Pose2D(0.0, 0.0, 0.0), Pose2D(2.0, 0.0, 0.0)
    path = hybrid_astar(open_grid(), start, goal, SPEC, PARAMS)
    # any path must end within 0.2 m of the goal, so at least 1.8 m of forward arcs are needed
    n = math.ceil(1.8 / PARAMS.arc)
    assert path_cost(path) == pytest.approx(n * PARAMS.arc)
    assert set(path.directions) == {FORWARD} and path.cusp_count == 0
    assert path.length == pytest.approx(n * PARAMS.arc)
    end = path.poses[-1]
    assert math.hypot(end.x - goal.x, end.y - goal.y) <= PARAMS.goal_tolerance


def test_path_is_kinematically_consistent():
    path = hybrid_astar(open_grid(), Pose2D(0, 0, 0), Pose2D(-1.0, 1.0, math.pi), SPEC, PARAMS)
    for a, b, d, delta in zip(path.poses, path.poses[1:], path.directions, path.steering):
        expect = integrate(a, d, delta, path.step_length, SPEC.wheelbase)
        assert (b.x, b.y) == pytest.approx((expect.x, expect.y), abs=1e-9)
        assert abs(math.remainder(b.theta - expect.theta, 2 * math.pi)) < 1e-9


def test_start_at_goal_gives_empty_path():
    path = hybrid_astar(open_grid(), Pose2D(0.5, 0.5, 0.0), Pose2D(0.5, 0.5, 0.0), SPEC, PARAMS)
    assert len(path) == 0 and path.poses == [Pose2D(0.5, 0.5, 0.0)]


def test_enclosed_goal_raises():
    walls = [Wall((1.0, 1.0), (2.0, 1.0), 0.05), Wall((2.0, 1.0), (2.0, 2.0), 0.05),
             Wall((2.0, 2.0), (1.0, 2.0), 0.05), Wall((1.0, 2.0), (1.0, 1.0), 0.05)]
    grid = rasterize_obstacles(walls, open_grid())
    with pytest.raises(NoPath):
        hybrid_astar(grid, Pose2D(-1.0, -1.0, 0.0), Pose2D(1.5, 1.5, 0.0), SPEC, PARAMS)


def test_start_in_collision_raises():
    grid = rasterize_obstacles([Wall((0.0, -1.0), (0.0, 1.0), 0.05)], open_grid())
    with pytest.raises(NoPath, match="start in collision"):
        hybrid_astar(grid, Pose2D(0.0, 0.0, 0.0), Pose2D(2.0, 0.0, 0.0), SPEC, PARAMS)


def test_budget_exhaustion_raises():
    with pytest.raises(NoPath, match="budget"):
        hybrid_astar(open_grid(), Pose2D(0, 0, 0), Pose2D(3.0, 3.0, 0.0), SPEC,
                     PlannerParams(max_expansions=5))


def test_pocket_escape_needs_reversal_and_is_collision_free():
    # three-sided pocket open to -x; the vehicle faces the closed end and the goal lies behind it
    walls = [Wall((-0.6, 0.32), (0.6, 0.32), 0.05), Wall((-0.6, -0.32), (0.6, -0.32), 0.05),
             Wall((0.6, -0.32), (0.6, 0.32), 0.05)]
    # extra padding covers the gap between a disk of half a cell and the cell itself
    grid = rasterize_obstacles(walls, open_grid(), pad=PARAMS.resolution * (math.sqrt(2) - 1) / 2)
    path = hybrid_astar(grid, Pose2D(0.0, 0.0, 0.0), Pose2D(-2.0, 0.0, 0.0), SPEC, PARAMS)
    assert REVERSE in path.directions
    fp = SPEC.footprint
    assert not any(footprint_collides(p, fp, walls) for p in path.poses)


def test_heuristic_admissible_against_planned_costs():
    walls = [Wall((0.8, -1.5), (0.8, 1.0), 0.05)]
    grid = rasterize_obstacles(walls, open_grid())
    goal = Pose2D(2.0, 0.0, 0.0)
    h = Heuristic(grid, (goal.x, goal.y), PARAMS.goal_tolerance)
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(6):
        start = Pose2D(rng.uniform(-2.0, 0.0), rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi))
        try:
            path = hybrid_astar(grid, start, goal, SPEC, PARAMS, heuristic=h)
        except NoPath:
            continue
        assert h(start) <= path_cost(path) + 1e-9
        checked += 1
    assert checked >= 3


# --------------------------------------------------------------------------
# pure pursuit


def test_pursuit_quarter_turn_example():
    L = SPEC.wheelbase
    # target abeam to the left at twice the wheelbase: alpha = pi/2, L_d = 2L
    delta = pursuit_steering(Pose2D(0, 0, 0), (0.0, 2 * L), L)
    assert delta == pytest.approx(math.pi / 4)
    assert pursuit_steering(Pose2D(0, 0, 0), (0.0, -2 * L), L) == pytest.approx(-math.pi / 4)
    assert pursuit_steering(Pose2D(0, 0, 0), (1.0, 0.0), L) == 0.0


def reverse_path():
    start = Pose2D(0.0, 0.0, 0.0)
    poses = [start]
    for k in range(1, 11):
        poses.append(integrate(start, REVERSE, 0.3, 0.05 * k, SPEC.wheelbase))
    return PlannedPath(poses, [REVERSE] * 10, [0.3] * 10, 0.05)


def test_pursuit_reverses_on_reverse_segment():
    a = pure_pursuit(reverse_path(), Pose2D(0.0, 0.0, 0.0), SPEC)
    assert a[0] < 0
    # following the reverse arc needs the same steering sign that produced it
    assert a[1] > 0


def test_tracking_reverse_arc_in_closed_loop():
    path = reverse_path()
    tracker = PurePursuit(path, SPEC, lookahead=0.15, speed=0.3)
    pose = path.poses[0]
    for _ in range(40):
        if tracker.finished:
            break
        try:
            v_hat, d_hat = tracker.step(pose)
        except Exception:
            break
        pose = integrate(pose, v_hat * SPEC.v_max, d_hat * SPEC.delta_max, 0.1, SPEC.wheelbase)
    end = path.poses[-1]
    assert math.hypot(pose.x - end.x, pose.y - end.y) < 0.1


def test_pursuit_rejects_empty_path():
    with pytest.raises(ValueError):
        PurePursuit(PlannedPath([Pose2D(0, 0, 0)]), SPEC)


# --------------------------------------------------------------------------
# follow the gap


def test_ftg_open_field_goes_straight():
    a = ftg_step(np.full(360, D_MAX), D_MAX, 0.0, SPEC)
    assert a[0] > 0 and a[1] == pytest.approx(0.0)


@settings(max_examples=50)
@given(st.lists(st.floats(0.5, D_MAX), min_size=181, max_size=181))
def test_ftg_mirror_symmetry(half):
    # beams k and 360 - k mirror about the heading
    r = np.empty(360)
    r[:181] = half
    r[181:] = np.array(half)[1:180][::-1]
    d_hat, _ = gap_steering(r, D_MAX, 0.0, SPEC)
    mirrored = np.roll(r[::-1], 1)
    assert np.array_equal(mirrored, r)
    # the widest gap of a mirror-symmetric view is centred, or paired with its mirror image
    d_left, _ = gap_steering(r, D_MAX, 0.3, SPEC)
    d_right, _ = gap_steering(r, D_MAX, -0.3, SPEC)
    assert d_left == pytest.approx(-d_right, abs=1e-12)


def test_ftg_half_blocked_turns_away():
    r = np.full(360, D_MAX)
    r[5:91] = 0.8  # left side close
    a = ftg_step(r, D_MAX, 0.0, SPEC)
    assert a[0] > 0 and a[1] < 0
    r = np.full(360, D_MAX)
    r[270:356] = 0.8  # right side close
    assert ftg_step(r, D_MAX, 0.0, SPEC)[1] > 0


def test_ftg_reverses_when_blocked_ahead():
    r = np.full(360, D_MAX)
    r[:20] = 0.3
    r[340:] = 0.3
    a = ftg_step(r, D_MAX, 0.0, SPEC)
    assert a[0] < 0 and abs(a[1]) == 1.0


def test_ftg_step_is_memoryless():
    rng = np.random.default_rng(2)
    for _ in range(20):
        r = rng.uniform(0.2, D_MAX, 360)
        g = rng.uniform(-math.pi, math.pi)
        assert np.array_equal(ftg_step(r, D_MAX, g, SPEC), ftg_step(r.copy(), D_MAX, g, SPEC))


def test_ftg_macro_holds_reverse_for_its_cycles():
    blocked = np.full(360, D_MAX)
    blocked[:20] = 0.3
    blocked[340:] = 0.3
    ctrl = FollowTheGap(SPEC, FTGParams(macro_cycles=4))
    first = ctrl.step(blocked, D_MAX, 0.0)
    open_scan = np.full(360, D_MAX)
    held = [ctrl.step(open_scan, D_MAX, 0.0) for _ in range(3)]
    assert all(np.array_equal(h, first) for h in held)
    assert ctrl.step(open_scan, D_MAX, 0.0)[0] > 0


def test_fov_view_handles_missing_beams():
    r = np.full(360, np.nan)
    r[0] = 2.0
    view, bearings = fov_view(r, D_MAX, 90.0)
    assert len(view) == 181 and view[90] == 2.0
    assert np.all(np.delete(view, 90) == D_MAX)
    assert bearings[0] == pytest.approx(-math.pi / 2) and bearings[-1] == pytest.approx(math.pi / 2)
