import math

import numpy as np
import pytest

from deadend.geometry import Cylinder, Pose2D, Wall
from deadend.kinematics import VehicleSpec
from deadend.scenario import ControlPhase, Goal, Scenario, SeedTrajectory
from deadend.simulator import (LogRow, SimConfig, Simulator, Status, TerminatedEpisode, read_log, replay,
                               write_log)
from oracles import rk4_bicycle

SPEC = VehicleSpec()


def make_scenario(obstacles=(), start=Pose2D(0, 0, 0), goal=(20.0, 0.0)):
    seed = SeedTrajectory((start,), (), "forward", "corridor")
    return Scenario("t", SPEC, start, Goal(goal), tuple(obstacles), seed, "walls")


def test_reset_state():
    sim = Simulator(make_scenario())
    a, b = sim.reset(), sim.reset()
    assert a == b
    assert a.step_count == 0 and a.collision_events == 0 and a.status is Status.RUNNING
    assert a.vehicle.v == 0 and a.vehicle.omega == 0
    with pytest.raises(ValueError):
        Simulator(make_scenario([Cylinder((0.0, 0.0), 0.1)])).reset()


def test_free_step_matches_oracle():
    sim = Simulator(make_scenario())
    s, ev = sim.step(sim.reset(), 1.0, 0.0)
    assert (s.pose.x, s.pose.y) == pytest.approx((0.1, 0.0))
    assert not (ev.goal or ev.collision or ev.crash or ev.timeout)
    s, _ = sim.step(s, 0.6, -0.7)
    x, y, th = rk4_bicycle((0.1, 0.0, 0.0), 0.6, -0.7 * 0.645, 0.1, 0.21)
    assert math.hypot(s.pose.x - x, s.pose.y - y) < 1e-6


def test_goal_within_radius():
    sim = Simulator(make_scenario(goal=(0.15, 0.0)))
    s, ev = sim.step(sim.reset(), 0.1, 0.0)
    assert ev.goal and s.status is Status.GOAL
    with pytest.raises(TerminatedEpisode):
        sim.step(s, 0.1, 0.0)


def test_head_on_fast_contact_crashes():
    # front bumper at x = 0.185; wall face at x = 0.225
    sim = Simulator(make_scenario([Wall((0.25, -1.0), (0.25, 1.0), 0.05)]))
    s, ev = sim.step(sim.reset(), 1.0, 0.0)
    assert ev.crash and s.status is Status.CRASH


def test_slow_contact_is_counted_and_restored():
    sim = Simulator(make_scenario([Wall((0.25, -1.0), (0.25, 1.0), 0.05)]))
    s0 = sim.reset()
    s1, ev = sim.step(s0, 0.45, 0.0)
    assert ev.collision and not ev.crash
    assert s1.status is Status.RUNNING and s1.collision_events == 1
    assert s1.pose == s0.pose
    s2, _ = sim.step(s1, 0.45, 0.0)
    assert s2.collision_events == 2
    # backing away is free
    s3, ev = sim.step(s2, -0.45, 0.0)
    assert not ev.collision and s3.collision_events == 2


def test_no_tunnelling_through_thin_wall():
    # front bumper starts at x = 0.185, so wall faces from 0.19 to 0.44 are reached in 3 cycles
    for x in np.linspace(0.215, 0.465, 26):
        sim = Simulator(make_scenario([Wall((x, -1.0), (x, 1.0), 0.05)]))
        s = sim.reset()
        for _ in range(3):
            if s.status is not Status.RUNNING:
                break
            s, _ = sim.step(s, 1.0, 0.0)
        assert s.status is Status.CRASH
        assert s.pose.x + 0.185 <= x - 0.025 + 1e-9 + 0.02


def test_timeout_at_horizon():
    sim = Simulator(make_scenario(), config=SimConfig(max_steps=5))
    s = sim.reset()
    for k in range(5):
        s, ev = sim.step(s, 0.0, 0.0)
    assert s.status is Status.TIMEOUT and ev.timeout and s.step_count == 5


def test_lidar_cases():
    sim = Simulator(make_scenario())
    scan = sim.lidar(sim.reset())
    assert len(scan.ranges) == 360 and np.all(scan.ranges == 10.0)

    sim = Simulator(make_scenario([Wall((2.025, -3.0), (2.025, 3.0), 0.05)]))
    scan = sim.lidar(sim.reset())
    assert scan.ranges[0] == pytest.approx(2.0, abs=1e-9)
    assert scan.ranges[180] == 10.0
    # beam at 30 degrees meets the same wall face at 2 / cos(30 deg)
    assert scan.ranges[30] == pytest.approx(2.0 / math.cos(math.radians(30)), abs=1e-9)

    ring = [Cylinder((3 * math.cos(a), 3 * math.sin(a)), 0.05) for a in np.linspace(0, 2 * math.pi, 400, endpoint=False)]
    sim = Simulator(make_scenario(ring))
    r = sim.lidar(sim.reset()).ranges
    assert r.max() - r.min() < 0.01


def test_lidar_rotates_with_vehicle():
    sim = Simulator(make_scenario([Wall((2.025, -3.0), (2.025, 3.0), 0.05)], start=Pose2D(0, 0, math.pi / 2)))
    scan = sim.lidar(sim.reset())
    # the wall lies to the vehicle's right, bearing 270 degrees
    assert scan.ranges[270] == pytest.approx(2.0, abs=1e-9)


def test_determinism():
    obs = [Wall((1.0, -1.0), (1.5, 1.0), 0.05), Cylinder((-0.8, 0.3), 0.1)]
    rng = np.random.default_rng(3)
    actions = [(rng.uniform(-0.4, 0.4), rng.uniform(-1, 1)) for _ in range(60)]

    def run():
        sim = Simulator(make_scenario(obs))
        s, out = sim.reset(), []
        for v, d in actions:
            if s.status is not Status.RUNNING:
                break
            s, _ = sim.step(s, v, d)
            out.append((s.pose.x, s.pose.y, s.pose.theta, s.collision_events))
        return out

    a, b = run(), run()
    assert a == b
    counts = [c for *_, c in a]
    assert all(x <= y for x, y in zip(counts, counts[1:]))


def test_replay_cases():
    sc = make_scenario(goal=(1.0, 0.0))
    res = replay(sc, [])
    assert res.poses == [sc.start] and res.status is Status.RUNNING
    res = replay(sc, [ControlPhase(1.0, 0.0, 0.25)])
    # 0.25 s splits into two full cycles and a 0.05 s remainder
    assert res.steps == 3 and res.poses[-1].x == pytest.approx(0.25)
    res = replay(sc, [ControlPhase(1.0, 0.0, 2.0)])
    assert res.status is Status.GOAL and res.collisions == 0
    res = replay(make_scenario(), [ControlPhase(0.0, 0.0, 60.0)])
    assert res.status is Status.TIMEOUT and res.steps == 500


def test_odometry_noise_hook():
    exact = Simulator(make_scenario())
    s = exact.reset()
    assert exact.observed_pose(s) == s.pose
    noisy = Simulator(make_scenario(), config=SimConfig(odometry_noise=0.01, noise_seed=4))
    poses = [noisy.observed_pose(s) for _ in range(2000)]
    xs = np.array([p.x for p in poses])
    assert abs(xs.mean()) < 5 * 0.01 / math.sqrt(2000)
    assert xs.std() == pytest.approx(0.01, rel=0.1)


def test_log_round_trip(tmp_path):
    rows = [LogRow(0.1 * k, math.pi * k, -k / 3, 0.1, 0.5, -0.25, "collision" if k == 2 else "") for k in range(5)]
    write_log(rows, tmp_path / "a.csv")
    assert read_log(tmp_path / "a.csv") == rows
    write_log(read_log(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
