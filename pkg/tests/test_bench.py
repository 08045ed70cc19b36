import math
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deadend.bench import (EpisodeRecord, Stat, aggregate, cusp_indices, describe, format_table,
                           perturbed_start, read_records_csv, read_rows_csv, render_svg, run_suite,
                           write_records_csv, write_rows_csv)
from deadend.geometry import Cylinder, Pose2D, Wall
from deadend.kinematics import VehicleSpec
from deadend.planners import Controller, NullController
from deadend.scenario import ControlPhase, Goal, Scenario, SeedTrajectory, dumps_batch
from oracles import sample_std

SPEC = VehicleSpec()


def rec(sid="s0", ctrl="a", rep=0, success=True, steps=10, collisions=0, status=None):
    return EpisodeRecord(sid, ctrl, rep, success, steps, collisions, 0.5,
                         status or ("goal" if success else "timeout"))


def corridor(goal=(1.0, 0.0), obstacles=()):
    seed = SeedTrajectory((Pose2D(0, 0, 0), Pose2D(1.0, 0, 0)), (ControlPhase(1, 0, 1.0),), "forward", "corridor")
    return Scenario("c", SPEC, Pose2D(0, 0, 0), Goal(goal), tuple(obstacles), seed, "walls")


# --------------------------------------------------------------------------
# statistics


def test_describe_two_values():
    s = describe([10, 20])
    assert s.mean == 15.0
    assert s.std == pytest.approx(math.sqrt(50), rel=1e-15)
    assert s.ci95 == pytest.approx(1.96 * math.sqrt(50) / math.sqrt(2), rel=1e-15)
    assert describe([]) is None
    assert describe([7.0]) == Stat(7.0, 0.0, 0.0, 1)


@given(st.lists(st.integers(0, 500), min_size=2, max_size=40))
def test_describe_matches_longhand(values):
    s = describe(values)
    assert s.mean == pytest.approx(sum(values) / len(values), rel=1e-12)
    assert s.std == pytest.approx(sample_std(values), rel=1e-9, abs=1e-9)
    assert s.ci95 == pytest.approx(1.96 * sample_std(values) / math.sqrt(len(values)), rel=1e-9, abs=1e-9)


def test_success_rate_formula_on_fixture():
    records = [rec(rep=i, success=i < 647) for i in range(900)]
    row = aggregate(records)[0]
    assert row.successes == 647 and row.episodes == 900
    assert row.success_rate.mean == pytest.approx(100 * 647 / 900)
    assert round(row.success_rate.mean, 1) == 71.9


def test_all_successes_have_zero_rate_ci():
    row = aggregate([rec(rep=i) for i in range(5)])[0]
    assert row.success_rate.mean == 100.0 and row.success_rate.ci95 == 0.0


def test_steps_only_over_successes_and_absent_without_any():
    rows = aggregate([rec(steps=10), rec(steps=20, rep=1), rec(success=False, steps=500, rep=2, collisions=3),
                      rec(ctrl="b", success=False, steps=500)])
    a, b = rows
    assert a.controller == "a" and a.steps.mean == 15.0 and a.steps.n == 2
    assert a.steps.std == pytest.approx(7.0710678, abs=1e-7)
    assert a.collisions.mean == 1.0 and a.collisions.n == 3
    assert b.steps is None and b.success_rate.mean == 0.0
    assert "n/a" in format_table(rows)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.lists(st.booleans(), min_size=1, max_size=30))
def test_success_counts_add(a, b):
    A = [rec(rep=i, success=s) for i, s in enumerate(a)]
    B = [rec(rep=100 + i, success=s) for i, s in enumerate(b)]
    assert aggregate(A + B)[0].successes == aggregate(A)[0].successes + aggregate(B)[0].successes


def test_ci_halves_when_samples_quadruple():
    rng = np.random.default_rng(0)
    small = np.mean([describe(rng.normal(0, 2, 25)).ci95 for _ in range(400)])
    large = np.mean([describe(rng.normal(0, 2, 100)).ci95 for _ in range(400)])
    assert large / small == pytest.approx(0.5, abs=0.03)


# --------------------------------------------------------------------------
# CSV


def test_records_csv_round_trip(tmp_path):
    records = [rec(sid=f"s{i}", rep=i, success=i % 2 == 0, steps=3 * i, collisions=i // 2) for i in range(6)]
    records.append(EpisodeRecord("x,y", "sac:ckpt", 0, False, 1, 0, 1 / 3, "error"))
    write_records_csv(records, tmp_path / "a.csv")
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 8
    back = read_records_csv(tmp_path / "a.csv")
    assert back == records
    write_records_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_empty_records_csv_is_header_only(tmp_path):
    write_records_csv([], tmp_path / "e.csv")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 1
    assert read_records_csv(tmp_path / "e.csv") == []


def test_rows_csv_round_trip(tmp_path):
    rows = aggregate([rec(steps=11), rec(rep=1, success=False, collisions=2), rec(ctrl="b", success=False)])
    write_rows_csv(rows, tmp_path / "m.csv")
    back = read_rows_csv(tmp_path / "m.csv")
    assert back == rows
    write_rows_csv(back, tmp_path / "m2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()


def test_csv_rejects_wrong_header(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_records_csv(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        read_rows_csv(tmp_path / "bad.csv")


# --------------------------------------------------------------------------
# running suites


def test_perturbed_start_is_seeded_and_bounded():
    sc = corridor()
    a = [perturbed_start(sc, 3, 0, r) for r in range(50)]
    assert a == [perturbed_start(sc, 3, 0, r) for r in range(50)]
    offsets = [p.theta - sc.start.theta for p in a]
    assert all(abs(d) <= math.pi / 6 for d in offsets)
    assert len(set(offsets)) == 50
    assert perturbed_start(sc, 4, 0, 0) != a[0]
    assert all((p.x, p.y) == (0.0, 0.0) for p in a)


def test_perturbed_start_shrinks_to_stay_free():
    # walls hugging the vehicle sides leave no room to rotate
    tight = corridor(obstacles=[Wall((-1.0, 0.215), (1.0, 0.215), 0.05), Wall((-1.0, -0.215), (1.0, -0.215), 0.05)])
    from deadend.simulator import Simulator
    sim = Simulator(tight)
    for r in range(10):
        assert not sim.in_collision(perturbed_start(tight, 0, 0, r))


class ForwardController(Controller):
    name = "forward"

    def act(self, percept):
        return np.array([1.0, 0.0])


class ExplodingController(Controller):
    name = "boom"

    def act(self, percept):
        raise RuntimeError("controller bug")


def test_run_suite_cardinality_and_determinism():
    scs = [corridor(), corridor(goal=(1.5, 0.0))]
    a = run_suite([ForwardController()], scs, 3, base_seed=1)
    assert len(a) == 6
    assert [(r.rep) for r in a] == [0, 1, 2] * 2
    strip = lambda rs: [r.__dict__ | {"wall_time": 0} for r in rs]
    assert strip(a) == strip(run_suite([ForwardController()], scs, 3, base_seed=1))
    with pytest.raises(ValueError):
        run_suite([ForwardController()], scs, 0)


def test_null_controller_times_out_everywhere():
    records = run_suite([NullController()], [corridor()], 2)
    assert all(r.status == "timeout" and not r.success and r.steps == 500 for r in records)
    row = aggregate(records)[0]
    assert row.success_rate.mean == 0.0 and row.steps is None


def test_controller_error_is_a_failed_episode():
    records = run_suite([ExplodingController(), ForwardController()], [corridor()], 1)
    assert records[0].status == "error" and not records[0].success
    assert records[1].success


def test_suite_leaves_scenarios_untouched():
    scs = [corridor(obstacles=[Cylinder((2.0, 1.0), 0.1)])]
    before = dumps_batch(scs)
    run_suite([ForwardController(), NullController()], scs, 2)
    assert dumps_batch(scs) == before


def test_parallel_suite_matches_serial():
    scs = [corridor(), corridor(goal=(1.5, 0.0))]
    strip = lambda rs: [r.__dict__ | {"wall_time": 0} for r in rs]
    assert strip(run_suite([ForwardController()], scs, 2, jobs=2)) == strip(run_suite([ForwardController()], scs, 2))


# --------------------------------------------------------------------------
# drawings


def test_cusps_found_at_gear_changes():
    poses = [Pose2D(0.1 * k, 0, 0) for k in range(4)] + [Pose2D(0.2, 0, 0), Pose2D(0.1, 0, 0), Pose2D(0.2, 0, 0)]
    assert cusp_indices(poses) == [3, 5]
    assert cusp_indices([Pose2D(0, 0, 0)]) == []


def test_svg_elements():
    obs = [Wall((0, 1), (2, 1), 0.05), Wall((2, 1), (2, -1), 0.05), Cylinder((1, -1), 0.1), Cylinder((0.5, -1), 0.1)]
    sc = corridor(obstacles=obs)
    svg = render_svg(sc, [Pose2D(0, 0, 0), Pose2D(0.5, 0, 0), Pose2D(1.0, 0, 0)])
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count('class="wall"') == 2
    assert svg.count('class="cylinder"') == 2
    assert svg.count('class="goal"') == 1 and svg.count('class="start"') == 1
    m = re.search(r'class="trajectory" points="([^"]+)"', svg)
    assert m is not None
    last = [float(v) for v in m.group(1).split()[-1].split(",")]
    assert math.hypot(last[0] - 1.0, last[1]) <= sc.goal.radius
