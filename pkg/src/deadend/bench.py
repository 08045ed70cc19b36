"""Evaluation suites, summary statistics, CSV tables and SVG drawings."""

from __future__ import annotations

import copy
import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from deadend.geometry import Cylinder, Pose2D, Wall, footprint_polygon
from deadend.kinematics import VehicleSpec
from deadend.mdp import clamp_action
from deadend.planners.controllers import Controller, Percept
from deadend.scenario import Scenario
from deadend.simulator import SimConfig, Simulator, Status

START_JITTER = math.pi / 6
Z95 = 1.96


@dataclass(frozen=True)
class EpisodeRecord:
    scenario_id: str
    controller: str
    rep: int
    success: bool
    steps: int
    collisions: int
    wall_time: float
    status: str


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    ci95: float
    n: int


def describe(values: Sequence[float]) -> Optional[Stat]:
    """Mean, sample standard deviation and 95% half-width; None for no values."""
    x = np.asarray(values, float)
    n = len(x)
    if n == 0:
        return None
    std = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return Stat(float(np.mean(x)), std, Z95 * std / math.sqrt(n), n)


@dataclass(frozen=True)
class MetricsRow:
    controller: str
    episodes: int
    successes: int
    success_rate: Stat
    steps: Optional[Stat]
    collisions: Stat


def aggregate(records: Sequence[EpisodeRecord]) -> list[MetricsRow]:
    """One row per controller, in order of first appearance."""
    if not records:
        raise ValueError("no records to aggregate")
    order = list(dict.fromkeys(r.controller for r in records))
    rows = []
    for name in order:
        rs = [r for r in records if r.controller == name]
        rows.append(MetricsRow(
            controller=name,
            episodes=len(rs),
            successes=sum(r.success for r in rs),
            success_rate=describe([100.0 * r.success for r in rs]),
            steps=describe([r.steps for r in rs if r.success]),
            collisions=describe([r.collisions for r in rs]),
        ))
    return rows


# --------------------------------------------------------------------------
# running episodes


def perturbed_start(scenario: Scenario, base_seed: int, scenario_index: int, rep: int,
                    robot: Optional[VehicleSpec] = None, sim: Optional[Simulator] = None) -> Pose2D:
    """Start pose with a seeded heading offset in [-pi/6, pi/6].

    The offset is halved until the footprint is collision-free (at worst it
    reaches the validated original heading).
    """
    sim = sim or Simulator(scenario, robot)
    rng = np.random.default_rng([int(base_seed) & 0xFFFFFFFF, scenario_index, rep])
    d = float(rng.uniform(-START_JITTER, START_JITTER))
    s = scenario.start
    for _ in range(30):
        pose = Pose2D(s.x, s.y, s.theta + d)
        if not sim.in_collision(pose):
            return pose
        d /= 2
    return s


@dataclass
class Episode:
    record: EpisodeRecord
    poses: list[Pose2D]


def run_episode(controller: Controller, scenario: Scenario, start: Pose2D, rep: int = 0,
                robot: Optional[VehicleSpec] = None, config: Optional[SimConfig] = None) -> Episode:
    sim = Simulator(scenario, robot, config)
    t0 = time.perf_counter()
    state = sim.reset(start)
    poses = [state.pose]
    status = None
    try:
        controller.reset(scenario, sim.robot)
        while state.status is Status.RUNNING:
            scan = sim.lidar(state)
            percept = Percept(sim.observed_pose(state), state.vehicle.v, state.vehicle.omega, scan, tuple(sim.goal_center))
            a = clamp_action(controller.act(percept))
            state, _ = sim.step(state, float(a[0]) * sim.robot.v_max, float(a[1]))
            poses.append(state.pose)
    except Exception:
        # a failing controller costs the episode, not the suite
        status = "error"
    status = status or state.status.value
    rec = EpisodeRecord(scenario.id, controller.name, rep, status == Status.GOAL.value, state.step_count,
                        state.collision_events, time.perf_counter() - t0, status)
    return Episode(rec, poses)


def _job(args) -> EpisodeRecord:
    controller, scenario, start, rep, robot, config = args
    return run_episode(copy.deepcopy(controller), scenario, start, rep, robot, config).record


def run_suite(controllers: Sequence[Controller], scenarios: Sequence[Scenario], reps: int, base_seed: int = 0,
              robot: Optional[VehicleSpec] = None, config: Optional[SimConfig] = None,
              jobs: int = 1) -> list[EpisodeRecord]:
    """Every (controller, scenario, repetition) once; output order is independent of ``jobs``."""
    if reps < 1:
        raise ValueError("need at least one repetition")
    jobs_list = []
    for ctrl in controllers:
        for i, sc in enumerate(scenarios):
            sim = Simulator(sc, robot, config)
            for rep in range(reps):
                start = perturbed_start(sc, base_seed, i, rep, sim=sim)
                jobs_list.append((ctrl, sc, start, rep, robot, config))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_job, jobs_list, chunksize=1))
    return [_job(j) for j in jobs_list]


# --------------------------------------------------------------------------
# tables and CSV


def _fmt(st: Optional[Stat], digits: int = 2) -> str:
    if st is None:
        return "n/a"
    return f"{st.mean:.{digits}f} ± {st.std:.{digits}f} ({st.ci95:.{digits}f})"


def format_table(rows: Sequence[MetricsRow]) -> str:
    header = ("Controller", "Success Rate (%)", "Steps", "Collisions")
    body = [(r.controller, _fmt(r.success_rate), _fmt(r.steps), _fmt(r.collisions)) for r in rows]
    widths = [max(len(x[i]) for x in [header, *body]) for i in range(4)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([line(header), "-+-".join("-" * w for w in widths), *map(line, body)]) + "\n"


RECORD_COLUMNS = tuple(f.name for f in fields(EpisodeRecord))
ROW_COLUMNS = ("controller", "episodes", "successes",
               "success_rate", "success_rate_std", "success_rate_ci95",
               "steps", "steps_std", "steps_ci95", "steps_n",
               "collisions", "collisions_std", "collisions_ci95")


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_records_csv(records: Sequence[EpisodeRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([_cell(v) for v in astuple(r)])


def read_records_csv(path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != RECORD_COLUMNS:
            raise ValueError(f"unexpected record columns {rd.fieldnames}")
        return [EpisodeRecord(r["scenario_id"], r["controller"], int(r["rep"]), r["success"] == "True",
                              int(r["steps"]), int(r["collisions"]), float(r["wall_time"]), r["status"])
                for r in rd]


def write_rows_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_COLUMNS)
        for r in rows:
            st = r.steps
            w.writerow([r.controller, r.episodes, r.successes,
                        *(_cell(v) for v in (r.success_rate.mean, r.success_rate.std, r.success_rate.ci95)),
                        *((_cell(st.mean), _cell(st.std), _cell(st.ci95), st.n) if st else ("", "", "", 0)),
                        *(_cell(v) for v in (r.collisions.mean, r.collisions.std, r.collisions.ci95))])


def read_rows_csv(path) -> list[MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != ROW_COLUMNS:
            raise ValueError(f"unexpected metrics columns {rd.fieldnames}")
        for r in rd:
            n = int(r["episodes"])
            steps = None
            if r["steps"]:
                steps = Stat(float(r["steps"]), float(r["steps_std"]), float(r["steps_ci95"]), int(r["steps_n"]))
            out.append(MetricsRow(
                r["controller"], n, int(r["successes"]),
                Stat(float(r["success_rate"]), float(r["success_rate_std"]), float(r["success_rate_ci95"]), n),
                steps,
                Stat(float(r["collisions"]), float(r["collisions_std"]), float(r["collisions_ci95"]), n),
            ))
    return out


# --------------------------------------------------------------------------
# SVG


def cusp_indices(poses: Sequence[Pose2D]) -> list[int]:
    """Indices where travel switches between forward and reverse."""
    signs = []
    for a, b in zip(poses, poses[1:]):
        d = (b.x - a.x) * math.cos(a.theta) + (b.y - a.y) * math.sin(a.theta)
        signs.append(0 if abs(d) < 1e-9 else (1 if d > 0 else -1))
    out = []
    last = 0
    for i, s in enumerate(signs):
        if s == 0:
            continue
        if last and s != last:
            out.append(i)
        last = s
    return out


def _poly_points(poly: np.ndarray) -> str:
    return " ".join(f"{x:.4f},{y:.4f}" for x, y in poly)


def render_svg(scenario: Scenario, trajectory: Optional[Sequence[Pose2D]] = None, path=None,
               scale: float = 100.0) -> str:
    """Layout drawing: walls, cylinders, start box and heading arrow, goal disk, optional trajectory."""
    x0, y0, x1, y1 = scenario.bounds()
    pad = 0.6
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    w, h = x1 - x0, y1 - y0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale:.0f}" height="{h * scale:.0f}" '
        f'viewBox="{x0:.4f} {-y1:.4f} {w:.4f} {h:.4f}">',
        f'<title>{scenario.id} ({scenario.variant}, {scenario.seed.style}, {scenario.seed.exit_mode} exit)</title>',
        '<rect x="{:.4f}" y="{:.4f}" width="{:.4f}" height="{:.4f}" fill="white"/>'.format(x0, -y1, w, h),
        '<g transform="scale(1,-1)">',
    ]
    for ob in scenario.obstacles:
        if isinstance(ob, Wall):
            parts.append(f'<line class="wall" x1="{ob.p0[0]:.4f}" y1="{ob.p0[1]:.4f}" x2="{ob.p1[0]:.4f}" '
                         f'y2="{ob.p1[1]:.4f}" stroke="black" stroke-width="{ob.thickness:.4f}" '
                         f'stroke-linecap="round"/>')
        elif isinstance(ob, Cylinder):
            parts.append(f'<circle class="cylinder" cx="{ob.center[0]:.4f}" cy="{ob.center[1]:.4f}" '
                         f'r="{ob.radius:.4f}" fill="dimgray"/>')
    gx, gy = scenario.goal.center
    parts.append(f'<circle class="goal" cx="{gx:.4f}" cy="{gy:.4f}" r="{scenario.goal.radius:.4f}" '
                 f'fill="gold" fill-opacity="0.6" stroke="orange" stroke-width="0.01"/>')
    fp = scenario.vehicle.footprint
    s = scenario.start
    parts.append(f'<polygon class="start" points="{_poly_points(footprint_polygon(s, fp))}" fill="none" '
                 f'stroke="green" stroke-width="0.02"/>')
    tip = (s.x + 0.35 * math.cos(s.theta), s.y + 0.35 * math.sin(s.theta))
    parts.append(f'<line class="heading" x1="{s.x:.4f}" y1="{s.y:.4f}" x2="{tip[0]:.4f}" y2="{tip[1]:.4f}" '
                 f'stroke="green" stroke-width="0.03"/>')
    if trajectory:
        pts = " ".join(f"{p.x:.4f},{p.y:.4f}" for p in trajectory)
        parts.append(f'<polyline class="trajectory" points="{pts}" fill="none" stroke="royalblue" '
                     f'stroke-width="0.015"/>')
        for i in cusp_indices(trajectory):
            p = trajectory[i]
            parts.append(f'<circle class="cusp" cx="{p.x:.4f}" cy="{p.y:.4f}" r="0.03" fill="purple"/>')
        parts.append(f'<polygon class="final" points="{_poly_points(footprint_polygon(trajectory[-1], fp))}" '
                     f'fill="none" stroke="red" stroke-width="0.02"/>')
    parts.append("</g>")
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
