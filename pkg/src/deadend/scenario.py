"""Scenario data types and the batch file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from deadend.geometry import Cylinder, Obstacle, Pose2D, Wall
from deadend.kinematics import VehicleSpec

SCHEMA_VERSION = 1
GOAL_RADIUS = 0.2

STYLES = ("corridor", "tight_turn")
VARIANTS = ("walls", "cylinders")
EXIT_MODES = ("forward", "reverse")


@dataclass(frozen=True)
class ControlPhase:
    v: float
    delta: float
    duration: float
    t_start: float = 0.0


@dataclass(frozen=True)
class SeedTrajectory:
    poses: tuple[Pose2D, ...]
    controls: tuple[ControlPhase, ...]
    exit_mode: str
    style: str

    @property
    def start(self) -> Pose2D:
        return self.poses[0]

    @property
    def final(self) -> Pose2D:
        return self.poses[-1]

    @property
    def duration(self) -> float:
        return sum(c.duration for c in self.controls)


@dataclass(frozen=True)
class Goal:
    center: tuple[float, float]
    radius: float = GOAL_RADIUS


@dataclass(frozen=True)
class Scenario:
    id: str
    vehicle: VehicleSpec
    start: Pose2D
    goal: Goal
    obstacles: tuple[Obstacle, ...]
    seed: SeedTrajectory
    variant: str

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [self.start.x, self.goal.center[0]]
        ys = [self.start.y, self.goal.center[1]]
        for ob in self.obstacles:
            if isinstance(ob, Wall):
                xs += [ob.p0[0], ob.p1[0]]
                ys += [ob.p0[1], ob.p1[1]]
            else:
                xs.append(ob.center[0])
                ys.append(ob.center[1])
        return min(xs), min(ys), max(xs), max(ys)

    def translated(self, dx: float, dy: float) -> "Scenario":
        def mv(p):
            return (p[0] + dx, p[1] + dy)

        obs = []
        for ob in self.obstacles:
            if isinstance(ob, Wall):
                obs.append(Wall(mv(ob.p0), mv(ob.p1), ob.thickness))
            else:
                obs.append(Cylinder(mv(ob.center), ob.radius))
        seed = SeedTrajectory(
            tuple(p.translated(dx, dy) for p in self.seed.poses),
            self.seed.controls,
            self.seed.exit_mode,
            self.seed.style,
        )
        return Scenario(
            self.id,
            self.vehicle,
            self.start.translated(dx, dy),
            Goal(mv(self.goal.center), self.goal.radius),
            tuple(obs),
            seed,
            self.variant,
        )


# --------------------------------------------------------------------------
# serialization


def _pose(p: Pose2D) -> list:
    return [p.x, p.y, p.theta]


def _obstacle_to_dict(ob: Obstacle) -> dict:
    if isinstance(ob, Wall):
        return {"type": "wall", "p0": list(ob.p0), "p1": list(ob.p1), "thickness": ob.thickness}
    return {"type": "cylinder", "center": list(ob.center), "radius": ob.radius}


def _obstacle_from_dict(d: dict) -> Obstacle:
    if d["type"] == "wall":
        return Wall(tuple(d["p0"]), tuple(d["p1"]), d["thickness"])
    if d["type"] == "cylinder":
        return Cylinder(tuple(d["center"]), d["radius"])
    raise ValueError(f"unknown obstacle type {d['type']!r}")


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "id": s.id,
        "variant": s.variant,
        "vehicle": s.vehicle.to_dict(),
        "start": _pose(s.start),
        "goal": {"center": list(s.goal.center), "radius": s.goal.radius},
        "obstacles": [_obstacle_to_dict(o) for o in s.obstacles],
        "seed": {
            "style": s.seed.style,
            "exit_mode": s.seed.exit_mode,
            "controls": [[c.v, c.delta, c.duration, c.t_start] for c in s.seed.controls],
            "poses": [_pose(p) for p in s.seed.poses],
        },
    }


def scenario_from_dict(d: dict) -> Scenario:
    seed = d["seed"]
    return Scenario(
        id=d["id"],
        vehicle=VehicleSpec.from_dict(d["vehicle"]),
        start=Pose2D(*d["start"]),
        goal=Goal(tuple(d["goal"]["center"]), d["goal"]["radius"]),
        obstacles=tuple(_obstacle_from_dict(o) for o in d["obstacles"]),
        seed=SeedTrajectory(
            poses=tuple(Pose2D(*p) for p in seed["poses"]),
            controls=tuple(ControlPhase(*c) for c in seed["controls"]),
            exit_mode=seed["exit_mode"],
            style=seed["style"],
        ),
        variant=d["variant"],
    )


def dumps_batch(scenarios: Sequence[Scenario], params: dict | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "params": params or {},
        "scenarios": [scenario_to_dict(s) for s in scenarios],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_batch(text: str) -> tuple[list[Scenario], dict]:
    doc = json.loads(text)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version {version!r}")
    return [scenario_from_dict(d) for d in doc["scenarios"]], doc.get("params", {})


def save_batch(path, scenarios: Sequence[Scenario], params: dict | None = None) -> None:
    Path(path).write_text(dumps_batch(scenarios, params))


def load_batch(path) -> list[Scenario]:
    return loads_batch(Path(path).read_text())[0]


def find(scenarios: Iterable[Scenario], scenario_id: str) -> Scenario:
    for s in scenarios:
        if s.id == scenario_id:
            return s
    raise KeyError(f"no scenario with id {scenario_id!r}")
