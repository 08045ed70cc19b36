"""Episode loop: interaction, periodic update rounds, distance budget and vehicle-size curriculum."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from deadend.kinematics import VehicleSpec
from deadend.mdp import EscapeEnv
from deadend.sac.agent import SACAgent, SACConfig
from deadend.sac.buffer import ReplayBuffer
from deadend.scenario import Scenario
from deadend.simulator import SimConfig, Status

# (length, width, wheelbase) at the first and last curriculum stage
LARGEST_VEHICLE = (0.47, 0.46, 0.363)
SMALLEST_VEHICLE = (0.37, 0.36, 0.263)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 300
    max_steps: int = 500
    update_every: int = 2
    updates_per_round: int = 500
    batch_size: int = 40
    pretrain_iters: int = 100
    budget_start: float = 2.0
    budget_increment: float = 0.5
    budget_cap: float = 8.0
    curriculum: bool = True
    curriculum_stages: int = 5
    epoch_episodes: int = 70
    promote_rate: float = 0.6
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def curriculum_vehicle(base: VehicleSpec, stage: int, n_stages: int) -> VehicleSpec:
    """Vehicle dimensions at a curriculum stage (0 = largest, n_stages - 1 = smallest)."""
    if n_stages < 2:
        frac = 1.0
    else:
        frac = min(max(stage, 0), n_stages - 1) / (n_stages - 1)
    length, width, wheelbase = (a + frac * (b - a) for a, b in zip(LARGEST_VEHICLE, SMALLEST_VEHICLE))
    return replace(base, length=length, width=width, wheelbase=wheelbase)


def reference_path(scenario: Scenario) -> np.ndarray:
    """Seed positions followed by the straight exit to the goal, shape (N, 2)."""
    pts = np.array([[p.x, p.y] for p in scenario.seed.poses])
    return np.vstack([pts, np.asarray(scenario.goal.center, float)[None]])


def budget_goal(scenario: Scenario, budget: float) -> np.ndarray:
    """Goal actually used for an episode under a travel-distance budget.

    When the reference path is longer than ``budget`` the goal moves to the
    point at that arc length, which lies in free space by construction.
    """
    path = reference_path(scenario)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if budget >= cum[-1]:
        return np.asarray(scenario.goal.center, float)
    return np.array([np.interp(budget, cum, path[:, 0]), np.interp(budget, cum, path[:, 1])])


@dataclass
class EpisodeLog:
    episode: int
    scenario_id: str
    reward: float
    goal: bool
    collisions: int
    steps: int
    status: str
    budget: float
    stage: int
    updates: int


LOG_COLUMNS = tuple(EpisodeLog.__dataclass_fields__)


@dataclass
class TrainState:
    episode: int = 0
    budget: float = 2.0
    stage: int = 0
    # goal flags since the last curriculum promotion
    window: list = field(default_factory=list)
    update_rounds: int = 0
    pretrained: bool = False
    pretrain_updates: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(**d)


@dataclass
class TrainResult:
    agent: SACAgent
    buffer: ReplayBuffer
    state: TrainState
    logs: list[EpisodeLog]


def run_updates(agent: SACAgent, buffer: ReplayBuffer, n: int, batch_size: int) -> int:
    """Run ``n`` update iterations; returns how many ran (0 if the buffer is too small)."""
    if buffer.size < batch_size:
        return 0
    for _ in range(n):
        agent.update(buffer.sample(batch_size, agent.rng))
    return n


def run_episode(env: EscapeEnv, policy: Callable[[np.ndarray], np.ndarray], buffer: Optional[ReplayBuffer] = None):
    """Roll one episode to termination; returns (total reward, final state)."""
    obs = env.reset()
    total = 0.0
    while not env.done:
        a = policy(obs)
        obs2, r, terminal, _ = env.step(a)
        if buffer is not None:
            buffer.add(obs, a, r, obs2, terminal)
        total += r
        obs = obs2
    return total, env.state


def train(
    scenarios: Sequence[Scenario],
    config: TrainConfig = TrainConfig(),
    agent: Optional[SACAgent] = None,
    buffer: Optional[ReplayBuffer] = None,
    state: Optional[TrainState] = None,
    pretrain_buffer: Optional[ReplayBuffer] = None,
    on_epoch: Optional[Callable[[TrainResult], None]] = None,
    on_episode: Optional[Callable[[EpisodeLog], None]] = None,
) -> TrainResult:
    """Train (or resume training) until ``config.episodes`` episodes have run in total."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    agent = agent or SACAgent(SACConfig(batch_size=config.batch_size), seed=config.seed)
    buffer = buffer if buffer is not None else ReplayBuffer(agent.config.obs_dim, agent.config.act_dim)
    state = state or TrainState(budget=config.budget_start)
    result = TrainResult(agent, buffer, state, [])
    sim_config = SimConfig(max_steps=config.max_steps)

    if pretrain_buffer is not None and not state.pretrained:
        for t in pretrain_buffer.transitions():
            buffer.add(*t)
        state.pretrain_updates = run_updates(agent, buffer, config.pretrain_iters, config.batch_size)
        state.pretrained = True

    while state.episode < config.episodes:
        sc = scenarios[state.episode % len(scenarios)]
        robot = curriculum_vehicle(sc.vehicle, state.stage, config.curriculum_stages) if config.curriculum else None
        budget = state.budget
        env = EscapeEnv(sc, robot, sim_config, budget_goal(sc, budget))
        if env.sim.in_collision(sc.start):
            # the start pose does not fit this curriculum vehicle
            total, final = 0.0, None
        else:
            total, final = run_episode(env, agent.act, buffer)
        reached = final is not None and final.status is Status.GOAL
        if reached:
            state.budget = min(config.budget_cap, state.budget + config.budget_increment)
        state.window = (state.window + [reached])[-config.epoch_episodes:]
        state.episode += 1

        if state.episode % config.update_every == 0:
            if run_updates(agent, buffer, config.updates_per_round, config.batch_size):
                state.update_rounds += 1

        log = EpisodeLog(state.episode, sc.id, total, reached,
                         final.collision_events if final else 0, final.step_count if final else 0,
                         final.status.value if final else "invalid-start", budget, state.stage,
                         agent.n_updates)
        result.logs.append(log)
        if on_episode:
            on_episode(log)

        if (config.curriculum and state.stage < config.curriculum_stages - 1
                and len(state.window) == config.epoch_episodes
                and np.mean(state.window) >= config.promote_rate):
            state.stage += 1
            state.window = []

        if on_epoch and state.episode % config.epoch_episodes == 0:
            on_epoch(result)
    return result


def demo_transitions(scenario: Scenario, buffer: ReplayBuffer, config: SimConfig = SimConfig()) -> Status:
    """Append the transitions of the scenario's seed replay (plus exit) to ``buffer``."""
    from deadend.generator import exit_extension

    spec = scenario.vehicle
    controls = list(scenario.seed.controls) + [exit_extension(scenario)]
    total_steps = sum(int(round(c.duration / config.dt)) for c in controls)
    env = EscapeEnv(scenario, config=replace(config, max_steps=max(config.max_steps, total_steps + 1)))
    obs = env.reset()
    for c in controls:
        a = np.array([c.v / spec.v_max, c.delta / spec.delta_max])
        for _ in range(int(round(c.duration / config.dt))):
            if env.done:
                return env.state.status
            obs2, r, terminal, _ = env.step(a)
            buffer.add(obs, a, r, obs2, terminal)
            obs = obs2
    return env.state.status


def write_train_log(logs: Sequence[EpisodeLog], path, append: bool = False) -> None:
    exists = append and _nonempty(path)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(LOG_COLUMNS)
        for log in logs:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(log).values()])


def read_train_log(path) -> list[EpisodeLog]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        out = []
        for row in rd:
            out.append(EpisodeLog(int(row["episode"]), row["scenario_id"], float(row["reward"]),
                                  row["goal"] == "True", int(row["collisions"]), int(row["steps"]),
                                  row["status"], float(row["budget"]), int(row["stage"]), int(row["updates"])))
        return out


def _nonempty(path) -> bool:
    try:
        with open(path) as fh:
            return bool(fh.read(1))
    except FileNotFoundError:
        return False
