"""Command-line entry point: generate, replay, train, evaluate, render and build demo buffers.

Every command takes ``--seed`` and derives its own named random stream from it,
reads optional defaults from a JSON config file (``--config``), and writes the
effective configuration next to its outputs. Existing outputs are only replaced
with ``--force``.

Exit codes: 0 success, 1 validation or evaluation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from deadend import __version__
from deadend.bench import (aggregate, format_table, render_svg, run_suite, write_records_csv,
                           write_rows_csv)
from deadend.generator import (GenerationError, GenParams, ManeuverStyle, exit_extension, generate_batch,
                               validate_scenario)
from deadend.planners import FTGController, HybridAStarController, NullController, PolicyController
from deadend.sac.agent import SACAgent, SACConfig, load_checkpoint, save_checkpoint
from deadend.sac.buffer import ReplayBuffer, load_buffer, save_buffer
from deadend.sac.train import TrainConfig, TrainState, demo_transitions, train, write_train_log
from deadend.scenario import find, load_batch, save_batch
from deadend.simulator import replay, write_log

CONFIG_SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or inputs; reported with exit code 2."""


def substream_seed(seed: int, name: str) -> int:
    """Independent 32-bit seed for the named pipeline stage."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# config handling


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise UsageError(f"config {path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def effective(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """defaults, then the config-file section, then explicit command-line flags."""
    out = dict(defaults)
    for k, v in section.items():
        if k not in defaults:
            raise UsageError(f"unknown config key {k!r}")
        out[k] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def prepare_output(path: Path, force: bool, is_dir: bool = True) -> None:
    if path.exists():
        nonempty = any(path.iterdir()) if path.is_dir() else True
        if nonempty and not force:
            raise UsageError(f"{path} exists; pass --force to overwrite")
    if is_dir:
        path.mkdir(parents=True, exist_ok=True)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)


def echo_config(out_dir: Path, command: str, seed: int, values: dict) -> None:
    doc = {"schema_version": CONFIG_SCHEMA_VERSION, "version": __version__, "command": command,
           "seed": seed, command: values}
    (out_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_scenarios(path: str):
    try:
        return load_batch(path)
    except (OSError, ValueError, KeyError) as err:
        raise UsageError(f"cannot read scenario batch {path}: {err}") from err


# --------------------------------------------------------------------------
# commands


GEN_DEFAULTS = {"count": 4, "variant": "walls", "style": "mixed", "n_phases": 50,
                "reverse_probability": 0.5, "out": "scenarios"}


def cmd_gen(args, cfg: dict) -> int:
    opts = effective(args, cfg.get("gen", {}), GEN_DEFAULTS)
    out = Path(opts["out"])
    prepare_output(out, args.force)
    style = ManeuverStyle(None if opts["style"] == "mixed" else opts["style"])
    params = GenParams(style=style, variant=opts["variant"], n_phases=opts["n_phases"],
                       reverse_probability=opts["reverse_probability"])
    seed = substream_seed(args.seed, "gen")
    try:
        scenarios = generate_batch(opts["count"], params, seed, jobs=args.jobs, validate=False)
    except (GenerationError, ValueError) as err:
        print(f"generation failed: {err}", file=sys.stderr)
        return EXIT_FAIL
    bad = [s.id for s in scenarios if not validate_scenario(s).feasible]
    if bad:
        print("refusing to write batch; infeasible scenarios: " + ", ".join(bad), file=sys.stderr)
        return EXIT_FAIL
    save_batch(out / "batch.json", scenarios, params.to_dict())
    svg_dir = out / "svg"
    svg_dir.mkdir(exist_ok=True)
    for s in scenarios:
        (svg_dir / f"{s.id}.svg").write_text(render_svg(s))
    echo_config(out, "gen", args.seed, opts)
    print(f"wrote {len(scenarios)} scenarios to {out / 'batch.json'}")
    return EXIT_OK


def cmd_replay(args, cfg: dict) -> int:
    scenarios = read_scenarios(args.scenarios)
    try:
        sc = find(scenarios, args.id)
    except KeyError as err:
        raise UsageError(str(err)) from err
    report = validate_scenario(sc)
    print(f"scenario {sc.id}: collisions: {report.collision_count}, "
          f"goal: {'reached' if report.reached_goal else 'not reached'}, "
          f"status: {report.status}, steps: {report.steps}")
    if args.svg or args.log:
        res = replay(sc, list(sc.seed.controls) + [exit_extension(sc)], max_steps=max(report.steps, 1))
        if args.svg:
            prepare_output(Path(args.svg), args.force, is_dir=False)
            Path(args.svg).write_text(render_svg(sc, res.poses))
        if args.log:
            prepare_output(Path(args.log), args.force, is_dir=False)
            write_log(res.log, args.log)
    return EXIT_OK if report.feasible else EXIT_FAIL


TRAIN_DEFAULTS = {key: val for key, val in TrainConfig().to_dict().items() if key != "seed"}
TRAIN_DEFAULTS.update({"out": "run", "pretrain_buffer": None})


def cmd_train(args, cfg: dict) -> int:
    opts = effective(args, cfg.get("train", {}), TRAIN_DEFAULTS)
    if args.no_curriculum:
        opts["curriculum"] = False
    scenarios = read_scenarios(args.scenarios)
    out = Path(opts["out"])
    ckpt_path, buf_path, log_path = out / "checkpoint.json", out / "buffer.jsonl", out / "train_log.csv"
    config = TrainConfig(**{k: opts[k] for k in TrainConfig().to_dict() if k != "seed"},
                         seed=substream_seed(args.seed, "train"))

    agent: Optional[SACAgent] = None
    buffer: Optional[ReplayBuffer] = None
    state: Optional[TrainState] = None
    if args.resume:
        if not ckpt_path.exists():
            raise UsageError(f"nothing to resume in {out}")
        try:
            agent, extra = load_checkpoint(ckpt_path)
            state = TrainState.from_dict(extra["state"])
            buffer = load_buffer(buf_path)
        except (OSError, ValueError, KeyError, TypeError) as err:
            print(f"corrupt checkpoint or buffer in {out}: {err}", file=sys.stderr)
            return EXIT_FAIL
    else:
        prepare_output(out, args.force)
        if log_path.exists():
            log_path.unlink()
        agent = SACAgent(SACConfig(batch_size=config.batch_size), seed=config.seed)

    demos = None
    if opts["pretrain_buffer"]:
        try:
            demos = load_buffer(opts["pretrain_buffer"])
        except (OSError, ValueError) as err:
            print(f"corrupt demo buffer {opts['pretrain_buffer']}: {err}", file=sys.stderr)
            return EXIT_FAIL

    pending = []

    def on_episode(log) -> None:
        pending.append(log)
        print(f"episode {log.episode}: {log.status} reward {log.reward:.1f} steps {log.steps} "
              f"stage {log.stage} budget {log.budget:.1f}", flush=True)

    def on_epoch(result) -> None:
        checkpoint(result)

    def checkpoint(result) -> None:
        save_checkpoint(ckpt_path, result.agent, {"state": result.state.to_dict(), "config": config.to_dict()})
        save_buffer(result.buffer, buf_path)
        write_train_log(pending, log_path, append=True)
        pending.clear()

    result = train(scenarios, config, agent, buffer, state, demos, on_epoch, on_episode)
    checkpoint(result)
    echo_config(out, "train", args.seed, {**opts, "resume": bool(args.resume)})
    print(f"pretrain updates: {result.state.pretrain_updates}")
    print(f"update rounds: {result.state.update_rounds}")
    return EXIT_OK


EVAL_DEFAULTS = {"controllers": "ftg,hybrid-astar", "maps": None, "reps": 5, "out": "eval"}


def make_controller(spec: str):
    if spec == "ftg":
        return FTGController()
    if spec == "hybrid-astar":
        return HybridAStarController()
    if spec == "null":
        return NullController()
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"unknown controller {spec!r} (not ftg, hybrid-astar, null or a checkpoint file)")
    try:
        agent, _ = load_checkpoint(path)
    except (ValueError, KeyError, TypeError) as err:
        raise UsageError(f"corrupt checkpoint {spec}: {err}") from err
    ctrl = PolicyController(agent)
    ctrl.name = f"sac:{path.stem}"
    return ctrl


def cmd_eval(args, cfg: dict) -> int:
    opts = effective(args, cfg.get("eval", {}), EVAL_DEFAULTS)
    scenarios = read_scenarios(args.scenarios)
    if opts["maps"] is not None:
        if opts["maps"] > len(scenarios):
            raise UsageError(f"--maps {opts['maps']} exceeds the {len(scenarios)} scenarios in the batch")
        scenarios = scenarios[:opts["maps"]]
    controllers = [make_controller(c.strip()) for c in opts["controllers"].split(",") if c.strip()]
    if not controllers:
        raise UsageError("no controllers given")
    out = Path(opts["out"])
    prepare_output(out, args.force)
    records = run_suite(controllers, scenarios, opts["reps"], substream_seed(args.seed, "eval"), jobs=args.jobs)
    rows = aggregate(records)
    write_records_csv(records, out / "episodes.csv")
    write_rows_csv(rows, out / "metrics.csv")
    echo_config(out, "eval", args.seed, opts)
    print(format_table(rows))
    errors = sum(r.status == "error" for r in records)
    if errors:
        print(f"{errors} episode(s) ended with a controller error", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_render(args, cfg: dict) -> int:
    scenarios = read_scenarios(args.scenarios)
    if args.id:
        try:
            scenarios = [find(scenarios, i) for i in args.id]
        except KeyError as err:
            raise UsageError(str(err)) from err
    out = Path(args.out)
    prepare_output(out, args.force)
    for s in scenarios:
        (out / f"{s.id}.svg").write_text(render_svg(s))
    print(f"rendered {len(scenarios)} scenario(s) to {out}")
    return EXIT_OK


def cmd_gen_demos(args, cfg: dict) -> int:
    scenarios = read_scenarios(args.scenarios)
    if args.maps is not None:
        scenarios = scenarios[:args.maps]
    out = Path(args.out)
    prepare_output(out, args.force, is_dir=False)
    buf = ReplayBuffer()
    failed = []
    for s in scenarios:
        for _ in range(args.copies):
            status = demo_transitions(s, buf)
        if status.value != "goal":
            failed.append(s.id)
    save_buffer(buf, out)
    print(f"wrote {buf.size} transitions from {len(scenarios)} scenario(s) to {out}")
    if failed:
        print("seed replays that missed the goal: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed; each stage derives its own stream")
    common.add_argument("--config", help="JSON config file with per-command sections")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = argparse.ArgumentParser(prog="deadend", description="Narrow dead-end escape benchmark")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a validated scenario batch")
    p.add_argument("--count", type=int)
    p.add_argument("--variant", choices=["walls", "cylinders", "both", "alternate"])
    p.add_argument("--style", choices=["corridor", "tight_turn", "mixed"])
    p.add_argument("--n-phases", dest="n_phases", type=int)
    p.add_argument("--reverse-probability", dest="reverse_probability", type=float)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("replay", parents=[common], help="replay a scenario's seed escape")
    p.add_argument("scenarios")
    p.add_argument("--id", required=True)
    p.add_argument("--svg", help="write the layout with the replayed trajectory")
    p.add_argument("--log", help="write the per-step trajectory CSV")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("train", parents=[common], help="train the SAC policy")
    p.add_argument("scenarios")
    p.add_argument("--out")
    p.add_argument("--episodes", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--update-every", dest="update_every", type=int)
    p.add_argument("--updates-per-round", dest="updates_per_round", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pretrain-buffer", dest="pretrain_buffer")
    p.add_argument("--pretrain-iters", dest="pretrain_iters", type=int)
    p.add_argument("--epoch-episodes", dest="epoch_episodes", type=int)
    p.add_argument("--no-curriculum", action="store_true")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="benchmark controllers on a batch")
    p.add_argument("scenarios")
    p.add_argument("--controllers", help="comma list of ftg, hybrid-astar, null or checkpoint paths")
    p.add_argument("--maps", type=int, help="use the first N scenarios")
    p.add_argument("--reps", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="draw scenarios as SVG")
    p.add_argument("scenarios")
    p.add_argument("--id", action="append", help="scenario id (repeatable; default all)")
    p.add_argument("--out", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-demos", parents=[common], help="fill a demo buffer from seed replays")
    p.add_argument("scenarios")
    p.add_argument("--out", default="demos.jsonl")
    p.add_argument("--maps", type=int)
    p.add_argument("--copies", type=int, default=1, help="times each replay is added")
    p.set_defaults(func=cmd_gen_demos)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
