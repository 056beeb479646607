"""Command-line entry point: ``python -m gamfq <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
standard error; results are written only to the paths given on the command
line.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from gamfq import evaluator as ev
from gamfq import learners as ln
from gamfq.checks import run_gradchecks
from gamfq.config import ConfigError, load_config
from gamfq.engine import PlacementError, ScenarioError, build_scenario
from gamfq.nncore.checkpoint import CheckpointError
from gamfq.render import ReplayError, render_replay
from gamfq.trainer import TrainConfig, TrainingError, resume, train

SCRIPTED = {"random": ev.RandomPolicy, "stay": ev.StayPolicy, "attack_nearest": ev.AttackNearestPolicy}
RUNTIME_ERRORS = (ConfigError, ScenarioError, PlacementError, CheckpointError, ReplayError, TrainingError,
                  ev.EvaluationError, ln.LearnerError, OSError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> Parser:
    p = Parser(prog="gamfq", description="Mean-field MARL on gridworld battles.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    t = sub.add_parser("train", help="self-play training")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--alg", choices=ln.LEARNER_KINDS)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--epochs", type=int)
    t.add_argument("--episode-length", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    t.add_argument("--workers", type=int, default=1)

    f = sub.add_parser("faceoff", help="head-to-head rounds between two policies")
    f.add_argument("--scenario", required=True, type=Path)
    f.add_argument("--a", required=True, help="checkpoint path or random|stay|attack_nearest")
    f.add_argument("--b", required=True, help="checkpoint path or random|stay|attack_nearest")
    f.add_argument("--rounds", type=int, default=1000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", type=Path)
    f.add_argument("--replay", type=Path, help="also write a replay log of round 0")

    r = sub.add_parser("tournament", help="round-robin faceoffs with ELO ratings")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--ckpt", required=True, nargs="+", help="checkpoints or scripted names (comma or space separated)")
    r.add_argument("--rounds", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", type=Path)

    rp = sub.add_parser("replay", help="render a replay log to PPM frames")
    rp.add_argument("--log", required=True, type=Path)
    rp.add_argument("--frames", required=True, type=Path)
    rp.add_argument("--cell", type=int, default=4)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--tolerance", type=float, default=1e-4)

    v = sub.add_parser("validate", help="parse a config and build one episode")
    v.add_argument("--config", required=True, type=Path)
    return p


def _participant(token: str, spec, name: str | None = None) -> ev.Participant:
    if token in SCRIPTED:
        return ev.Participant.single(SCRIPTED[token](), name or token)
    return ev.load_participant(token, spec, name=name)


def _cmd_train(args) -> int:
    cf = load_config(args.config)
    overrides = {"kind": args.alg, "seed": args.seed, "epochs": args.epochs,
                 "episode_length": args.episode_length, "checkpoint_interval": args.checkpoint_interval}
    cfg = TrainConfig.from_training_section(cf.spec, cf.training, **overrides)
    cfg.out_dir = args.out
    cfg.scenario_path = args.config
    if args.workers > 1:
        _log("note: rollouts are serial; --workers only affects faceoffs")
    run = resume(args.resume, cfg) if args.resume else train(cfg)
    _log(f"trained {cfg.kind} for {run.next_episode} episodes; metrics in {run.metrics_path}")
    return 0


def _cmd_faceoff(args) -> int:
    spec = load_config(args.scenario).spec
    x = _participant(args.a, spec, "a" if args.a == args.b else None)
    y = _participant(args.b, spec, "b" if args.a == args.b else None)
    res = ev.faceoff(ev.FaceoffPlan(spec, x, y, args.rounds, args.seed), workers=args.workers)
    _log(f"{res.x} vs {res.y}: {res.wins}-{res.draws}-{res.losses}, win rate {res.win_rate:.3f} "
         f"(half std {res.half_std:.3f}, bootstrap std {res.bootstrap_std:.3f})")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "faceoff.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("round,winner\n")
            for i, o in enumerate(res.outcomes):
                fh.write(f"{i},{ {'x': res.x, 'y': res.y}.get(o, 'draw') }\n")
        summary = ev.TournamentResult({res.x: ev.Rating(res.ratings[0], res.rounds),
                                       res.y: ev.Rating(res.ratings[1], res.rounds)}, [res])
        summary.write(args.out)
    if args.replay:
        ev.export_replay(spec, x.group_a, y.group_b, args.replay, 0, args.seed)
    return 0


def _cmd_tournament(args) -> int:
    spec = load_config(args.scenario).spec
    tokens = [t for item in args.ckpt for t in item.split(",") if t]
    if len(tokens) < 2:
        raise UsageError("tournament needs at least two --ckpt entries")
    parts = [_participant(t, spec) for t in tokens]
    seen: dict[str, int] = {}
    for p in parts:
        seen[p.name] = seen.get(p.name, 0) + 1
        if seen[p.name] > 1:
            p.name = f"{p.name}#{seen[p.name]}"
    res = ev.tournament(parts, spec, args.rounds, args.seed, args.workers)
    for name, r in sorted(res.ratings.items(), key=lambda kv: -kv[1].value):
        _log(f"{name:<20s} {r.value:9.2f}  ({r.games} games)")
    if args.out:
        res.write(args.out)
    return 0


def _cmd_replay(args) -> int:
    frames = render_replay(args.log, args.frames, args.cell)
    _log(f"wrote {len(frames)} frames to {args.frames}")
    return 0


def _cmd_gradcheck(args) -> int:
    reports = run_gradchecks(range(args.seeds), args.tolerance)
    for r in reports:
        _log(r.format())
    return 0 if all(r.passed for r in reports) else 2


def _cmd_validate(args) -> int:
    cf = load_config(args.config)
    if cf.training:
        TrainConfig.from_training_section(cf.spec, cf.training)
    world = build_scenario(cf.spec, 0)
    world.check_invariants()
    _log(f"{args.config}: {cf.spec.kind}, {cf.spec.map_width}x{cf.spec.map_height}, "
         f"teams {[t.count for t in cf.spec.teams]}, {cf.spec.n_actions} actions, obs dim {cf.spec.obs_dim}")
    return 0


COMMANDS = {
    "train": _cmd_train, "faceoff": _cmd_faceoff, "tournament": _cmd_tournament,
    "replay": _cmd_replay, "gradcheck": _cmd_gradcheck, "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _log(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except RUNTIME_ERRORS as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
