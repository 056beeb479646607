"""Train GAMFQ and POMFQ(FOR) by self-play on a small battle, fit the reward trend,
and rate the checkpoints against each other and a random policy.

The defaults finish in a few minutes; the learning runs in the test suite use
300-500 episodes on the same map.

    python3 demos/train_and_rate.py --episodes 40 --out /tmp/train_demo
"""

import argparse
from pathlib import Path

from gamfq import evaluator as ev
from gamfq.engine import ScenarioSpec
from gamfq.trainer import TrainConfig, checkpoint_path, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=40)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("train_demo"))
    args = ap.parse_args()

    spec = ScenarioSpec.default("multibattle", map_width=20, map_height=20, episode_length=200).with_teams(10, 10)
    participants = []
    for kind in ("gamfq", "pomfq_for"):
        cfg = TrainConfig(spec=spec, kind=kind, epochs=args.episodes, seed=args.seed, out_dir=args.out / kind)
        run = train(cfg)
        slope, _ = ev.fit_least_squares(list(enumerate(run.team_rewards(0))))
        print(f"{kind}: {args.episodes} episodes, team A reward trend {slope:+.2f} per episode, "
              f"last episode {run.metrics[-1].reward[0]:.1f}")
        last = checkpoint_path(cfg.out_dir, kind, 0, args.episodes - 1)
        participants.append(ev.load_participant(last, spec))
    participants.append(ev.Participant.single(ev.RandomPolicy()))

    result = ev.tournament(participants, spec, rounds=args.rounds, seed_base=args.seed)
    result.write(args.out / "tournament")
    for p in result.pairs:
        print(f"{p.x:>10} vs {p.y:<10} {p.wins}-{p.draws}-{p.losses}  win rate {p.win_rate:.2f}")
    for name, r in sorted(result.ratings.items(), key=lambda kv: -kv[1].value):
        print(f"{name:>10}: ELO {r.value:.1f}")


if __name__ == "__main__":
    main()
