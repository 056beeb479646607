"""Walk through one battle: build a world, look at an observation, play scripted
policies against each other and render the replay to PPM frames.

    python3 demos/battle_walkthrough.py --out /tmp/battle_demo
"""

import argparse
from pathlib import Path

from gamfq import evaluator as ev
from gamfq.engine import ScenarioSpec, build_scenario, observe
from gamfq.render import render_replay


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("battle_demo"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    spec = ScenarioSpec.default("multibattle", map_width=20, map_height=20, episode_length=120,
                                rng_seed=args.seed).with_teams(8, 8)
    world = build_scenario(spec)
    view = observe(world, 0)
    print(f"{spec.kind}: {spec.map_width}x{spec.map_height}, {spec.n_actions} actions, obs dim {spec.obs_dim}")
    print(f"agent 0 at ({world.agents[0].x}, {world.agents[0].y}) sees {len(view.neighbor_ids)} agents: "
          f"{view.neighbor_ids.tolist()}")

    # A chaser against a random mob, ten rounds with sides swapped halfway.
    chaser = ev.Participant.single(ev.AttackNearestPolicy())
    mob = ev.Participant.single(ev.RandomPolicy())
    res = ev.faceoff(ev.FaceoffPlan(spec, chaser, mob, rounds=10, seed_base=args.seed))
    print(f"attack_nearest vs random: {res.wins} wins, {res.draws} draws, {res.losses} losses; "
          f"ELO {res.ratings[0]:.1f} / {res.ratings[1]:.1f}")

    log = args.out / "round0.log"
    winner = ev.export_replay(spec, ev.AttackNearestPolicy(), ev.RandomPolicy(), log, 0, args.seed)
    frames = render_replay(log, args.out / "frames", cell=6)
    print(f"round 0 won by {ev.team_letter(winner)}; {len(frames)} frames in {args.out / 'frames'}")


if __name__ == "__main__":
    main()
