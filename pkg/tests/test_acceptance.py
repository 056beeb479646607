"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Criteria 9-11 train real learners (tens of minutes each on one CPU) and are
marked ``slow``; they are judged by a majority over three documented seeds.
"""

import time

import numpy as np
import pytest

from gamfq import estimators as est
from gamfq import evaluator as ev
from gamfq import learners as ln
from gamfq.checks import run_gradchecks
from gamfq.engine import BATTLE, PREDATOR, PREY, ScenarioSpec, build_scenario, simulate_episodes, step
from gamfq.nncore import autodiff as ad
from gamfq.nncore.autodiff import Tape
from gamfq.nncore.layers import gumbel_softmax
from gamfq.trainer import TrainConfig, checkpoint_path, train
from tests.helpers import attack_action, move_action, place

LEARNING_SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, f"criterion {number}: {detail}"
    return emit


def test_c01_gradient_fidelity(report):
    t0 = time.perf_counter()
    reports = run_gradchecks(range(5), tolerance=1e-4, eps=1e-6)
    elapsed = time.perf_counter() - t0
    worst = max(e.max_rel_error for r in reports for e in r.entries)
    names = {r.label.split()[0] for r in reports}
    ok = all(r.passed for r in reports) and elapsed < 120 and len(names) == 5
    report(1, ok, f"{len(reports)} checks over {sorted(names)}, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_c02_dirichlet_oracle(report):
    target = np.array([4, 2, 1]) / 7
    state = est.DirichletState(np.array([3.0, 1.0, 0.0]), eta=1.0, samples=100_000)
    errs = [np.abs(est.dirichlet_mean(state, np.random.default_rng(s)) - target).max() for s in range(30)]
    hits = sum(e <= 0.005 for e in errs)
    report(2, hits == 30, f"{hits}/30 seeds within 0.005, max L-inf {max(errs):.4f}")


def test_c03_simplex_fuzz(report):
    rng = np.random.default_rng(3)
    n, L = 10_000, 21
    worst = 0.0
    negative = False
    bitwise = True
    counts = rng.integers(0, 21, size=n)
    for i in range(n):
        acts = est.one_hot(rng.integers(L, size=counts[i]), L)
        g = est.global_mean(acts, L)
        m = est.masked_mean(rng.random(counts[i]) < 0.5, acts, L)
        bitwise &= np.array_equal(est.masked_mean(np.ones(counts[i]), acts, L), g)
        for out in (g, m):
            worst = max(worst, abs(out.sum() - 1))
            negative |= bool((out < 0).any())
    dir_counts = rng.integers(0, 20, size=(n, L)).astype(float)
    d = est.dirichlet_mean_batch(dir_counts, rng, eta=float(rng.uniform(0.1, 2)), samples=20)
    worst = max(worst, np.abs(d.sum(1) - 1).max())
    negative |= bool((d < 0).any())
    net = est.GraphAttentionNet(12, rng, hidden=16)
    for _ in range(10):
        B, k = 1000, int(rng.integers(1, 21))
        obs = rng.normal(size=(B, k + 1, 12))
        h, c = rng.normal(size=(B, k + 1, 16)), rng.normal(size=(B, k + 1, 16))
        adj = (rng.random((B, k + 1, k + 1)) < 0.5) | np.eye(k + 1, dtype=bool)
        valid = (rng.random((B, k)) < 0.8).astype(float)
        acts = est.one_hot(rng.integers(L, size=B * k), L).reshape(B, k, L)
        out = est.gamfq_mean_action(net.store.bind(), net, obs, h, c, adj, valid, acts,
                                    rng.gumbel(size=(B, k, 2))).data
        worst = max(worst, np.abs(out.sum(1) - 1).max())
        negative |= bool((out < 0).any())
    ok = worst <= 1e-9 and not negative and bitwise
    report(3, ok, f"4 estimators x 1e4 inputs, max |sum-1| {worst:.1e}, negatives {negative}, "
                  f"full-mask bitwise {bitwise}")


def test_c04_engine_determinism(report):
    spec = ScenarioSpec.default("multibattle", rng_seed=11)
    episodes = [0, 1, 2, 3]
    runs = [simulate_episodes(spec, episodes, max_steps=100, workers=1) for _ in range(5)]
    parallel = simulate_episodes(spec, episodes, max_steps=100, workers=4)
    same = all(r == runs[0] for r in runs) and parallel == runs[0]
    steps = runs[0][0].count(b"\n")
    report(4, same, f"25v25, {len(episodes)} episodes x {steps} steps, 5 serial runs + workers=4 identical: {same}")


def test_c05_action_tables(report):
    counts = {c.name: (len(c.move_offsets), len(c.attack_offsets), c.n_actions) for c in (BATTLE, PREDATOR, PREY)}
    ok = counts["battle"] == (13, 8, 21) and counts["predator"] == (13, 8, 21) and counts["prey"] == (21, 0, 21)
    report(5, ok, f"(moves, attacks, total) {counts}")


def _one_step(spec, positions, actions, setup=None):
    world = place(build_scenario(spec), positions)
    if setup:
        setup(world)
    acts = {aid: (a(world.agents[aid]) if callable(a) else a) for aid, a in actions.items()}
    return step(world, acts).rewards


def test_c06_reward_constants(report):
    mb = ScenarioSpec.default("multibattle", map_width=12, map_height=12).with_teams(1, 1)
    east = lambda a: attack_action(a, (1, 0))  # noqa: E731
    got = {
        "move": _one_step(mb, {0: (0, 0), 1: (8, 8)}, {0: lambda a: move_action(a, (1, 0)), 1: 0})[0],
        "attack_empty": _one_step(mb, {0: (0, 0), 1: (8, 8)}, {0: east, 1: 0})[0],
        "hit": _one_step(mb, {0: (0, 0), 1: (2, 0)}, {0: east, 1: 0})[0],
        "kill": _one_step(mb, {0: (0, 0), 1: (2, 0)}, {0: east, 1: 0},
                          lambda w: setattr(w.agents[1], "hp", 2.0))[0] - 0.2,
    }
    ga = ScenarioSpec.default("gathering", map_width=12, map_height=12, food_count=1).with_teams(1, 1)
    got["gathering_hit"] = _one_step(ga, {0: (0, 0), 1: (2, 0)}, {0: east, 1: 0})[0]
    pp = ScenarioSpec.default("predator_prey", map_width=12, map_height=12).with_teams(1, 1)
    got["predator_hit"] = _one_step(pp, {0: (0, 0), 1: (2, 0)}, {0: east, 1: 0})[0]
    got["predator_kill"] = _one_step(pp, {0: (0, 0), 1: (2, 0)}, {0: east, 1: 0},
                                     lambda w: setattr(w.agents[1], "hp", 1.0))[0] - 1.0
    got["predator_attack_space"] = _one_step(pp, {0: (0, 0), 1: (8, 8)}, {0: east, 1: 0})[0]
    want = {"move": -0.005, "attack_empty": -0.1, "hit": 0.2, "kill": 200.0, "gathering_hit": 5.0,
            "predator_hit": 1.0, "predator_kill": 100.0, "predator_attack_space": -0.3}
    ok = all(abs(got[k] - want[k]) <= 1e-12 for k in want)
    report(6, ok, ", ".join(f"{k}={got[k]:g}" for k in want))


def test_c07_elo(report):
    r1, r2 = ev.elo_update(ev.Rating(), ev.Rating(), "win")
    plus16 = (r1.value - 1000, r2.value - 1000) == (16.0, -16.0)
    rng = np.random.default_rng(7)
    worst_sum, worst_e = 0.0, 0.0
    for _ in range(10_000):
        a, b = rng.uniform(0, 3000, size=2)
        e1, e2 = ev.expected_scores(a, b)
        worst_e = max(worst_e, abs(e1 + e2 - 1))
        n1, n2 = ev.elo_update(ev.Rating(a), ev.Rating(b), ["win", "draw", "loss"][rng.integers(3)])
        worst_sum = max(worst_sum, abs((n1.value - a) + (n2.value - b)))
    ok = plus16 and worst_sum <= 1e-9 and worst_e <= 1e-12
    report(7, ok, f"equal-rating win {r1.value - 1000:+g}/{r2.value - 1000:+g}, max |dR1+dR2| {worst_sum:.1e}, "
                  f"max |E1+E2-1| {worst_e:.1e}")


def test_c08_gumbel_hard_attention(report):
    rng = np.random.default_rng(8)
    logits = ad.constant(np.tile([0.0, 5.0], (10_000, 1)))
    y = gumbel_softmax(logits, 0.5, hard=True, rng=rng).data
    one_hot = bool(np.all((y == 0) | (y == 1)) and np.all(y.sum(1) == 1))
    favoured = float(y[:, 1].mean())
    report(8, one_hot and favoured >= 0.95, f"one-hot {one_hot}, favoured class chosen {favoured:.4f}")


def test_c12_mfac_bandit(report):
    hits = []
    for seed in range(5):
        learner = ln.make_learner("mfac", 4, 2, seed)
        learner.q.set("q/out/W", np.zeros_like(learner.q["q/out/W"]))
        learner.q.set("q/out/b", np.array([1.0, 0.0]))
        rng = np.random.default_rng(seed)
        obs, means = np.ones((64, 4)), np.full((64, 2), 0.5)
        for u in range(1, 501):
            a = ln.act(learner, obs, means, 0.0, rng)
            ln.actor_update(learner, ln.Batch.stack(
                [ln.Transition(obs[0], int(x), 0.0, obs[0], means[0], True) for x in a]))
            if learner.policy(obs[:1], means[:1])[0, 0] > 0.9:
                break
        hits.append(u if learner.policy(obs[:1], means[:1])[0, 0] > 0.9 else None)
    ok = all(h is not None for h in hits)
    report(12, ok, f"updates to exceed 0.9 per seed: {hits}")


# ----------------------------------------------------------- learning runs

LEARN_SPEC = ScenarioSpec.default("multibattle", map_width=20, map_height=20, episode_length=200).with_teams(10, 10)


@pytest.fixture(scope="session")
def gamfq_300(tmp_path_factory):
    runs = {}
    for seed in LEARNING_SEEDS:
        out = tmp_path_factory.mktemp(f"gamfq300_{seed}")
        t0 = time.perf_counter()
        run = train(TrainConfig(spec=LEARN_SPEC, kind="gamfq", epochs=300, seed=seed, out_dir=out))
        runs[seed] = (run, time.perf_counter() - t0)
    return runs


@pytest.mark.slow
def test_c09_learning_progress(report, gamfq_300):
    lines, passed = [], 0
    for seed, (run, wall) in gamfq_300.items():
        rewards = run.team_rewards(0)
        slope, _ = ev.fit_least_squares(list(enumerate(rewards)))
        ok = slope > 0 and wall < 30 * 60
        passed += ok
        lines.append(f"seed {seed}: slope {slope:+.3f}/episode, {wall / 60:.1f} min")
    report(9, passed >= 2, f"{passed}/3 seeds ({'; '.join(lines)})")


@pytest.mark.slow
def test_c10_beats_random(report, gamfq_300):
    lines, passed = [], 0
    for seed, (run, _) in gamfq_300.items():
        gamfq = ev.load_participant(checkpoint_path(run.config.out_dir, "gamfq", 0, 299), LEARN_SPEC)
        res = ev.faceoff(ev.FaceoffPlan(LEARN_SPEC, gamfq, ev.Participant.single(ev.RandomPolicy()),
                                        rounds=100, seed_base=1000 + seed))
        passed += res.wins >= 80
        lines.append(f"seed {seed}: {res.wins}-{res.draws}-{res.losses}")
    report(10, passed >= 2, f"{passed}/3 seeds with >= 80 wins ({'; '.join(lines)})")


@pytest.mark.slow
def test_c11_gamfq_vs_pomfq(report, tmp_path_factory):
    lines, passed = [], 0
    for seed in LEARNING_SEEDS:
        parts = []
        for kind in ("gamfq", "pomfq_for"):
            out = tmp_path_factory.mktemp(f"{kind}500_{seed}")
            train(TrainConfig(spec=LEARN_SPEC, kind=kind, epochs=500, seed=seed, out_dir=out))
            parts.append(ev.load_participant(checkpoint_path(out, kind, 0, 499), LEARN_SPEC))
        res = ev.faceoff(ev.FaceoffPlan(LEARN_SPEC, parts[0], parts[1], rounds=200, seed_base=2000 + seed))
        passed += res.win_rate >= 0.5
        lines.append(f"seed {seed}: win rate {res.win_rate:.3f} ({res.wins}-{res.draws}-{res.losses}, "
                     f"half std {res.half_std:.3f})")
    report(11, passed >= 2, f"{passed}/3 seeds at >= 0.5 ({'; '.join(lines)})")
