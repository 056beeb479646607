import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamfq import evaluator as ev
from gamfq import learners as ln
from gamfq.engine import ScenarioSpec
from gamfq.trainer import TrainConfig, train


def _micro(**kw):
    return ScenarioSpec.default("multibattle", map_width=10, map_height=10, episode_length=40, **kw).with_teams(1, 1)


# --------------------------------------------------------------------- ELO

def test_equal_ratings_expect_half():
    assert ev.expected_scores(1000, 1000) == (0.5, 0.5)


def test_equal_rating_win_moves_sixteen():
    r1, r2 = ev.elo_update(ev.Rating(), ev.Rating(), "win")
    assert r1.value == 1016.0 and r2.value == 984.0
    assert (r1.games, r2.games) == (1, 1)


def test_elo_draw_between_equals_is_neutral():
    r1, r2 = ev.elo_update(ev.Rating(1200), ev.Rating(1200), "draw")
    assert r1.value == 1200 and r2.value == 1200


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 4000), st.floats(0, 4000), st.sampled_from(["win", "draw", "loss"]))
def test_elo_is_zero_sum(a, b, outcome):
    e1, e2 = ev.expected_scores(a, b)
    assert abs(e1 + e2 - 1) <= 1e-12
    r1, r2 = ev.elo_update(ev.Rating(a), ev.Rating(b), outcome)
    assert abs((r1.value - a) + (r2.value - b)) <= 1e-9


def test_elo_rejects_unknown_outcome_and_bad_k():
    with pytest.raises(ev.EvaluationError):
        ev.elo_update(ev.Rating(), ev.Rating(), "forfeit")
    with pytest.raises(ev.EvaluationError):
        ev.Rating(k=0)


# ----------------------------------------------------------- least squares

def test_exact_line_fit():
    slope, intercept = ev.fit_least_squares([(x, 2 * x + 1) for x in range(6)])
    assert slope == pytest.approx(2, abs=1e-12) and intercept == pytest.approx(1, abs=1e-12)


def test_symmetric_residuals_recover_line():
    pts = [(0, 1.5), (0, 0.5), (2, 3.5), (2, 2.5)]
    assert ev.fit_least_squares(pts) == pytest.approx((1.0, 1.0), abs=1e-12)


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=100), rng.normal(size=100)
    A = np.stack([x, np.ones_like(x)], axis=1)
    oracle = np.linalg.solve(A.T @ A, A.T @ y)
    assert np.allclose(ev.fit_least_squares(np.stack([x, y], 1)), oracle, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=40))
def test_fit_residuals_are_orthogonal(points):
    xs = np.array([p[0] for p in points])
    if np.ptp(xs) < 1e-3:
        return
    slope, icpt = ev.fit_least_squares(points)
    res = np.array([p[1] for p in points]) - (slope * xs + icpt)
    scale = 1 + np.abs(xs).max() * np.abs(res).max()
    assert abs(res.sum()) <= 1e-9 * len(points) * scale
    assert abs((xs * res).sum()) <= 1e-9 * len(points) * scale * (1 + np.abs(xs).max())


def test_fit_rejects_degenerate_x():
    with pytest.raises(ev.EvaluationError):
        ev.fit_least_squares([(1, 2), (1, 3)])
    with pytest.raises(ev.EvaluationError):
        ev.fit_least_squares([(1, 2)])


# ----------------------------------------------------------------- faceoffs

def test_attacker_beats_stayer_every_round():
    spec = _micro()
    plan = ev.FaceoffPlan(spec, ev.Participant.single(ev.StayPolicy()),
                          ev.Participant.single(ev.AttackNearestPolicy()), rounds=10)
    res = ev.faceoff(plan)
    assert res.losses == 10 and res.win_rate == 0.0


def test_random_rounds_are_not_all_identical(tiny_battle):
    rnd = ev.Participant.single(ev.RandomPolicy())
    res = ev.faceoff(ev.FaceoffPlan(tiny_battle, rnd, ev.Participant.single(ev.RandomPolicy(), "random2"), 20))
    assert len(set(res.outcomes)) > 1
    assert res.wins + res.draws + res.losses == 20


def test_faceoff_is_deterministic_and_worker_independent(tiny_battle):
    plan = ev.FaceoffPlan(tiny_battle, ev.Participant.single(ev.RandomPolicy()),
                          ev.Participant.single(ev.AttackNearestPolicy()), rounds=8, seed_base=3)
    a, b, c = ev.faceoff(plan), ev.faceoff(plan), ev.faceoff(plan, workers=2)
    assert a == b == c


def test_side_swap_pairing(tiny_battle):
    x = ev.Participant("x", ev.StayPolicy(), ev.RandomPolicy())
    y = ev.Participant("y", ev.AttackNearestPolicy(), ev.StayPolicy())
    plan = ev.FaceoffPlan(tiny_battle, x, y, rounds=4)
    assert plan.pairing(0) == (x.group_a, y.group_b, True)
    assert plan.pairing(3) == (y.group_a, x.group_b, False)
    with pytest.raises(ev.EvaluationError):
        ev.FaceoffPlan(tiny_battle, x, y, rounds=3)


def test_half_statistics(tiny_battle):
    plan = ev.FaceoffPlan(tiny_battle, ev.Participant.single(ev.AttackNearestPolicy()),
                          ev.Participant.single(ev.StayPolicy()), rounds=6)
    res = ev.faceoff(plan)
    assert res.half_std == pytest.approx(np.std(res.half_rates))
    assert res.win_rate == pytest.approx(np.mean(res.half_rates))


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    spec = ScenarioSpec.default("multibattle", map_width=10, map_height=10, episode_length=12).with_teams(2, 2)
    out = tmp_path_factory.mktemp("ckpt")
    train(TrainConfig(spec=spec, kind="mfq", epochs=2, hidden=8, batch_size=8, buffer_size=64, out_dir=out))
    return spec, out / "mfq_A_1.ckpt"


def test_checkpoint_against_itself_is_even(tiny_checkpoint):
    spec, ckpt = tiny_checkpoint
    p = ev.load_participant(ckpt, spec)
    q = ev.load_participant(ckpt, spec, name="copy")
    res = ev.faceoff(ev.FaceoffPlan(spec, p, q, rounds=100))
    assert abs(res.win_rate - 0.5) <= 0.15


def test_participant_loads_both_groups(tiny_checkpoint):
    spec, ckpt = tiny_checkpoint
    p = ev.load_participant(ckpt, spec)
    assert p.group_a is not p.group_b and p.name == "mfq"
    again = ev.load_participant(ckpt.with_name("mfq_B_1.ckpt"), spec)
    assert again.group_a.learner.q["q/out/b"].tolist() == p.group_a.learner.q["q/out/b"].tolist()


def test_participant_rejects_other_scenario(tiny_checkpoint):
    _, ckpt = tiny_checkpoint
    with pytest.raises(ev.EvaluationError):
        ev.load_participant(ckpt, _micro())


# --------------------------------------------------------------- tournament

@pytest.mark.parametrize("n", [2, 4])
def test_tournament_plays_every_pair_once(n, tiny_battle, tmp_path):
    policies = [ev.RandomPolicy, ev.StayPolicy, ev.AttackNearestPolicy, ev.RandomPolicy]
    parts = [ev.Participant.single(policies[i](), f"p{i}") for i in range(n)]
    res = ev.tournament(parts, tiny_battle, rounds=4)
    assert len(res.pairs) == len(list(itertools.combinations(range(n), 2)))
    assert all(r.games == 4 * (n - 1) for r in res.ratings.values())
    assert sum(r.value for r in res.ratings.values()) == pytest.approx(1000 * n)
    rpath, ppath = res.write(tmp_path)
    with ppath.open() as fh:
        header = next(csv.reader(fh))
    assert header[:4] == ["algorithm1", "algorithm2", "score1", "score2"]
    assert len(rpath.read_text().splitlines()) == n + 1


def test_tournament_needs_two_distinct_names(tiny_battle):
    with pytest.raises(ev.EvaluationError):
        ev.tournament([ev.Participant.single(ev.StayPolicy())], tiny_battle, 2)
    with pytest.raises(ev.EvaluationError):
        ev.tournament([ev.Participant.single(ev.StayPolicy()), ev.Participant.single(ev.StayPolicy())],
                      tiny_battle, 2)


# ------------------------------------------------------------- gap report

def test_gap_report_counts_rows(small_battle, tmp_path):
    """Nobody attacks, so every agent contributes one row per step."""
    rows = ev.mean_action_gap_report(small_battle, 1, tmp_path / "gap.csv", max_steps=10,
                                     actions_fn=lambda world, rng: {a: 0 for a in world.alive_ids})
    assert len(rows) == 10 * 8
    assert len((tmp_path / "gap.csv").read_text().splitlines()) == 81
    hist = (tmp_path / "gap_histogram.csv").read_text().splitlines()
    assert sum(int(line.split(",")[2]) for line in hist[1:]) == 80


def test_gap_is_zero_when_everyone_agrees(small_battle, tmp_path):
    rows = ev.mean_action_gap_report(small_battle, 1, tmp_path / "gap.csv", max_steps=5,
                                     actions_fn=lambda world, rng: {a: 0 for a in world.alive_ids})
    observed = [r["gap"] for r in rows if r["n_observed"] > 0]
    assert observed and max(observed) == 0.0


def test_gap_is_zero_when_everyone_is_observed(tmp_path):
    spec = ScenarioSpec.default("multibattle", map_width=10, map_height=10, episode_length=5).with_teams(3, 3)
    rows = ev.mean_action_gap_report(spec, 2, tmp_path / "gap.csv")
    full = [r["gap"] for r in rows if r["n_observed"] == 2]
    assert full and max(full) <= 1e-15


def test_gap_report_with_gamfq_learner(small_battle, tmp_path):
    learner = ln.make_learner("gamfq", small_battle.obs_dim, small_battle.n_actions, 0, hidden=8, gat_hidden=8)
    rows = ev.mean_action_gap_report(small_battle, 1, tmp_path / "gap.csv", learner=learner, max_steps=4)
    assert rows and all(r["n_selected"] <= r["n_observed"] for r in rows)
    assert all(0 <= r["gap"] <= 1 for r in rows)


# ------------------------------------------------------------------ replays

def test_exported_replay_reproduces_outcome(tiny_battle, tmp_path):
    from gamfq.render import read_replay
    w = ev.export_replay(tiny_battle, ev.AttackNearestPolicy(), ev.RandomPolicy(), tmp_path / "r.log", 2, 5)
    header, steps = read_replay(tmp_path / "r.log")
    assert header["episode"] == 2 and steps
    again, _ = ev.play_round(tiny_battle, (ev.AttackNearestPolicy(), ev.RandomPolicy()), 2, 5)
    assert again == w
