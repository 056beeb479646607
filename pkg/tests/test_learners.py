import numpy as np
import pytest

from gamfq import learners as ln
from gamfq import estimators as est
from gamfq.nncore import autodiff as ad
from gamfq.nncore.autodiff import Tape
from gamfq.nncore.gradcheck import grad_check

F, L = 6, 4


def _learner(kind="mfq", seed=0, **kw):
    return ln.make_learner(kind, F, L, seed, hidden=8, gat_hidden=8, **kw)


def _constant_q(store, values):
    """Make a Q (or actor) network output ``values`` for every input."""
    prefix = next(n for n in store.names() if n.endswith("out/W"))[:-2]
    store.set(prefix + "/W", np.zeros_like(store[prefix + "/W"]))
    store.set(prefix + "/b", np.asarray(values, dtype=float))


def _transitions(rng, n, terminal=False, reward=None):
    out = []
    for _ in range(n):
        out.append(ln.Transition(
            obs=rng.normal(size=F), action=int(rng.integers(L)),
            reward=float(rng.normal()) if reward is None else reward,
            next_obs=rng.normal(size=F), mean_action=est.global_mean(est.one_hot(rng.integers(L, size=3), L)),
            terminal=terminal))
    return out


# ------------------------------------------------------------------ policy

def test_boltzmann_examples():
    assert np.abs(ln.boltzmann_policy([2.0, 2.0, 2.0]) - 1 / 3).max() < 1e-9
    assert np.abs(ln.boltzmann_policy([5.0, -1.0, 3.0], beta=0.0) - 1 / 3).max() < 1e-9
    p = ln.boltzmann_policy([1.0, 0.0], beta=10.0)
    assert p[0] == pytest.approx(np.exp(10) / (np.exp(10) + 1), abs=1e-12)
    assert p[0] == pytest.approx(0.99995, abs=1e-5)


def test_boltzmann_prefers_higher_q():
    p = ln.boltzmann_policy([0.0, 1.0, 3.0])
    assert p[2] > p[1] > p[0]


def test_boltzmann_rejects_bad_input():
    with pytest.raises(ln.LearnerError):
        ln.boltzmann_policy([])
    with pytest.raises(ln.LearnerError):
        ln.boltzmann_policy([1.0], beta=-1)


def test_epsilon_schedule_is_linear():
    eps = [ln.epsilon_at(e, 10) for e in range(12)]
    assert eps[0] == 1.0 and eps[5] == 0.5 and eps[10] == 0.0 and eps[11] == 0.0
    assert all(a >= b for a, b in zip(eps, eps[1:]))


def test_uniform_exploration_at_full_epsilon():
    learner = _learner()
    _constant_q(learner.q, [100.0, 0, 0, 0])
    n = 10_000
    acts = ln.act(learner, np.zeros((n, F)), np.full((n, L), 0.25), 1.0, np.random.default_rng(1))
    freq = np.bincount(acts, minlength=L)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.abs(freq - n / 4).max() < 3 * sigma


def test_dominant_q_is_chosen_without_exploration():
    learner = _learner()
    _constant_q(learner.q, [0.0, 0.0, 100.0, 0.0])
    n = 10_000
    acts = ln.act(learner, np.zeros((n, F)), np.full((n, L), 0.25), 0.0, np.random.default_rng(2))
    assert (acts == 2).mean() >= 0.999


def test_acting_is_deterministic_per_seed():
    learner = _learner()
    obs = np.random.default_rng(3).normal(size=(50, F))
    means = np.full((50, L), 0.25)
    a = ln.act(learner, obs, means, 0.3, np.random.default_rng(9))
    b = ln.act(learner, obs, means, 0.3, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_mfac_policy_rows_on_simplex():
    learner = _learner("mfac")
    p = learner.policy(np.random.default_rng(4).normal(size=(30, F)), np.full((30, L), 0.25))
    assert (p >= 0).all() and np.allclose(p.sum(1), 1, atol=1e-9)


# ---------------------------------------------------------------- TD target

def test_td_target_terminal_is_reward():
    learner = _learner()
    batch = ln.Batch.stack(_transitions(np.random.default_rng(5), 4, terminal=True, reward=200.0))
    assert np.array_equal(ln.td_target(learner, batch), np.full(4, 200.0))


def test_td_target_with_zero_q_is_reward():
    learner = _learner()
    _constant_q(learner.q_target, np.zeros(L))
    batch = ln.Batch.stack(_transitions(np.random.default_rng(6), 4, reward=1.0))
    assert np.array_equal(ln.td_target(learner, batch), np.ones(4))


def test_td_target_matches_hand_backup():
    learner = ln.make_learner("mfq", F, 2, 0, hidden=8)
    _constant_q(learner.q_target, [1.0, 3.0])
    t = ln.Transition(np.zeros(F), 0, 0.5, np.zeros(F), np.array([0.5, 0.5]), False)
    pi = np.exp([1.0, 3.0]) / np.exp([1.0, 3.0]).sum()
    expected = 0.5 + 0.95 * (pi[0] * 1.0 + pi[1] * 3.0)
    assert ln.td_target(learner, ln.Batch.stack([t]))[0] == pytest.approx(expected, abs=1e-12)


def test_td_target_rejects_wrong_width():
    learner = _learner()
    batch = ln.Batch.stack(_transitions(np.random.default_rng(7), 2))
    with pytest.raises(ln.LearnerError):
        ln.td_target(learner, batch, means=np.full((2, L + 1), 0.2))


def test_batch_rejects_mixed_widths_and_empty():
    rng = np.random.default_rng(8)
    items = _transitions(rng, 2)
    items[1].mean_action = np.full(L + 1, 1 / (L + 1))
    with pytest.raises(ln.LearnerError):
        ln.Batch.stack(items)
    with pytest.raises(ln.LearnerError):
        ln.Batch.stack([])


# ----------------------------------------------------------------- updates

def test_q_update_at_fixed_point_changes_nothing():
    learner = _learner()
    c = 2.0
    _constant_q(learner.q, np.full(L, c))
    _constant_q(learner.q_target, np.full(L, c))
    batch = _transitions(np.random.default_rng(9), 8, reward=c * (1 - 0.95))
    before = {k: v.copy() for k, v in learner.q.params.items()}
    loss = ln.q_update(learner, batch, np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert all(np.array_equal(before[k], learner.q[k]) for k in before)


def test_q_update_reduces_loss_on_frozen_batch():
    learner = _learner()
    batch = ln.Batch.stack(_transitions(np.random.default_rng(10), 32))
    rng = np.random.default_rng(0)
    losses = [ln.q_update(learner, batch, rng, lr=1e-3) for _ in range(100)]
    assert losses[-1] < 0.8 * losses[0]


def test_q_update_never_touches_target_gradients():
    learner = _learner()
    ln.q_update(learner, _transitions(np.random.default_rng(11), 8), np.random.default_rng(0))
    assert learner.q_target.grad_norm() == 0.0
    assert learner.q_target.step == 0


def test_q_loss_gradient_matches_finite_differences():
    learner = _learner(seed=3)
    batch = ln.Batch.stack(_transitions(np.random.default_rng(12), 6))
    y = ln.td_target(learner, batch)

    def build():
        def loss(tape):
            q = learner.q_forward(learner.q.bind(tape), batch.obs, ad.constant(batch.means))
            return ad.mean_all(ad.square(ad.sub(ad.pick(q, batch.actions), ad.constant(y))))
        return [learner.q], loss

    report = grad_check(build, 1e-4)
    assert report.passed, report.format()


def test_updates_are_deterministic():
    def run():
        learner = _learner("pomfq_for", seed=4, batch_size=8)
        for t in _transitions(np.random.default_rng(13), 40):
            learner.buffer.add(t)
        rng = np.random.default_rng(5)
        return [ln.update(learner, rng) for _ in range(10)]
    assert run() == run()


def test_update_soft_syncs_target():
    learner = _learner(batch_size=4, tau=1.0)
    for t in _transitions(np.random.default_rng(14), 10):
        learner.buffer.add(t)
    ln.update(learner, np.random.default_rng(0))
    assert all(np.array_equal(learner.q[k], learner.q_target[k]) for k in learner.q.names())


# -------------------------------------------------------------------- MFAC

def test_actor_unchanged_when_advantage_is_zero():
    learner = _learner("mfac")
    _constant_q(learner.q, np.full(L, 1.5))
    before = {k: v.copy() for k, v in learner.actor.params.items()}
    ln.actor_update(learner, ln.Batch.stack(_transitions(np.random.default_rng(15), 8)))
    assert all(np.array_equal(before[k], learner.actor[k]) for k in before)


def test_bandit_actor_probability_rises():
    learner = ln.make_learner("mfac", 1, 2, 0, hidden=8)
    _constant_q(learner.q, [1.0, 0.0])
    rng = np.random.default_rng(16)
    obs, means = np.ones((1, 1)), np.full((1, 2), 0.5)
    probs = [learner.policy(obs, means)[0, 0]]
    for _ in range(50):
        a = ln.act(learner, np.ones((32, 1)), np.full((32, 2), 0.5), 0.0, rng)
        batch = ln.Batch.stack([ln.Transition(np.ones(1), int(x), 0.0, np.ones(1), np.full(2, 0.5), True) for x in a])
        ln.actor_update(learner, batch, lr=1e-3)
        probs.append(learner.policy(obs, means)[0, 0])
    assert probs[-1] > probs[0] and np.all(np.diff(probs) >= -1e-12)


def test_mfac_update_requires_mfac():
    learner = _learner("mfq")
    with pytest.raises(ln.LearnerError):
        ln.mfac_update(learner, _transitions(np.random.default_rng(0), 2), np.random.default_rng(0))


# ------------------------------------------------------------------ replay

def test_replay_is_fifo_and_bounded():
    buf = ln.ReplayBuffer(5)
    items = _transitions(np.random.default_rng(17), 12)
    for t in items:
        buf.add(t)
    assert len(buf) == 5 and buf.total_added == 12
    assert {id(t) for t in buf.sample(5, np.random.default_rng(0))} == {id(t) for t in items[7:]}


def test_replay_minibatch_has_no_repeats():
    buf = ln.ReplayBuffer(50)
    for t in _transitions(np.random.default_rng(18), 50):
        buf.add(t)
    batch = buf.sample(50, np.random.default_rng(1))
    assert len({id(t) for t in batch}) == 50


def test_replay_sampling_is_uniform():
    buf = ln.ReplayBuffer(20)
    items = _transitions(np.random.default_rng(19), 20)
    for t in items:
        buf.add(t)
    index = {id(t): i for i, t in enumerate(items)}
    rng = np.random.default_rng(2)
    counts = np.zeros(20)
    for _ in range(20_000):
        for t in buf.sample(5, rng):
            counts[index[id(t)]] += 1
    expected = counts.sum() / 20
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 36.191  # chi-square 99th percentile, 19 degrees of freedom


# --------------------------------------------------------- team estimators

def team_view(learner, rng, n=5):
    obs = rng.normal(size=(n, F))
    neighbors = [np.array([k for k in range(n) if k != j][: j], dtype=np.int64) for j in range(n)]
    offsets = [rng.uniform(-4, 4, size=(len(nb), 2)) for nb in neighbors]
    view = ln.TeamView(obs, neighbors, offsets)
    if learner.graph is not None:
        h, c = learner.graph.initial_state(n)
        m, (h, c) = est.encode_obs(learner.graph, obs, (h, c))
        view.messages = m
        view.snapshot = ln.TeamSnapshot(obs, h, c)
    return view


@pytest.mark.parametrize("kind", ln.LEARNER_KINDS)
def test_team_means_on_simplex(kind):
    learner = _learner(kind)
    rng = np.random.default_rng(20)
    view = team_view(learner, rng)
    means, records = ln.estimate_means(learner, view, rng.integers(L, size=5), rng)
    assert means.shape == (5, L)
    assert (means >= 0).all() and np.allclose(means.sum(1), 1, atol=1e-9)
    assert np.allclose(means[0], 1 / L, atol=0.1 if kind == "pomfq_for" else 0)  # agent 0 observes nobody
    assert (records[1] is not None) == (kind == "gamfq")


def test_mfq_mean_uses_only_observed_teammates():
    learner = _learner("mfq")
    rng = np.random.default_rng(21)
    view = team_view(learner, rng)
    actions = np.array([0, 1, 2, 3, 3])
    means, _ = ln.estimate_means(learner, view, actions, rng)
    assert np.array_equal(means[2], est.global_mean(est.one_hot([0, 1], L)))


def test_gamfq_gradient_reaches_graph_module():
    learner = _learner("gamfq", seed=5)
    rng = np.random.default_rng(22)
    items = []
    for _ in range(6):
        view = team_view(learner, rng)
        actions = rng.integers(L, size=5)
        means, records = ln.estimate_means(learner, view, actions, rng)
        for j in range(1, 5):
            items.append(ln.Transition(view.obs[j], int(actions[j]), float(rng.normal()), rng.normal(size=F),
                                       means[j], False, records[j]))
    batch = ln.Batch.stack(items)
    tape = Tape()
    mean = ln._train_means(learner, batch, tape, np.random.default_rng(0))
    y = ln.td_target(learner, batch, means=mean.data)
    q = learner.q_forward(learner.q.bind(tape), batch.obs, mean)
    tape.backward(ad.mean_all(ad.square(ad.sub(ad.pick(q, batch.actions), ad.constant(y)))))
    assert learner.graph.store.grad_norm("graph_attention/edge") > 0
    assert learner.graph.store.grad_norm("graph_attention/encoder") > 0


def test_unknown_kind_rejected():
    with pytest.raises(ln.LearnerError):
        ln.make_learner("dqn", F, L, 0)


# --------------------------------------------------------------- checkpoint

@pytest.mark.parametrize("kind", ln.LEARNER_KINDS)
def test_learner_checkpoint_roundtrip(kind, tmp_path):
    learner = _learner(kind, batch_size=4)
    for t in _transitions(np.random.default_rng(23), 8):
        learner.buffer.add(t)
    if kind != "gamfq":
        ln.update(learner, np.random.default_rng(0))
    path = learner.save(tmp_path / "x.ckpt", "abc", {"episode": 3})
    again, header = ln.Learner.load(path)
    assert header["meta"]["episode"] == 3 and header["meta"]["learner_kind"] == kind
    for name, store in learner.stores().items():
        other = again.stores()[name]
        assert store.step == other.step
        assert all(np.array_equal(store[k], other[k]) for k in store.names())
        assert all(np.array_equal(store.m[k], other.m[k]) for k in store.names())
