"""MFQ, MFAC, POMFQ(FOR) and GAMFQ learners.

All four share one Q-network shape ``Q(o, ā) -> R^L``, a Boltzmann
policy, TD backups against a soft-updated target network, and a FIFO replay
buffer. They differ only in how the neighbourhood mean action ``ā`` is
estimated (and MFAC adds a softmax actor).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gamfq import estimators as est
from gamfq.nncore import autodiff as ad
from gamfq.nncore.autodiff import Tape, Tensor
from gamfq.nncore.checkpoint import load_checkpoint, restore_store, save_checkpoint, store_arrays
from gamfq.nncore.layers import mlp
from gamfq.nncore.params import BoundParams, ParamStore, adam_step, soft_update

LEARNER_KINDS = ("mfq", "mfac", "pomfq_for", "gamfq")
ESTIMATOR_OF = {"mfq": "global_mean", "mfac": "global_mean", "pomfq_for": "dirichlet_mean", "gamfq": "masked_mean"}
Q_LAYERS = ["q/fc1", "q/fc2", "q/out"]
ACTOR_LAYERS = ["actor/fc1", "actor/fc2", "actor/out"]


class LearnerError(ValueError):
    pass


@dataclass
class LearnerConfig:
    kind: str
    obs_dim: int
    n_actions: int
    hidden: int = 64
    gat_hidden: int = 64
    lr: float = 1e-4
    gamma: float = 0.95
    beta: float = 1.0
    tau: float = 0.01
    batch_size: int = 64
    buffer_size: int = 1024
    actor_temperature: float = 0.1
    dirichlet_eta: float = 1.0
    dirichlet_samples: int = 100
    obs_radius: float = 6.0
    max_neighbors: int = 20

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")


def boltzmann_policy(qvals, beta: float = 1.0) -> np.ndarray:
    """``softmax(beta * Q)`` over the last axis (higher Q is more probable)."""
    q = np.asarray(qvals, dtype=np.float64)
    if q.size == 0 or q.shape[-1] == 0:
        raise LearnerError("empty Q-value vector")
    if beta < 0:
        raise LearnerError("beta must be non-negative")
    z = beta * q
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def epsilon_at(episode: int, total_episodes: int) -> float:
    """Linear exploration schedule: 1 at episode 0, decreasing by 1/total per episode."""
    return min(1.0, max(0.0, 1.0 - episode / total_episodes))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# --------------------------------------------------------------- replay data

@dataclass
class TeamSnapshot:
    """Per-step team arrays shared by every transition recorded at that step."""
    obs: np.ndarray
    h: np.ndarray | None = None
    c: np.ndarray | None = None


@dataclass
class GraphRecord:
    snapshot: TeamSnapshot
    nodes: np.ndarray  # [n] snapshot rows (self first), -1 = padding
    adjacency: np.ndarray  # [n, n] bool
    neighbor_actions: np.ndarray  # [n-1] action ids, -1 = padding
    mask: np.ndarray | None = None  # selection drawn at acting time


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    mean_action: np.ndarray
    terminal: bool
    graph: GraphRecord | None = None


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform minibatch sampling."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0
        self.total_added = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity
        self.total_added += 1

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        if k > len(self._items):
            raise LearnerError(f"cannot sample {k} from {len(self._items)} transitions")
        return [self._items[i] for i in rng.choice(len(self._items), size=k, replace=False)]

    def stats(self) -> dict:
        return {"size": len(self._items), "capacity": self.capacity, "total_added": self.total_added}


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    means: np.ndarray
    terminal: np.ndarray
    transitions: list[Transition] = field(repr=False, default_factory=list)

    @classmethod
    def stack(cls, items: list[Transition]) -> "Batch":
        if not items:
            raise LearnerError("empty batch")
        widths = {len(t.mean_action) for t in items}
        if len(widths) != 1:
            raise LearnerError("batch mixes action-space sizes")
        return cls(
            obs=np.stack([t.obs for t in items]),
            actions=np.array([t.action for t in items], dtype=np.int64),
            rewards=np.array([t.reward for t in items], dtype=np.float64),
            next_obs=np.stack([t.next_obs for t in items]),
            means=np.stack([t.mean_action for t in items]),
            terminal=np.array([t.terminal for t in items], dtype=bool),
            transitions=items,
        )


def graph_batch(items: list[Transition], n_actions: int):
    """Arrays for recomputing the GAMFQ mean action over a minibatch.

    Node rows are deduplicated across transitions that share a step snapshot:
    returns ``(obs [U, F], h [U, H], c [U, H], node_index [B, n], adjacency,
    valid [B, n-1], actions [B, n-1, L])``.
    """
    recs = [t.graph for t in items]
    # padding nodes are isolated and masked, so trim to the widest real neighbourhood
    n = max(2, 1 + max(int((r.neighbor_actions >= 0).sum()) for r in recs))
    B = len(recs)
    slot: dict[tuple[int, int], int] = {}
    sources: list[tuple[TeamSnapshot, int]] = []
    index = np.full((B, n), -1, dtype=np.int64)
    for b, r in enumerate(recs):
        for k, row in enumerate(r.nodes[:n]):
            if row < 0:
                continue
            key = (id(r.snapshot), int(row))
            if key not in slot:
                slot[key] = len(sources)
                sources.append((r.snapshot, int(row)))
            index[b, k] = slot[key]
    obs = np.stack([s.obs[i] for s, i in sources])
    h = np.stack([s.h[i] for s, i in sources])
    c = np.stack([s.c[i] for s, i in sources])
    adj = np.tile(np.eye(n, dtype=bool), (B, 1, 1))
    na = np.full((B, n - 1), -1, dtype=np.int64)
    for b, r in enumerate(recs):
        m = min(n, r.nodes.shape[0])
        adj[b, :m, :m] = r.adjacency[:m, :m]
        na[b, : m - 1] = r.neighbor_actions[: m - 1]
    valid = (na >= 0).astype(np.float64)
    acts = np.zeros((B, n - 1, n_actions))
    bi, ki = np.nonzero(na >= 0)
    acts[bi, ki, na[bi, ki]] = 1.0
    return obs, h, c, index, adj, valid, acts


# ------------------------------------------------------------------- learner

class Learner:
    def __init__(self, config: LearnerConfig, rng: np.random.Generator):
        self.config = config
        F, L, Hd = config.obs_dim, config.n_actions, config.hidden
        self.q = ParamStore()
        self.q.init_fc("q/fc1", F + L, Hd, rng)
        self.q.init_fc("q/fc2", Hd, Hd, rng)
        self.q.init_fc("q/out", Hd, L, rng)
        self.q_target = self.q.snapshot()
        self.actor: ParamStore | None = None
        if config.kind == "mfac":
            self.actor = ParamStore()
            self.actor.init_fc("actor/fc1", F + L, Hd, rng)
            self.actor.init_fc("actor/fc2", Hd, Hd, rng)
            self.actor.init_fc("actor/out", Hd, L, rng)
        self.graph: est.GraphAttentionNet | None = None
        if config.kind == "gamfq":
            self.graph = est.GraphAttentionNet(F, rng, hidden=config.gat_hidden)
        self.buffer = ReplayBuffer(config.buffer_size)
        self.updates = 0

    @property
    def kind(self) -> str:
        return self.config.kind

    def stores(self) -> dict[str, ParamStore]:
        out = {"q": self.q, "q_target": self.q_target}
        if self.actor is not None:
            out["actor"] = self.actor
        if self.graph is not None:
            out["graph_attention"] = self.graph.store
        return out

    # -- forward passes -------------------------------------------------------

    def q_forward(self, p: BoundParams, obs: np.ndarray, mean: Tensor) -> Tensor:
        x = ad.concat([ad.constant(obs), mean], axis=-1)
        return mlp(p, Q_LAYERS, x)

    def q_values(self, obs: np.ndarray, means: np.ndarray, target: bool = False) -> np.ndarray:
        store = self.q_target if target else self.q
        return self.q_forward(store.bind(), obs, ad.constant(means)).data

    def actor_log_probs(self, p: BoundParams, obs: np.ndarray, mean: np.ndarray) -> Tensor:
        x = ad.constant(np.concatenate([obs, mean], axis=-1))
        logits = mlp(p, ACTOR_LAYERS, x)
        return ad.log_softmax(ad.scale(logits, 1.0 / self.config.actor_temperature))

    def policy(self, obs: np.ndarray, means: np.ndarray) -> np.ndarray:
        if self.kind == "mfac":
            return np.exp(self.actor_log_probs(self.actor.bind(), obs, means).data)
        return boltzmann_policy(self.q_values(obs, means), self.config.beta)

    # -- checkpointing --------------------------------------------------------

    def save(self, path: str | Path, scenario_hash: str, meta: dict | None = None) -> Path:
        arrays = store_arrays(self.stores())
        meta = dict(meta or {})
        meta.update({
            "learner_kind": self.kind,
            "adam_steps": {k: s.step for k, s in self.stores().items()},
            "updates": self.updates,
            "replay": self.buffer.stats(),
        })
        return save_checkpoint(path, arrays, scenario_hash, dataclasses.asdict(self.config), meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Learner", dict]:
        header, arrays = load_checkpoint(path)
        config = LearnerConfig(**header["hyperparameters"])
        learner = cls(config, np.random.default_rng(0))
        for prefix, store in learner.stores().items():
            restore_store(store, prefix, arrays)
            store.step = int(header["meta"]["adam_steps"].get(prefix, 0))
        learner.updates = int(header["meta"].get("updates", 0))
        return learner, header


# ----------------------------------------------------------------- operations

def act(learner: Learner, obs: np.ndarray, prev_means: np.ndarray, epsilon: float,
        rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    """Actions for a batch of agents sharing ``learner``.

    With probability ``epsilon`` an agent acts uniformly at random; otherwise
    it samples the learner's policy. ``greedy`` takes the argmax instead
    (lowest index on ties) and ignores ``epsilon``.
    """
    n, L = obs.shape[0], learner.config.n_actions
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if greedy:
        scores = learner.policy(obs, prev_means) if learner.kind == "mfac" else learner.q_values(obs, prev_means)
        return scores.argmax(axis=1)
    explore = rng.random(n) < epsilon
    random_actions = rng.integers(L, size=n)
    chosen = sample_categorical(learner.policy(obs, prev_means), rng)
    return np.where(explore, random_actions, chosen)


def td_target(learner: Learner, batch: Batch, target: ParamStore | None = None,
              means: np.ndarray | None = None) -> np.ndarray:
    """``y = r + gamma * sum_a' pi(a'|o', ā) Q_target(o', a', ā)``, or ``r`` when terminal."""
    target = learner.q_target if target is None else target
    means = batch.means if means is None else means
    if means.shape[1] != learner.config.n_actions:
        raise LearnerError("mean-action width does not match the action space")
    q_next = learner.q_forward(target.bind(), batch.next_obs, ad.constant(means)).data
    v = (boltzmann_policy(q_next, learner.config.beta) * q_next).sum(axis=1)
    return batch.rewards + learner.config.gamma * np.where(batch.terminal, 0.0, v)


def _train_means(learner: Learner, batch: Batch, tape: Tape | None, rng: np.random.Generator) -> Tensor:
    if learner.kind != "gamfq":
        return ad.constant(batch.means)
    obs, h, c, index, adj, valid, acts = graph_batch(batch.transitions, learner.config.n_actions)
    noise = rng.gumbel(size=valid.shape + (2,))
    return est.gamfq_mean_action(learner.graph.store.bind(tape), learner.graph, obs, h, c, adj, valid, acts,
                                 noise, node_index=index)


def q_update(learner: Learner, batch: Batch | list[Transition], rng: np.random.Generator,
             lr: float | None = None) -> float:
    """One TD step on the Q-network (and the graph module for GAMFQ). Returns the loss."""
    if not isinstance(batch, Batch):
        batch = Batch.stack(batch)
    lr = learner.config.lr if lr is None else lr
    tape = Tape()
    mean = _train_means(learner, batch, tape, rng)
    y = td_target(learner, batch, means=mean.data)
    q = learner.q_forward(learner.q.bind(tape), batch.obs, mean)
    err = ad.sub(ad.pick(q, batch.actions), ad.constant(y))
    loss = ad.mean_all(ad.square(err))
    tape.backward(loss)
    adam_step(learner.q, lr)
    if learner.graph is not None:
        adam_step(learner.graph.store, lr)
    learner.updates += 1
    return float(loss.data)


def actor_update(learner: Learner, batch: Batch, lr: float | None = None) -> float:
    """Policy-gradient step with advantage ``Q(o,a,ā) - sum_a' pi(a') Q(o,a',ā)`` held constant."""
    if learner.kind != "mfac":
        raise LearnerError("actor_update requires an mfac learner")
    lr = learner.config.lr if lr is None else lr
    q = learner.q_values(batch.obs, batch.means)
    tape = Tape()
    logp = learner.actor_log_probs(learner.actor.bind(tape), batch.obs, batch.means)
    pi = np.exp(logp.data)
    q_taken = q[np.arange(len(batch.actions)), batch.actions]
    adv = (pi * (q_taken[:, None] - q)).sum(axis=1)  # exactly zero when Q is flat in the action
    loss = ad.scale(ad.mean_all(ad.mul(ad.pick(logp, batch.actions), ad.constant(adv))), -1.0)
    tape.backward(loss)
    adam_step(learner.actor, lr)
    return float(loss.data)


def mfac_update(learner: Learner, batch: Batch | list[Transition], rng: np.random.Generator,
                lr: float | None = None) -> tuple[float, float]:
    if learner.kind != "mfac":
        raise LearnerError("mfac_update requires an mfac learner")
    if not isinstance(batch, Batch):
        batch = Batch.stack(batch)
    critic = q_update(learner, batch, rng, lr)
    return critic, actor_update(learner, batch, lr)


def update(learner: Learner, rng: np.random.Generator) -> tuple[float, float]:
    """Sample a minibatch and run the learner's update; returns ``(critic, actor)`` losses."""
    batch = Batch.stack(learner.buffer.sample(learner.config.batch_size, rng))
    if learner.kind == "mfac":
        losses = mfac_update(learner, batch, rng)
    else:
        losses = (q_update(learner, batch, rng), 0.0)
    soft_update(learner.q, learner.q_target, learner.config.tau)
    return losses


# ------------------------------------------------------ team mean actions

@dataclass
class TeamView:
    """Everything a team's estimator needs about one step.

    ``neighbors[j]`` lists row indices (into this team's arrays) of the
    teammates agent ``j`` observes, nearest first; ``offsets[j]`` holds their
    centre deltas.
    """
    obs: np.ndarray
    neighbors: list[np.ndarray]
    offsets: list[np.ndarray]
    messages: np.ndarray | None = None
    snapshot: TeamSnapshot | None = None


def estimate_means(learner: Learner, view: TeamView, actions: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, list[GraphRecord | None]]:
    """Mean action for every agent in the team given this step's team actions."""
    cfg = learner.config
    n, L = view.obs.shape[0], cfg.n_actions
    records: list[GraphRecord | None] = [None] * n
    if n == 0:
        return np.zeros((0, L)), records
    if cfg.kind in ("mfq", "mfac"):
        means = np.stack([est.global_mean(est.one_hot(actions[nb], L), L) for nb in view.neighbors])
    elif cfg.kind == "pomfq_for":
        counts = np.stack([np.bincount(actions[nb], minlength=L) for nb in view.neighbors]).astype(np.float64)
        means = est.dirichlet_mean_batch(counts, rng, cfg.dirichlet_eta, cfg.dirichlet_samples)
    else:
        size = max(2, 1 + max(len(nb) for nb in view.neighbors))
        H = cfg.gat_hidden
        msgs = np.zeros((n, size, H))
        adj = np.zeros((n, size, size), dtype=bool)
        valid = np.zeros((n, size - 1))
        nbr_actions = np.full((n, size - 1), -1, dtype=np.int64)
        nodes = np.full((n, size), -1, dtype=np.int64)
        for j, (nb, off) in enumerate(zip(view.neighbors, view.offsets)):
            k = len(nb)
            nodes[j, 0] = j
            nodes[j, 1:k + 1] = nb
            msgs[j, 0] = view.messages[j]
            msgs[j, 1:k + 1] = view.messages[nb]
            adj[j] = est.star_adjacency(off, cfg.obs_radius, size)
            valid[j, :k] = 1.0
            nbr_actions[j, :k] = actions[nb]
        mask = est.edge_select_batch(learner.graph, msgs, adj, rng) * valid
        means = np.empty((n, L))
        for j in range(n):
            k = len(view.neighbors[j])
            means[j] = est.masked_mean(mask[j, :k], est.one_hot(nbr_actions[j, :k], L), L)
            records[j] = GraphRecord(view.snapshot, nodes[j], adj[j], nbr_actions[j], mask[j, :k].copy())
    return means, records


def make_learner(kind: str, obs_dim: int, n_actions: int, seed: int, **overrides) -> Learner:
    cfg = LearnerConfig(kind=kind, obs_dim=obs_dim, n_actions=n_actions, **overrides)
    return Learner(cfg, np.random.default_rng(seed))
