"""Self-play training loop.

Both teams of a scenario learn at once, each with its own shared-parameter
learner. Every episode draws its random streams from ``(seed, episode, tag)``
so a resumed run replays exactly the episodes an uninterrupted run would.
"""

from __future__ import annotations

import csv
import dataclasses
import pickle
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gamfq import estimators as est
from gamfq import learners as ln
from gamfq.engine import ScenarioSpec, WorldState, build_scenario, make_rng, observe_team, step, winner

METRIC_COLUMNS = [
    "episode", "epsilon", "steps", "reward_a", "reward_b", "survivors_a", "survivors_b",
    "kills_a", "kills_b", "winner", "updates", "loss_a", "loss_b", "actor_loss_a", "actor_loss_b",
]
TEAM_LETTERS = ("A", "B")
UPDATE_EVERY = 4
# stream tags for make_rng(seed, episode, tag + team)
ACT_TAG, MEAN_TAG, UPDATE_TAG, INIT_TAG = 100, 200, 300, 400


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    pass


def scenario_hash(spec: ScenarioSpec) -> str:
    """Hash identifying a scenario up to its seed (checkpoints transfer across seeds)."""
    return replace(spec, rng_seed=0).spec_hash()


@dataclass
class TrainConfig:
    spec: ScenarioSpec
    kind: str = "gamfq"
    epochs: int = 2000
    episode_length: int | None = None
    lr: float = 1e-4
    gamma: float = 0.95
    buffer_size: int = 1024
    batch_size: int = 64
    gat_hidden: int = 64
    hidden: int = 64
    epsilon_start: float = 1.0
    epsilon_end: float = 0.0
    seed: int = 0
    checkpoint_interval: int = 0
    out_dir: Path = Path("run")
    update_every: int = UPDATE_EVERY
    scenario_path: Path | None = None

    def __post_init__(self):
        if self.kind not in ln.LEARNER_KINDS:
            raise TrainingError(f"unknown learner kind {self.kind!r}")
        for name in ("epochs", "lr", "gamma", "buffer_size", "batch_size", "gat_hidden", "hidden", "update_every"):
            if not getattr(self, name) > 0:
                raise TrainingError(f"{name} must be positive")
        if self.episode_length is not None and self.episode_length < 1:
            raise TrainingError("episode_length must be positive")
        if self.checkpoint_interval < 0:
            raise TrainingError("checkpoint_interval must be non-negative")
        self.out_dir = Path(self.out_dir)

    @property
    def world_spec(self) -> ScenarioSpec:
        spec = self.spec
        if self.episode_length is not None:
            spec = replace(spec, episode_length=self.episode_length)
        return replace(spec, rng_seed=self.seed)

    def epsilon(self, episode: int) -> float:
        frac = 1.0 - ln.epsilon_at(episode, self.epochs)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    def learner_config(self) -> ln.LearnerConfig:
        s = self.spec
        return ln.LearnerConfig(
            kind=self.kind, obs_dim=s.obs_dim, n_actions=s.n_actions, hidden=self.hidden,
            gat_hidden=self.gat_hidden, lr=self.lr, gamma=self.gamma, batch_size=self.batch_size,
            buffer_size=self.buffer_size, obs_radius=s.obs_radius, max_neighbors=s.max_visible_neighbors,
        )

    @classmethod
    def from_training_section(cls, spec: ScenarioSpec, section: dict[str, str], **overrides) -> "TrainConfig":
        """Build from a config file's raw ``[training]`` key/value strings."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        casts = {"int": int, "float": float, "str": str, "int | None": int}
        kwargs = {}
        for key, raw in section.items():
            key = {"alg": "kind", "learner": "kind"}.get(key, key)
            if key not in types or key in ("spec", "out_dir", "scenario_path"):
                raise TrainingError(f"[training] unknown key {key!r}")
            try:
                kwargs[key] = casts[types[key]](raw)
            except (KeyError, ValueError) as exc:
                raise TrainingError(f"[training] {key}: cannot parse {raw!r}") from exc
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(spec=spec, **kwargs)


@dataclass
class EpisodeMetrics:
    episode: int
    epsilon: float
    steps: int
    reward: list[float]
    survivors: tuple[int, int]
    kills: list[int]
    winner: int | None
    updates: int
    loss: list[float]
    actor_loss: list[float]

    def row(self) -> list[str]:
        w = "draw" if self.winner is None else TEAM_LETTERS[self.winner]
        vals = [self.episode, repr(self.epsilon), self.steps, repr(self.reward[0]), repr(self.reward[1]),
                self.survivors[0], self.survivors[1], self.kills[0], self.kills[1], w, self.updates,
                repr(self.loss[0]), repr(self.loss[1]), repr(self.actor_loss[0]), repr(self.actor_loss[1])]
        return [str(v) for v in vals]


@dataclass
class TrainRun:
    config: TrainConfig
    learners: list[ln.Learner]
    metrics: list[EpisodeMetrics] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    next_episode: int = 0

    @property
    def metrics_path(self) -> Path:
        return self.config.out_dir / "metrics.csv"

    def team_rewards(self, team: int = 0) -> np.ndarray:
        return np.array([m.reward[team] for m in self.metrics])


# ------------------------------------------------------------ episode rollout

def team_view(world: WorldState, team: int):
    """Living ``ids``, stacked observations, and each agent's observed teammates.

    Neighbours are returned as row indices into ``ids`` (nearest first) with
    their centre offsets; enemies are left out.
    """
    ids, views = observe_team(world, team)
    row = {aid: k for k, aid in enumerate(ids)}
    obs = np.stack([v.flat() for v in views]) if views else np.zeros((0, world.spec.obs_dim))
    neighbors, offsets = [], []
    for v in views:
        keep = [k for k, nid in enumerate(v.neighbor_ids) if int(nid) in row]
        neighbors.append(np.array([row[int(v.neighbor_ids[k])] for k in keep], dtype=np.int64))
        offsets.append(v.neighbor_offsets[keep].reshape(-1, 2))
    return ids, obs, neighbors, offsets


class TeamRollout:
    """Per-team recurrent state and previous mean actions across one episode."""

    def __init__(self, learner: ln.Learner, team_size: int, ids: list[int]):
        self.learner = learner
        L = learner.config.n_actions
        self.row_of = {aid: k for k, aid in enumerate(ids)}
        self.prev_mean = np.tile(est.uniform(L), (team_size, 1))
        if learner.graph is not None:
            self.h, self.c = learner.graph.initial_state(team_size)

    def prepare(self, ids: list[int], obs, neighbors, offsets) -> ln.TeamView:
        view = ln.TeamView(obs, neighbors, offsets)
        if self.learner.graph is not None:
            rows = [self.row_of[a] for a in ids]
            snap = ln.TeamSnapshot(obs, self.h[rows].copy(), self.c[rows].copy())
            m, (h, c) = est.encode_obs(self.learner.graph, obs, (snap.h, snap.c))
            self.h[rows], self.c[rows] = h, c
            view.messages, view.snapshot = m, snap
        return view

    def prev(self, ids: list[int]) -> np.ndarray:
        return self.prev_mean[[self.row_of[a] for a in ids]]

    def remember(self, ids: list[int], means: np.ndarray) -> None:
        for k, a in enumerate(ids):
            self.prev_mean[self.row_of[a]] = means[k]


def _dump_batch(out_dir: Path, learner: ln.Learner, episode: int, team: int, rng_state) -> Path:
    path = out_dir / f"nan_dump_{TEAM_LETTERS[team]}_{episode}.pkl"
    with path.open("wb") as fh:
        pickle.dump({"episode": episode, "team": team, "rng_state": rng_state,
                     "buffer": learner.buffer, "stores": learner.stores()}, fh)
    return path


def _update_team(config: TrainConfig, learner: ln.Learner, rng: np.random.Generator,
                 episode: int, team: int, losses: list) -> None:
    if len(learner.buffer) < learner.config.batch_size:
        return
    state = rng.bit_generator.state
    critic, actor = ln.update(learner, rng)
    if not (np.isfinite(critic) and np.isfinite(actor)):
        dump = _dump_batch(config.out_dir, learner, episode, team, state)
        raise TrainingDiverged(f"non-finite loss for team {TEAM_LETTERS[team]} in episode {episode}; "
                               f"state dumped to {dump}")
    losses.append((critic, actor))


def run_episode(config: TrainConfig, learners: list[ln.Learner], episode: int,
                train: bool = True) -> EpisodeMetrics:
    spec = config.world_spec
    world = build_scenario(spec, episode)
    eps = config.epsilon(episode)
    act_rng = [make_rng(config.seed, episode, ACT_TAG + t) for t in (0, 1)]
    mean_rng = [make_rng(config.seed, episode, MEAN_TAG + t) for t in (0, 1)]
    upd_rng = [make_rng(config.seed, episode, UPDATE_TAG + t) for t in (0, 1)]
    rollouts = [TeamRollout(learners[t], spec.team(t).count, world.team_ids(t, alive_only=False)) for t in (0, 1)]
    reward = [0.0, 0.0]
    kills = [0, 0]
    losses: list[list] = [[], []]
    n_updates = 0

    current = [team_view(world, t) for t in (0, 1)]
    while not world.terminal:
        views, actions, joint = [], [], {}
        for t in (0, 1):
            ids, obs, nbrs, offs = current[t]
            views.append(rollouts[t].prepare(ids, obs, nbrs, offs))
            a = ln.act(learners[t], obs, rollouts[t].prev(ids), eps, act_rng[t])
            actions.append(a)
            joint.update({aid: int(a[k]) for k, aid in enumerate(ids)})
        outcome = step(world, joint)
        for killer, _victim in outcome.kill_events:
            kills[world.agents[killer].team_id] += 1
        nxt = [team_view(world, t) for t in (0, 1)]
        for t in (0, 1):
            ids, obs, _, _ = current[t]
            means, records = ln.estimate_means(learners[t], views[t], actions[t], mean_rng[t])
            rollouts[t].remember(ids, means)
            reward[t] += float(sum(outcome.rewards[a] for a in ids))
            if not train:
                continue
            next_rows = {aid: k for k, aid in enumerate(nxt[t][0])}
            for k, aid in enumerate(ids):
                alive = aid in next_rows
                terminal = outcome.terminal or not alive
                next_obs = nxt[t][1][next_rows[aid]] if alive else obs[k]
                learners[t].buffer.add(ln.Transition(obs[k], int(actions[t][k]), float(outcome.rewards[aid]),
                                                     next_obs, means[k], terminal, records[k]))
        current = nxt
        if train and world.step_index % config.update_every == 0:
            for t in (0, 1):
                _update_team(config, learners[t], upd_rng[t], episode, t, losses[t])
    if train:
        for t in (0, 1):
            _update_team(config, learners[t], upd_rng[t], episode, t, losses[t])
        n_updates = len(losses[0]) + len(losses[1])

    def avg(rows, i):
        return float(np.mean([r[i] for r in rows])) if rows else 0.0

    return EpisodeMetrics(
        episode=episode, epsilon=eps, steps=world.step_index, reward=reward, survivors=world.survivors(),
        kills=kills, winner=winner(world), updates=n_updates,
        loss=[avg(losses[0], 0), avg(losses[1], 0)], actor_loss=[avg(losses[0], 1), avg(losses[1], 1)],
    )


# --------------------------------------------------------------- checkpoints

def checkpoint_path(out_dir: Path, kind: str, team: int, episode: int) -> Path:
    return Path(out_dir) / f"{kind}_{TEAM_LETTERS[team]}_{episode}.ckpt"


def resume_state_path(out_dir: Path, episode: int) -> Path:
    return Path(out_dir) / f"resume_{episode}.state"


def _save_all(run: TrainRun, episode: int) -> list[Path]:
    cfg = run.config
    paths = []
    for t, learner in enumerate(run.learners):
        meta = {"team": TEAM_LETTERS[t], "episode": episode, "epochs": cfg.epochs, "seed": cfg.seed,
                "epsilon_next": cfg.epsilon(episode + 1) if episode + 1 < cfg.epochs else cfg.epsilon_end}
        p = learner.save(checkpoint_path(cfg.out_dir, cfg.kind, t, episode), scenario_hash(cfg.spec), meta)
        paths.append(p)
    with resume_state_path(cfg.out_dir, episode).open("wb") as fh:
        pickle.dump({"episode": episode, "buffers": [lr.buffer for lr in run.learners]}, fh)
    run.checkpoints.extend(paths)
    return paths


def _write_metrics(run: TrainRun, rows: list[EpisodeMetrics], append: bool) -> None:
    path = run.metrics_path
    fresh = not append or not path.exists()
    with path.open("w" if fresh else "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(METRIC_COLUMNS)
        for m in rows:
            w.writerow(m.row())


def _log_timing(out_dir: Path, episode: int, seconds: float, fresh: bool) -> None:
    with (out_dir / "timing.csv").open("w" if fresh else "a", encoding="utf-8") as fh:
        if fresh:
            fh.write("episode,wall_seconds\n")
        fh.write(f"{episode},{seconds:.6f}\n")


def _loop(run: TrainRun, stop: int, append: bool) -> TrainRun:
    cfg = run.config
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if not append:
        _write_metrics(run, [], append=False)
    fresh_timing = not append
    for e in range(run.next_episode, stop):
        t0 = time.perf_counter()
        m = run_episode(cfg, run.learners, e)
        run.metrics.append(m)
        _write_metrics(run, [m], append=True)
        _log_timing(cfg.out_dir, e, time.perf_counter() - t0, fresh_timing)
        fresh_timing = False
        run.next_episode = e + 1
        last = e == cfg.epochs - 1 or e == stop - 1
        if last or (cfg.checkpoint_interval and (e + 1) % cfg.checkpoint_interval == 0):
            _save_all(run, e)
    return run


def new_learners(config: TrainConfig) -> list[ln.Learner]:
    lc = config.learner_config()
    return [ln.Learner(lc, make_rng(config.seed, 0, INIT_TAG + t)) for t in (0, 1)]


def train(config: TrainConfig, stop_after: int | None = None) -> TrainRun:
    """Train from scratch; ``stop_after`` ends early (after that many episodes) with a checkpoint."""
    run = TrainRun(config, new_learners(config))
    stop = config.epochs if stop_after is None else min(stop_after, config.epochs)
    return _loop(run, stop, append=False)


def resume(checkpoint: str | Path, config: TrainConfig) -> TrainRun:
    """Continue from a team-A or team-B checkpoint written by :func:`train`.

    Parameters and optimizer moments come from the pair of checkpoints; replay
    buffers come from the matching resume-state file when it exists.
    """
    checkpoint = Path(checkpoint)
    _, header = ln.Learner.load(checkpoint)
    meta = header["meta"]
    if header["scenario_hash"] != scenario_hash(config.spec):
        raise TrainingError("checkpoint was trained on a different scenario")
    if meta.get("learner_kind") != config.kind:
        raise TrainingError(f"checkpoint holds a {meta.get('learner_kind')} learner, config asks for {config.kind}")
    episode = int(meta["episode"])
    learners = []
    for t in (0, 1):
        p = checkpoint.parent / f"{config.kind}_{TEAM_LETTERS[t]}_{episode}.ckpt"
        learner, h = ln.Learner.load(p)
        if h["scenario_hash"] != scenario_hash(config.spec):
            raise TrainingError(f"{p.name} was trained on a different scenario")
        learners.append(learner)
    state = resume_state_path(checkpoint.parent, episode)
    if state.exists():
        with state.open("rb") as fh:
            saved = pickle.load(fh)
        for learner, buf in zip(learners, saved["buffers"]):
            learner.buffer = buf
    run = TrainRun(config, learners, next_episode=episode + 1)
    return _loop(run, config.epochs, append=True)


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
