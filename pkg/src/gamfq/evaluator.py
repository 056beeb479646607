"""Faceoffs, ELO ratings, least-squares trend fits and mean-action gap reports."""

from __future__ import annotations

import copy
import csv
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gamfq import estimators as est
from gamfq import learners as ln
from gamfq.engine import ScenarioSpec, WorldState, build_scenario, make_rng, step, winner
from gamfq.render import ReplayWriter
from gamfq.trainer import TEAM_LETTERS, TeamRollout, scenario_hash, team_view

ELO_K = 32.0
ELO_INITIAL = 1000.0
POLICY_TAG, MEAN_TAG, BOOT_TAG = 500, 600, 700


class EvaluationError(ValueError):
    pass


# ------------------------------------------------------------------ policies

class Policy:
    """Controls one team for one round. ``begin`` resets any per-round state."""

    name = "policy"

    def begin(self, world: WorldState, team: int) -> None:
        self.team = team

    def choose(self, world: WorldState, rng: np.random.Generator) -> dict[int, int]:
        raise NotImplementedError

    def after_step(self, world: WorldState, rng: np.random.Generator) -> None:
        pass


class RandomPolicy(Policy):
    name = "random"

    def choose(self, world, rng):
        ids = world.team_ids(self.team)
        acts = rng.integers(world.spec.n_actions, size=len(ids))
        return {a: int(x) for a, x in zip(ids, acts)}


class StayPolicy(Policy):
    name = "stay"

    def choose(self, world, rng):
        return {a: 0 for a in world.team_ids(self.team)}


class AttackNearestPolicy(Policy):
    """Attack an adjacent enemy if possible, otherwise step towards the nearest one."""

    name = "attack_nearest"

    def choose(self, world, rng):
        out = {}
        enemies = [world.agents[i] for i in world.team_ids(1 - self.team)]
        occ = world.occupancy
        H, W = occ.shape
        for aid in world.team_ids(self.team):
            me = world.agents[aid]
            cls = me.agent_class
            out[aid] = 0
            chosen = None
            for k, (ox, oy) in enumerate(cls.attack_offsets):
                tx, ty = me.x + ox, me.y + oy
                if 0 <= tx < W and 0 <= ty < H and occ[ty, tx] >= 0 and world.agents[occ[ty, tx]].team_id != me.team_id:
                    chosen = cls.n_moves + k
                    break
            if chosen is None and enemies:
                centres = np.array([e.center for e in enemies])
                off = (me.side - 1) / 2.0
                best = None
                for k, (dx, dy) in enumerate(cls.move_offsets):
                    nx, ny = me.x + dx, me.y + dy
                    if not (0 <= nx <= W - me.side and 0 <= ny <= H - me.side):
                        continue
                    block = occ[ny:ny + me.side, nx:nx + me.side]
                    if ((block >= 0) & (block != aid)).any():
                        continue
                    d = np.min(((centres - (nx + off, ny + off)) ** 2).sum(axis=1))
                    if best is None or d < best[0] - 1e-12:
                        best = (d, k)
                chosen = 0 if best is None else best[1]
            out[aid] = int(chosen if chosen is not None else 0)
        return out


class LearnerPolicy(Policy):
    """A trained learner acting with ``epsilon = 0``.

    ``greedy`` takes the argmax of Q (of the actor for MFAC); otherwise
    actions are sampled from the Boltzmann policy.
    """

    def __init__(self, learner: ln.Learner, name: str | None = None, greedy: bool = True):
        self.learner = learner
        self.name = name or learner.kind
        self.greedy = greedy

    def begin(self, world, team):
        self.team = team
        self.rollout = TeamRollout(self.learner, world.spec.team(team).count,
                                   world.team_ids(team, alive_only=False))

    def choose(self, world, rng):
        ids, obs, nbrs, offs = team_view(world, self.team)
        self._view = self.rollout.prepare(ids, obs, nbrs, offs)
        self._ids = ids
        self._acts = ln.act(self.learner, obs, self.rollout.prev(ids), 0.0, rng, greedy=self.greedy)
        return {a: int(x) for a, x in zip(ids, self._acts)}

    def after_step(self, world, rng):
        means, _ = ln.estimate_means(self.learner, self._view, self._acts, rng)
        self.rollout.remember(self._ids, means)


@dataclass
class Participant:
    """An algorithm entered in a faceoff: one policy per training group (A plays team 0)."""
    name: str
    group_a: Policy
    group_b: Policy

    @classmethod
    def single(cls, policy: Policy, name: str | None = None) -> "Participant":
        return cls(name or policy.name, policy, policy)


def load_participant(checkpoint: str | Path, spec: ScenarioSpec | None = None, name: str | None = None,
                     greedy: bool = True) -> Participant:
    """Load ``<alg>_A_<ep>.ckpt`` (or ``_B_``) and its sibling group if present."""
    path = Path(checkpoint)
    learner, header = ln.Learner.load(path)
    if spec is not None and header["scenario_hash"] != scenario_hash(spec):
        raise EvaluationError(f"{path.name} was trained on a different scenario")
    if spec is not None and (learner.config.obs_dim != spec.obs_dim or learner.config.n_actions != spec.n_actions):
        raise EvaluationError(f"{path.name} does not fit the scenario's observation/action sizes")
    team = header["meta"].get("team", "A")
    other = "B" if team == "A" else "A"
    sibling = path.with_name(path.name.replace(f"_{team}_", f"_{other}_", 1))
    mine = LearnerPolicy(learner, greedy=greedy)
    theirs = mine
    if sibling != path and sibling.exists():
        theirs = LearnerPolicy(ln.Learner.load(sibling)[0], greedy=greedy)
    name = name or learner.kind
    return Participant(name, mine, theirs) if team == "A" else Participant(name, theirs, mine)


# -------------------------------------------------------------------- rounds

def play_round(spec: ScenarioSpec, policies: tuple[Policy, Policy], round_index: int, seed_base: int,
               replay_path: str | Path | None = None) -> tuple[int | None, WorldState]:
    """One episode between two team policies; returns ``(winning team or None, final world)``."""
    world = build_scenario(replace(spec, rng_seed=seed_base), round_index)
    rngs = [make_rng(seed_base, round_index, POLICY_TAG + t) for t in (0, 1)]
    mrngs = [make_rng(seed_base, round_index, MEAN_TAG + t) for t in (0, 1)]
    policies = tuple(copy.copy(p) for p in policies)  # per-round state must not leak between sides
    for t in (0, 1):
        policies[t].begin(world, t)
    writer = ReplayWriter(replay_path, world) if replay_path is not None else None
    try:
        while not world.terminal:
            joint = {}
            for t in (0, 1):
                joint.update(policies[t].choose(world, rngs[t]))
            outcome = step(world, joint)
            if writer is not None:
                writer.record(world, joint, outcome)
            for t in (0, 1):
                policies[t].after_step(world, mrngs[t])
    finally:
        if writer is not None:
            writer.close()
    return winner(world), world


@dataclass
class FaceoffPlan:
    spec: ScenarioSpec
    x: Participant
    y: Participant
    rounds: int = 1000
    seed_base: int = 0

    def __post_init__(self):
        if self.rounds < 2 or self.rounds % 2:
            raise EvaluationError("rounds must be a positive even number")

    def pairing(self, r: int) -> tuple[Policy, Policy, bool]:
        """Team policies for round ``r`` and whether ``x`` holds team 0."""
        if r < self.rounds // 2:
            return self.x.group_a, self.y.group_b, True
        return self.y.group_a, self.x.group_b, False


@dataclass
class FaceoffResult:
    x: str
    y: str
    outcomes: list[str]  # per round: "x", "y" or "draw"
    wins: int
    draws: int
    losses: int
    win_rate: float
    half_rates: tuple[float, float]
    half_std: float
    bootstrap_std: float
    ratings: tuple[float, float] = (ELO_INITIAL, ELO_INITIAL)

    @property
    def rounds(self) -> int:
        return len(self.outcomes)


def _round_job(args) -> str:
    plan, r = args
    px, py, x_first = plan.pairing(r)
    w, _ = play_round(plan.spec, (px, py), r, plan.seed_base)
    if w is None:
        return "draw"
    return "x" if (w == 0) == x_first else "y"


def faceoff(plan: FaceoffPlan, workers: int = 1) -> FaceoffResult:
    jobs = [(plan, r) for r in range(plan.rounds)]
    if workers <= 1:
        outcomes = [_round_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_round_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    scores = np.array([{"x": 1.0, "draw": 0.5, "y": 0.0}[o] for o in outcomes])
    half = plan.rounds // 2
    halves = (float(scores[:half].mean()), float(scores[half:].mean()))
    boot_rng = make_rng(plan.seed_base, plan.rounds, BOOT_TAG)
    boots = [scores[boot_rng.integers(len(scores), size=len(scores))].mean() for _ in range(10)]
    rx, ry = Rating(), Rating()
    for o in outcomes:
        rx, ry = elo_update(rx, ry, {"x": "win", "draw": "draw", "y": "loss"}[o])
    return FaceoffResult(
        x=plan.x.name, y=plan.y.name, outcomes=outcomes,
        wins=outcomes.count("x"), draws=outcomes.count("draw"), losses=outcomes.count("y"),
        win_rate=float(scores.mean()), half_rates=halves, half_std=float(np.std(halves)),
        bootstrap_std=float(np.std(boots)), ratings=(rx.value, ry.value),
    )


# ----------------------------------------------------------------------- ELO

@dataclass(frozen=True)
class Rating:
    value: float = ELO_INITIAL
    games: int = 0
    k: float = ELO_K

    def __post_init__(self):
        if self.k <= 0:
            raise EvaluationError("K must be positive")


def expected_scores(r1: float, r2: float) -> tuple[float, float]:
    e1 = 1.0 / (1.0 + 10.0 ** ((r2 - r1) / 400.0))
    return e1, 1.0 - e1


def elo_update(r1: Rating, r2: Rating, outcome: str) -> tuple[Rating, Rating]:
    """``outcome`` is ``"win"``, ``"draw"`` or ``"loss"`` from side 1's point of view."""
    s1 = {"win": 1.0, "draw": 0.5, "loss": 0.0}.get(outcome)
    if s1 is None:
        raise EvaluationError(f"unknown outcome {outcome!r}")
    e1, e2 = expected_scores(r1.value, r2.value)
    return (replace(r1, value=r1.value + r1.k * (s1 - e1), games=r1.games + 1),
            replace(r2, value=r2.value + r2.k * ((1.0 - s1) - e2), games=r2.games + 1))


@dataclass
class TournamentResult:
    ratings: dict[str, Rating]
    pairs: list[FaceoffResult] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rpath, ppath = out_dir / "ratings.csv", out_dir / "pairs.csv"
        with rpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm", "rating", "games"])
            for name, r in self.ratings.items():
                w.writerow([name, f"{r.value:.4f}", r.games])
        with ppath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm1", "algorithm2", "score1", "score2", "wins1", "draws", "wins2",
                        "win_rate1", "half_std", "bootstrap_std"])
            for p in self.pairs:
                w.writerow([p.x, p.y, f"{p.ratings[0]:.4f}", f"{p.ratings[1]:.4f}", p.wins, p.draws, p.losses,
                            f"{p.win_rate:.6f}", f"{p.half_std:.6f}", f"{p.bootstrap_std:.6f}"])
        return rpath, ppath


def tournament(participants: list[Participant], spec: ScenarioSpec, rounds: int = 1000, seed_base: int = 0,
               workers: int = 1) -> TournamentResult:
    """Faceoff for every unordered pair, then one sequential ELO pass over all rounds."""
    if len(participants) < 2:
        raise EvaluationError("a tournament needs at least two participants")
    names = [p.name for p in participants]
    if len(set(names)) != len(names):
        raise EvaluationError("participant names must be unique")
    ratings = {n: Rating() for n in names}
    pairs = []
    for x, y in itertools.combinations(participants, 2):
        res = faceoff(FaceoffPlan(spec, x, y, rounds, seed_base), workers)
        rx, ry = ratings[x.name], ratings[y.name]
        for o in res.outcomes:
            rx, ry = elo_update(rx, ry, {"x": "win", "draw": "draw", "y": "loss"}[o])
        ratings[x.name], ratings[y.name] = rx, ry
        res.ratings = (rx.value, ry.value)
        pairs.append(res)
    return TournamentResult(ratings, pairs)


# ------------------------------------------------------------------- fitting

def fit_least_squares(points) -> tuple[float, float]:
    """Ordinary least-squares line ``y = slope * x + intercept``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if len(pts) < 2:
        raise EvaluationError("need at least two points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise EvaluationError("all x values are equal")
    slope = float(dx @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


# ------------------------------------------------------------ gap statistics

GAP_COLUMNS = ["episode", "step", "agent", "team", "n_observed", "n_selected", "gap"]


def mean_action_gap_report(spec: ScenarioSpec, episodes: int, out_path: str | Path,
                           learner: ln.Learner | None = None, seed: int = 0, max_steps: int | None = None,
                           actions_fn=None, bins: int = 20) -> list[dict]:
    """``|ã − ā|∞`` between each agent's estimated mean action and its whole team's.

    ``ã`` is the GAMFQ masked mean over observed teammates when ``learner``
    is a GAMFQ learner (a full mask otherwise); ``ā`` averages every other
    living teammate. Actions come from ``learner`` (greedy) on both teams, or
    from ``actions_fn(world, rng)``, or uniformly at random.
    """
    L = spec.n_actions
    rows: list[dict] = []
    for e in range(episodes):
        world = build_scenario(replace(spec, rng_seed=seed), e)
        rng = make_rng(seed, e, POLICY_TAG)
        mrng = make_rng(seed, e, MEAN_TAG)
        rollouts = None
        if learner is not None:
            rollouts = [TeamRollout(learner, spec.team(t).count, world.team_ids(t, alive_only=False)) for t in (0, 1)]
        limit = spec.episode_length if max_steps is None else max_steps
        while not world.terminal and world.step_index < limit:
            views = [team_view(world, t) for t in (0, 1)]
            joint, prepared = {}, []
            for t in (0, 1):
                ids, obs, nbrs, offs = views[t]
                if rollouts is not None:
                    prepared.append(rollouts[t].prepare(ids, obs, nbrs, offs))
                    a = ln.act(learner, obs, rollouts[t].prev(ids), 0.0, rng, greedy=True)
                    joint.update({i: int(x) for i, x in zip(ids, a)})
            if rollouts is None:
                joint = actions_fn(world, rng) if actions_fn else {
                    i: int(rng.integers(L)) for i in world.alive_ids}
            for t in (0, 1):
                ids, obs, nbrs, offs = views[t]
                acts = np.array([joint[i] for i in ids], dtype=np.int64)
                if rollouts is not None:
                    est_means, recs = ln.estimate_means(learner, prepared[t], acts, mrng)
                    rollouts[t].remember(ids, est_means)
                if learner is not None and learner.kind == "gamfq":
                    selected = [int(r.mask.sum()) for r in recs]
                else:
                    est_means = np.stack([est.global_mean(est.one_hot(acts[nb], L), L) for nb in nbrs]) \
                        if ids else np.zeros((0, L))
                    selected = [len(nb) for nb in nbrs]
                onehot = est.one_hot(acts, L)
                total = onehot.sum(axis=0)
                for k, aid in enumerate(ids):
                    others = len(ids) - 1
                    full = (total - onehot[k]) / others if others else est.uniform(L)
                    rows.append({"episode": e, "step": world.step_index, "agent": aid, "team": t,
                                 "n_observed": len(nbrs[k]), "n_selected": selected[k],
                                 "gap": float(np.max(np.abs(est_means[k] - full)))})
            step(world, joint)
    out_path = Path(out_path)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, GAP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "gap": repr(r["gap"])})
    gaps = np.array([r["gap"] for r in rows]) if rows else np.zeros(0)
    counts, edges = np.histogram(gaps, bins=bins, range=(0.0, 1.0))
    with out_path.with_name(out_path.stem + "_histogram.csv").open("w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo:.4f},{hi:.4f},{c}\n")
    return rows


def export_replay(spec: ScenarioSpec, x: Policy, y: Policy, path: str | Path, round_index: int = 0,
                  seed_base: int = 0) -> int | None:
    """Play one round and write its replay log; returns the winning team."""
    w, _ = play_round(spec, (x, y), round_index, seed_base, replay_path=path)
    return w


def team_letter(team: int | None) -> str:
    return "draw" if team is None else TEAM_LETTERS[team]
