"""Deterministic gridworld combat simulator.

Three scenario kinds share one engine: ``multibattle`` (two equal teams of
2x2 fighters), ``gathering`` (the same plus food cells), and
``predator_prey`` (2x2 predators against 1x1 prey).

A step resolves in three phases: sequential moves in an RNG-permuted order,
simultaneous attacks against post-move positions, then food consumption.
All randomness comes from a counter-based Philox stream keyed by
``(rng_seed, episode_index)``.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

SCENARIO_KINDS = ("multibattle", "gathering", "predator_prey")
TIME_LIMIT = "time_limit"
TEAM_ELIMINATED = "team_eliminated"
MAX_PLACEMENT_ATTEMPTS = 2000
SELF_FEATURES = 5
NEIGHBOR_BASE_FEATURES = 5
FOOD_FEATURES = 3


class ScenarioError(ValueError):
    """Invalid scenario specification."""


class PlacementError(RuntimeError):
    """Agents could not be placed without overlap."""


class StepError(ValueError):
    """Bad joint action or misuse of a world."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based stream for ``(seed, *keys)``; independent of call order elsewhere."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


# ----------------------------------------------------------------- action sets

def _compass_attack_offsets(side: int) -> tuple[tuple[int, int], ...]:
    # the cell just outside the footprint in each of the 8 compass directions
    def edge(d: int) -> int:
        return -1 if d < 0 else (side if d > 0 else 0)

    return tuple((edge(dx), edge(dy)) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0))


def _move_offsets(inside) -> tuple[tuple[int, int], ...]:
    # stay first, then row-major (dy outer, dx inner)
    rest = [(dx, dy) for dy in range(-3, 4) for dx in range(-3, 4) if (dx, dy) != (0, 0) and inside(dx, dy)]
    return ((0, 0), *rest)


BATTLE_MOVES = _move_offsets(lambda dx, dy: abs(dx) + abs(dy) <= 2)
PREY_MOVES = _move_offsets(lambda dx, dy: dx * dx + dy * dy <= 6.25)


@dataclass(frozen=True)
class AgentClass:
    name: str
    role: str  # battle | predator | prey
    footprint_side: int
    max_hp: float
    move_offsets: tuple[tuple[int, int], ...]
    attack_offsets: tuple[tuple[int, int], ...]
    attack_damage: float

    @property
    def n_moves(self) -> int:
        return len(self.move_offsets)

    @property
    def n_actions(self) -> int:
        return len(self.move_offsets) + len(self.attack_offsets)

    def is_attack(self, action: int) -> bool:
        return action >= self.n_moves


BATTLE = AgentClass("battle", "battle", 2, 10.0, BATTLE_MOVES, _compass_attack_offsets(2), 2.0)
PREDATOR = AgentClass("predator", "predator", 2, 10.0, BATTLE_MOVES, _compass_attack_offsets(2), 1.0)
PREY = AgentClass("prey", "prey", 1, 2.0, PREY_MOVES, (), 0.0)
AGENT_CLASSES = {c.name: c for c in (BATTLE, PREDATOR, PREY)}


@dataclass(frozen=True)
class RewardTable:
    move_cost: float = -0.005
    attack_empty_cost: float = -0.1
    attack_hit_reward: float = 0.2
    kill_reward: float = 200.0
    food_reward: float = 0.0
    attack_space_cost: float = -0.3
    hit_prey_reward: float = 1.0
    kill_prey_reward: float = 100.0
    attacked_penalty: float = -1.0
    death_penalty: float = -0.5

    @classmethod
    def for_kind(cls, kind: str) -> "RewardTable":
        if kind == "multibattle":
            return cls()
        if kind == "gathering":
            return cls(attack_hit_reward=5.0, food_reward=5.0)
        if kind == "predator_prey":
            return cls(move_cost=0.0)
        raise ScenarioError(f"unknown scenario kind {kind!r}")


@dataclass(frozen=True)
class TeamSpec:
    team_id: int
    agent_class: AgentClass
    count: int


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    teams: tuple[TeamSpec, ...]
    rewards: RewardTable
    map_width: int = 28
    map_height: int = 28
    episode_length: int = 300
    obs_radius: float = 6.0
    max_visible_neighbors: int = 20
    food_count: int = 0
    max_visible_food: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.map_width < 8 or self.map_height < 8:
            raise ScenarioError("map must be at least 8x8")
        if self.episode_length < 1:
            raise ScenarioError("episode_length must be >= 1")
        if self.obs_radius <= 0:
            raise ScenarioError("obs_radius must be positive")
        if self.max_visible_neighbors < 0 or self.max_visible_food < 0:
            raise ScenarioError("visibility caps must be non-negative")
        if len(self.teams) != 2 or sorted(t.team_id for t in self.teams) != [0, 1]:
            raise ScenarioError("exactly two teams with ids 0 and 1 are required")
        if any(t.count < 1 for t in self.teams):
            raise ScenarioError("every team needs at least one agent")
        roles = [t.agent_class.role for t in self.teams]
        if self.kind == "predator_prey":
            if sorted(roles) != ["predator", "prey"]:
                raise ScenarioError("predator_prey needs one predator team and one prey team")
        else:
            if self.teams[0].agent_class != self.teams[1].agent_class:
                raise ScenarioError(f"{self.kind} teams must share one agent class")
            if roles[0] != "battle":
                raise ScenarioError(f"{self.kind} teams must use a battle class")
        if len({t.agent_class.n_actions for t in self.teams}) != 1:
            raise ScenarioError("all agent classes must expose the same number of actions")
        if self.kind == "gathering":
            if self.food_count < 0:
                raise ScenarioError("food_count must be non-negative")
        elif self.food_count:
            raise ScenarioError("food_count is only valid for gathering")

    @classmethod
    def default(cls, kind: str, **overrides) -> "ScenarioSpec":
        if kind == "predator_prey":
            teams = (TeamSpec(0, PREDATOR, 40), TeamSpec(1, PREY, 20))
        else:
            teams = (TeamSpec(0, BATTLE, 25), TeamSpec(1, BATTLE, 25))
        base = dict(kind=kind, teams=teams, rewards=RewardTable.for_kind(kind))
        if kind == "gathering":
            base["food_count"] = 64
        base.update(overrides)
        return cls(**base)

    def with_teams(self, *counts: int) -> "ScenarioSpec":
        teams = tuple(replace(t, count=c) for t, c in zip(self.teams, counts))
        return replace(self, teams=teams)

    @property
    def n_actions(self) -> int:
        return self.teams[0].agent_class.n_actions

    @property
    def n_agents(self) -> int:
        return sum(t.count for t in self.teams)

    def team(self, team_id: int) -> TeamSpec:
        return next(t for t in self.teams if t.team_id == team_id)

    @property
    def obs_dim(self) -> int:
        d = SELF_FEATURES + self.max_visible_neighbors * (NEIGHBOR_BASE_FEATURES + self.n_actions)
        if self.kind == "gathering":
            d += self.max_visible_food * FOOD_FEATURES
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["teams"] = [
            {"team_id": t.team_id, "count": t.count, "agent_class": asdict(t.agent_class)} for t in self.teams
        ]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        d = dict(d)
        teams = []
        for t in d.pop("teams"):
            c = dict(t["agent_class"])
            c["move_offsets"] = tuple(tuple(o) for o in c["move_offsets"])
            c["attack_offsets"] = tuple(tuple(o) for o in c["attack_offsets"])
            teams.append(TeamSpec(t["team_id"], AgentClass(**c), t["count"]))
        rewards = RewardTable(**d.pop("rewards"))
        return cls(teams=tuple(teams), rewards=rewards, **d)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ------------------------------------------------------------------ the world

@dataclass
class AgentState:
    agent_id: int
    team_id: int
    agent_class: AgentClass
    x: int
    y: int
    hp: float
    alive: bool = True
    last_action: int = 0

    @property
    def side(self) -> int:
        return self.agent_class.footprint_side

    @property
    def center(self) -> tuple[float, float]:
        off = (self.side - 1) / 2.0
        return self.x + off, self.y + off


@dataclass
class StepOutcome:
    rewards: np.ndarray  # indexed by agent_id
    kill_events: list[tuple[int, int]]
    terminal: bool
    terminal_cause: str | None


@dataclass
class WorldState:
    spec: ScenarioSpec
    agents: list[AgentState]
    occupancy: np.ndarray  # [H, W], agent_id or -1
    food: np.ndarray  # [H, W] bool
    rng: np.random.Generator
    episode_index: int = 0
    step_index: int = 0
    cumulative_team_reward: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def alive_ids(self) -> list[int]:
        return [a.agent_id for a in self.agents if a.alive]

    def team_ids(self, team_id: int, alive_only: bool = True) -> list[int]:
        return [a.agent_id for a in self.agents if a.team_id == team_id and (a.alive or not alive_only)]

    def survivors(self) -> tuple[int, int]:
        n = [0, 0]
        for a in self.agents:
            if a.alive:
                n[a.team_id] += 1
        return n[0], n[1]

    @property
    def food_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.food)
        return [(int(x), int(y)) for x, y in zip(xs, ys)]

    @property
    def terminal(self) -> bool:
        return self.step_index >= self.spec.episode_length or 0 in self.survivors()

    def serialize(self) -> bytes:
        """Canonical byte encoding of the full mutable state (for determinism checks)."""
        rng_state = self.rng.bit_generator.state
        doc = {
            "episode": self.episode_index,
            "step": self.step_index,
            "agents": [[a.agent_id, a.team_id, a.alive, a.x, a.y, repr(float(a.hp)), a.last_action] for a in self.agents],
            "food": self.food_cells,
            "team_reward": [repr(float(r)) for r in self.cumulative_team_reward],
            "rng": _jsonable(rng_state),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def check_invariants(self) -> None:
        occ = np.full_like(self.occupancy, -1)
        H, W = occ.shape
        for a in self.agents:
            mx = a.agent_class.max_hp
            if not 0 <= a.hp <= mx:
                raise AssertionError(f"agent {a.agent_id} hp {a.hp} out of [0, {mx}]")
            if a.alive != (a.hp > 0):
                raise AssertionError(f"agent {a.agent_id} alive flag disagrees with hp")
            if not a.alive:
                continue
            if a.x < 0 or a.y < 0 or a.x + a.side > W or a.y + a.side > H:
                raise AssertionError(f"agent {a.agent_id} footprint leaves the map")
            block = occ[a.y:a.y + a.side, a.x:a.x + a.side]
            if (block != -1).any():
                raise AssertionError(f"agent {a.agent_id} overlaps another footprint")
            block[:] = a.agent_id
        if not np.array_equal(occ, self.occupancy):
            raise AssertionError("occupancy index disagrees with agent footprints")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _footprint_free(occ: np.ndarray, x: int, y: int, side: int, ignore: int = -1) -> bool:
    H, W = occ.shape
    if x < 0 or y < 0 or x + side > W or y + side > H:
        return False
    block = occ[y:y + side, x:x + side]
    return bool(((block == -1) | (block == ignore)).all())


def build_scenario(spec: ScenarioSpec, episode_index: int = 0) -> WorldState:
    """Fresh world: agents at uniformly random non-overlapping cells, full hp."""
    W, H = spec.map_width, spec.map_height
    area = sum(t.count * t.agent_class.footprint_side ** 2 for t in spec.teams)
    if area > 0.5 * W * H:
        raise PlacementError(f"requested footprint area {area} exceeds half of the {W}x{H} map")
    rng = make_rng(spec.rng_seed, episode_index)
    occ = np.full((H, W), -1, dtype=np.int64)
    agents: list[AgentState] = []
    for team in sorted(spec.teams, key=lambda t: t.team_id):
        side = team.agent_class.footprint_side
        if spec.kind == "predator_prey":
            x_lo, x_hi = 0, W - side
        elif team.team_id == 0:
            x_lo, x_hi = 0, W // 2 - side
        else:
            x_lo, x_hi = W // 2, W - side
        for _ in range(team.count):
            for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                x = int(rng.integers(x_lo, x_hi + 1))
                y = int(rng.integers(0, H - side + 1))
                if _footprint_free(occ, x, y, side):
                    break
            else:
                raise PlacementError(f"could not place agent {len(agents)} of team {team.team_id}")
            aid = len(agents)
            occ[y:y + side, x:x + side] = aid
            agents.append(AgentState(aid, team.team_id, team.agent_class, x, y, team.agent_class.max_hp))
    food = np.zeros((H, W), dtype=bool)
    if spec.food_count:
        free = np.flatnonzero(occ.reshape(-1) == -1)
        if spec.food_count > free.size:
            raise PlacementError("not enough free cells for food")
        food.reshape(-1)[rng.choice(free, size=spec.food_count, replace=False)] = True
    return WorldState(spec, agents, occ, food, rng, episode_index=episode_index)


# --------------------------------------------------------------- observation

@dataclass
class ObservationView:
    agent_id: int
    self_features: np.ndarray  # [5]
    neighbor_rows: np.ndarray  # [max_visible_neighbors, 5 + L]
    food_rows: np.ndarray | None  # [max_visible_food, 3]
    neighbor_ids: np.ndarray  # ids of present rows, in row order
    neighbor_offsets: np.ndarray  # [k, 2] center deltas (cells) of present rows

    def flat(self) -> np.ndarray:
        parts = [self.self_features, self.neighbor_rows.reshape(-1)]
        if self.food_rows is not None:
            parts.append(self.food_rows.reshape(-1))
        return np.concatenate(parts)


def _centers(world: WorldState, ids: list[int]) -> np.ndarray:
    return np.array([world.agents[i].center for i in ids], dtype=np.float64).reshape(-1, 2)


def observe(world: WorldState, agent_id: int) -> ObservationView:
    """Partial observation: self features plus the nearest visible agents (and food)."""
    if not 0 <= agent_id < len(world.agents):
        raise StepError(f"unknown agent {agent_id}")
    me = world.agents[agent_id]
    if not me.alive:
        raise StepError(f"agent {agent_id} is dead")
    spec = world.spec
    W, H, r, L = spec.map_width, spec.map_height, spec.obs_radius, spec.n_actions
    others = [i for i in world.alive_ids if i != agent_id]
    cx, cy = me.center
    delta = _centers(world, others) - np.array([cx, cy])
    d2 = (delta ** 2).sum(axis=1)
    ids = np.array(others, dtype=np.int64)
    vis = d2 <= r * r
    ids, delta, d2 = ids[vis], delta[vis], d2[vis]
    order = np.lexsort((ids, d2))[: spec.max_visible_neighbors]
    ids, delta = ids[order], delta[order]

    rows = np.zeros((spec.max_visible_neighbors, NEIGHBOR_BASE_FEATURES + L))
    for k, (nid, (dx, dy)) in enumerate(zip(ids, delta)):
        other = world.agents[nid]
        rows[k, 0] = 1.0
        rows[k, 1] = dx / r
        rows[k, 2] = dy / r
        rows[k, 3] = other.hp / other.agent_class.max_hp
        rows[k, 4] = float(other.team_id == me.team_id)
        rows[k, NEIGHBOR_BASE_FEATURES + other.last_action] = 1.0

    selff = np.array([me.x / W, me.y / H, me.hp / me.agent_class.max_hp, float(me.team_id == 0), float(me.team_id == 1)])

    food_rows = None
    if spec.kind == "gathering":
        food_rows = np.zeros((spec.max_visible_food, FOOD_FEATURES))
        ys, xs = np.nonzero(world.food)
        if xs.size:
            fd = np.stack([xs - cx, ys - cy], axis=1).astype(np.float64)
            fidx = np.lexsort((ys * W + xs, (fd ** 2).sum(axis=1)))[: spec.max_visible_food]
            for k, fi in enumerate(fidx):
                food_rows[k] = (1.0, fd[fi, 0] / W, fd[fi, 1] / H)
    return ObservationView(agent_id, selff, rows, food_rows, ids, delta)


def observe_team(world: WorldState, team_id: int) -> tuple[list[int], list[ObservationView]]:
    ids = world.team_ids(team_id)
    return ids, [observe(world, i) for i in ids]


# ------------------------------------------------------------------- dynamics

def step(world: WorldState, joint_actions: Mapping[int, int]) -> StepOutcome:
    """Advance one tick. ``joint_actions`` maps every living agent id to an action index."""
    spec, rt = world.spec, world.spec.rewards
    if world.terminal:
        raise StepError("world is already terminal")
    n = len(world.agents)
    for aid in joint_actions:
        if not 0 <= int(aid) < n:
            raise StepError(f"action given for unknown agent {aid}")
    living = world.alive_ids
    acts: dict[int, int] = {}
    for aid in living:
        if aid not in joint_actions:
            raise StepError(f"missing action for living agent {aid}")
        a = int(joint_actions[aid])
        if not 0 <= a < world.agents[aid].agent_class.n_actions:
            raise StepError(f"action {a} out of range for agent {aid}")
        acts[aid] = a

    rewards = np.zeros(n)
    occ = world.occupancy

    # phase 1: moves, sequential in a random order; blocked moves still pay
    movers = [aid for aid in living if not world.agents[aid].agent_class.is_attack(acts[aid])]
    for idx in world.rng.permutation(len(movers)):
        ag = world.agents[movers[idx]]
        rewards[ag.agent_id] += rt.move_cost
        dx, dy = ag.agent_class.move_offsets[acts[ag.agent_id]]
        if (dx, dy) == (0, 0):
            continue
        nx, ny, s = ag.x + dx, ag.y + dy, ag.side
        if _footprint_free(occ, nx, ny, s, ignore=ag.agent_id):
            occ[ag.y:ag.y + s, ag.x:ag.x + s] = -1
            occ[ny:ny + s, nx:nx + s] = ag.agent_id
            ag.x, ag.y = nx, ny

    # phase 2: attacks resolve simultaneously against post-move positions
    H, W = occ.shape
    hits: dict[int, list[int]] = {}
    for aid in living:
        ag = world.agents[aid]
        a = acts[aid]
        if not ag.agent_class.is_attack(a):
            continue
        predator = ag.agent_class.role == "predator"
        ox, oy = ag.agent_class.attack_offsets[a - ag.agent_class.n_moves]
        tx, ty = ag.x + ox, ag.y + oy
        victim = int(occ[ty, tx]) if 0 <= tx < W and 0 <= ty < H else -1
        if victim >= 0 and world.agents[victim].team_id != ag.team_id:
            hits.setdefault(victim, []).append(aid)
            rewards[aid] += rt.hit_prey_reward if predator else rt.attack_hit_reward
        else:
            rewards[aid] += rt.attack_space_cost if predator else rt.attack_empty_cost
    kills: list[tuple[int, int]] = []
    for victim in sorted(hits):
        v = world.agents[victim]
        attackers = hits[victim]
        if v.agent_class.role == "prey":
            rewards[victim] += rt.attacked_penalty * len(attackers)
        damage = sum(world.agents[a].agent_class.attack_damage for a in attackers)
        v.hp = max(0.0, v.hp - damage)
        if v.hp <= 0:
            v.alive = False
            occ[v.y:v.y + v.side, v.x:v.x + v.side] = -1
            if v.agent_class.role == "prey":
                rewards[victim] += rt.death_penalty
            for a in attackers:
                predator = world.agents[a].agent_class.role == "predator"
                rewards[a] += rt.kill_prey_reward if predator else rt.kill_reward
                kills.append((a, victim))

    # phase 3: food; ascending id order settles ties
    if spec.kind == "gathering":
        for aid in living:
            ag = world.agents[aid]
            if not ag.alive:
                continue
            block = world.food[ag.y:ag.y + ag.side, ag.x:ag.x + ag.side]
            eaten = int(block.sum())
            if eaten:
                rewards[aid] += rt.food_reward * eaten
                block[:] = False

    for aid in living:
        world.agents[aid].last_action = acts[aid]
    world.step_index += 1
    for ag in world.agents:
        world.cumulative_team_reward[ag.team_id] += rewards[ag.agent_id]
    cause = None
    if 0 in world.survivors():
        cause = TEAM_ELIMINATED
    elif world.step_index >= spec.episode_length:
        cause = TIME_LIMIT
    return StepOutcome(rewards, kills, cause is not None, cause)


def winner(world: WorldState) -> int | None:
    """Winning team id, or ``None`` for a draw. Only valid on a terminal world."""
    if not world.terminal:
        raise StepError("winner() requires a terminal world")
    s0, s1 = world.survivors()
    if s0 != s1:
        return 0 if s0 > s1 else 1
    if world.spec.kind == "predator_prey":
        return None
    r0, r1 = world.cumulative_team_reward
    if r0 != r1:
        return 0 if r0 > r1 else 1
    return None


# --------------------------------------------------------- seeded rollouts

def random_joint_action(world: WorldState, rng: np.random.Generator) -> dict[int, int]:
    return {aid: int(rng.integers(world.agents[aid].agent_class.n_actions)) for aid in world.alive_ids}


def random_episode_trajectory(spec: ScenarioSpec, episode_index: int, max_steps: int | None = None) -> bytes:
    """Serialized state after every step of one uniformly random episode."""
    world = build_scenario(spec, episode_index)
    policy_rng = make_rng(spec.rng_seed, episode_index, 1)
    frames = [world.serialize()]
    limit = spec.episode_length if max_steps is None else max_steps
    while not world.terminal and world.step_index < limit:
        step(world, random_joint_action(world, policy_rng))
        frames.append(world.serialize())
    return b"\n".join(frames)


def _trajectory_job(args):
    spec_dict, episode, max_steps = args
    return random_episode_trajectory(ScenarioSpec.from_dict(spec_dict), episode, max_steps)


def simulate_episodes(spec: ScenarioSpec, episodes: list[int], max_steps: int | None = None,
                      workers: int = 1) -> list[bytes]:
    """Random-policy trajectories for several episode indices, optionally in worker processes."""
    jobs = [(spec.to_dict(), e, max_steps) for e in episodes]
    if workers <= 1:
        return [_trajectory_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trajectory_job, jobs))
