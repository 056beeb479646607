"""INI scenario/training configuration files.

Sections: ``[scenario]``, ``[rewards]``, one ``[agents.<name>]`` per team,
and optionally ``[training]``. Unknown sections and keys are errors; every
:class:`RewardTable` field may be overridden.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from gamfq.engine import AGENT_CLASSES, RewardTable, ScenarioError, ScenarioSpec, TeamSpec

SCENARIO_KEYS = {
    "kind": str,
    "map_width": int,
    "map_height": int,
    "episode_length": int,
    "obs_radius": float,
    "max_visible_neighbors": int,
    "food_count": int,
    "max_visible_food": int,
    "seed": int,
}
AGENT_KEYS = {"team_id": int, "class": str, "count": int, "max_hp": float, "attack_damage": float}
REWARD_KEYS = {f.name: float for f in dataclasses.fields(RewardTable)}


class ConfigError(ValueError):
    pass


@dataclass
class ConfigFile:
    spec: ScenarioSpec
    training: dict[str, str] = field(default_factory=dict)
    path: Path | None = None


def _typed(section: str, key: str, raw: str, kind: type):
    try:
        if kind is int:
            return int(raw, 0)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _section(cp: configparser.ConfigParser, name: str, schema: dict) -> dict:
    out = {}
    for key, raw in cp.items(name, raw=True):
        if key not in schema:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _typed(name, key, raw, schema[key])
    return out


def parse_config(text: str, path: Path | None = None) -> ConfigFile:
    cp = configparser.ConfigParser(interpolation=None, default_section="__no_defaults__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    agent_sections = [s for s in cp.sections() if s.startswith("agents.")]
    for s in cp.sections():
        if s not in ("scenario", "rewards", "training") and s not in agent_sections:
            raise ConfigError(f"unknown section [{s}]")

    sc = _section(cp, "scenario", SCENARIO_KEYS)
    if "kind" not in sc:
        raise ConfigError("[scenario] kind is required")
    kind = sc.pop("kind")
    try:
        base = ScenarioSpec.default(kind)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc

    rewards = base.rewards
    if "rewards" in cp:
        rewards = replace(rewards, **_section(cp, "rewards", REWARD_KEYS))

    teams = list(base.teams)
    if agent_sections:
        teams = []
        for s in agent_sections:
            d = _section(cp, s, AGENT_KEYS)
            missing = {"team_id", "class", "count"} - d.keys()
            if missing:
                raise ConfigError(f"[{s}] missing {sorted(missing)}")
            if d["class"] not in AGENT_CLASSES:
                raise ConfigError(f"[{s}] unknown agent class {d['class']!r}")
            cls = AGENT_CLASSES[d["class"]]
            overrides = {k: d[k] for k in ("max_hp", "attack_damage") if k in d}
            if overrides:
                cls = replace(cls, **overrides)
            teams.append(TeamSpec(d["team_id"], cls, d["count"]))
        teams.sort(key=lambda t: t.team_id)

    if "seed" in sc:
        sc["rng_seed"] = sc.pop("seed")
    if kind != "gathering" and "food_count" not in sc:
        sc["food_count"] = 0
    try:
        spec = replace(base, teams=tuple(teams), rewards=rewards, **sc)
    except (ScenarioError, TypeError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc

    training = dict(cp.items("training", raw=True)) if "training" in cp else {}
    return ConfigFile(spec, training, path)


def load_config(path: str | Path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, path)


def render_config(spec: ScenarioSpec, training: dict | None = None) -> str:
    """Inverse of :func:`parse_config` for the fields a config file can express."""
    lines = ["[scenario]", f"kind = {spec.kind}"]
    for key in ("map_width", "map_height", "episode_length", "obs_radius", "max_visible_neighbors",
                "food_count", "max_visible_food"):
        lines.append(f"{key} = {getattr(spec, key)}")
    lines += [f"seed = {spec.rng_seed}", "", "[rewards]"]
    for f in dataclasses.fields(RewardTable):
        lines.append(f"{f.name} = {getattr(spec.rewards, f.name)!r}")
    for t in spec.teams:
        lines += ["", f"[agents.team{t.team_id}]", f"team_id = {t.team_id}", f"class = {t.agent_class.name}",
                  f"count = {t.count}"]
        base = AGENT_CLASSES[t.agent_class.name]
        if t.agent_class.max_hp != base.max_hp:
            lines.append(f"max_hp = {t.agent_class.max_hp!r}")
        if t.agent_class.attack_damage != base.attack_damage:
            lines.append(f"attack_damage = {t.agent_class.attack_damage!r}")
    if training:
        lines += ["", "[training]"] + [f"{k} = {v}" for k, v in training.items()]
    return "\n".join(lines) + "\n"


def shipped_config(kind: str) -> Path:
    """Path of a default scenario config bundled with the package."""
    p = Path(__file__).parent / "scenarios" / f"{kind}.ini"
    if not p.exists():
        raise ConfigError(f"no shipped config for {kind!r}")
    return p
