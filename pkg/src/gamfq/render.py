"""Static raster frames (binary PPM) and replay logs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from gamfq.engine import ScenarioSpec, StepError, WorldState, build_scenario, step

BACKGROUND = (24, 24, 24)
FOOD = (60, 200, 60)
TEAM_COLORS = ((230, 60, 50), (60, 110, 235))
REPLAY_FORMAT = "gamfq-replay/1"


class ReplayError(ValueError):
    pass


def render_frame(world: WorldState, cell: int = 4) -> np.ndarray:
    """``[H*cell, W*cell, 3]`` uint8 image: team-coloured footprints, brightness by hp."""
    H, W = world.occupancy.shape
    img = np.empty((H, W, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    img[world.food] = FOOD
    for a in world.agents:
        if not a.alive:
            continue
        shade = 0.35 + 0.65 * (a.hp / a.agent_class.max_hp)
        color = np.round(np.array(TEAM_COLORS[a.team_id]) * shade).astype(np.uint8)
        img[a.y:a.y + a.side, a.x:a.x + a.side] = color
    return np.repeat(np.repeat(img, cell, axis=0), cell, axis=1)


def to_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------- replay logs

@dataclass
class ReplayStep:
    step: int
    actions: dict[int, int]
    rewards: dict[int, float]
    kills: list[tuple[int, int]]
    survivors: tuple[int, int]


class ReplayWriter:
    """Writes one JSON header line, then one JSON line per step."""

    def __init__(self, path: str | Path, world: WorldState):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")
        header = {
            "format": REPLAY_FORMAT,
            "spec_hash": world.spec.spec_hash(),
            "seed": world.spec.rng_seed,
            "episode": world.episode_index,
            "spec": world.spec.to_dict(),
        }
        self._fh.write(json.dumps(header, sort_keys=True) + "\n")

    def record(self, world: WorldState, actions: dict[int, int], outcome) -> None:
        living = sorted(actions)
        rec = {
            "step": world.step_index - 1,
            "actions": [[int(a), int(actions[a])] for a in living],
            "rewards": [[int(a), float(outcome.rewards[a])] for a in living],
            "kills": [list(k) for k in outcome.kill_events],
            "survivors": list(world.survivors()),
        }
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_replay(path: str | Path) -> tuple[dict, list[ReplayStep]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ReplayError("line 1: empty replay log")
    try:
        header = json.loads(lines[0])
        if header.get("format") != REPLAY_FORMAT:
            raise ReplayError(f"line 1: unsupported format {header.get('format')!r}")
        spec = ScenarioSpec.from_dict(header["spec"])
    except ReplayError:
        raise
    except Exception as exc:
        raise ReplayError(f"line 1: malformed header ({exc})") from exc
    if spec.spec_hash() != header.get("spec_hash"):
        raise ReplayError("line 1: spec hash does not match embedded spec")
    steps = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            steps.append(ReplayStep(
                step=int(rec["step"]),
                actions={int(a): int(v) for a, v in rec["actions"]},
                rewards={int(a): float(v) for a, v in rec["rewards"]},
                kills=[(int(k), int(v)) for k, v in rec["kills"]],
                survivors=tuple(rec["survivors"]),
            ))
        except Exception as exc:
            raise ReplayError(f"line {lineno}: malformed step record ({exc})") from exc
        if steps[-1].step != lineno - 2:
            raise ReplayError(f"line {lineno}: expected step {lineno - 2}, got {steps[-1].step}")
    return header, steps


def replay_worlds(path: str | Path) -> Iterable[WorldState]:
    """Re-simulate a replay log, yielding the world after each logged step."""
    header, steps = read_replay(path)
    world = build_scenario(ScenarioSpec.from_dict(header["spec"]), header["episode"])
    for lineno, rec in enumerate(steps, start=2):
        try:
            outcome = step(world, rec.actions)
        except StepError as exc:
            raise ReplayError(f"line {lineno}: {exc}") from exc
        got = {a: float(outcome.rewards[a]) for a in rec.actions}
        if got != rec.rewards or list(outcome.kill_events) != rec.kills or world.survivors() != rec.survivors:
            raise ReplayError(f"line {lineno}: re-simulation diverges from the log")
        yield world


def render_replay(log_path: str | Path, frames_dir: str | Path, cell: int = 4) -> list[Path]:
    """One PPM per logged step plus an ``index.txt`` listing them."""
    frames_dir = Path(frames_dir)
    frames_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for world in replay_worlds(log_path):
        p = frames_dir / f"frame_{world.step_index - 1:06d}.ppm"
        p.write_bytes(to_ppm(render_frame(world, cell)))
        written.append(p)
    (frames_dir / "index.txt").write_text("".join(f"{p.name}\n" for p in written), encoding="utf-8")
    return written
