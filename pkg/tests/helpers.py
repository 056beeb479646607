"""Hand-built worlds for micro-scenario tests."""

import numpy as np


def place(world, positions):
    """Move agents to ``{agent_id: (x, y)}``; agents not listed are removed (killed)."""
    world.occupancy[:] = -1
    for a in world.agents:
        if a.agent_id in positions:
            a.x, a.y = positions[a.agent_id]
            a.alive = True
            a.hp = a.agent_class.max_hp
            world.occupancy[a.y:a.y + a.side, a.x:a.x + a.side] = a.agent_id
        else:
            a.alive = False
            a.hp = 0.0
    world.food[:] = False
    world.check_invariants()
    return world


def attack_action(agent, direction):
    """Action id attacking toward a compass ``direction`` such as ``(1, 0)`` (east)."""
    compass = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]
    return agent.agent_class.n_moves + compass.index(direction)


def move_action(agent, offset):
    return agent.agent_class.move_offsets.index(tuple(offset))


def stay_all(world):
    return {a: 0 for a in world.alive_ids}


def rng(seed=0):
    return np.random.default_rng(seed)
