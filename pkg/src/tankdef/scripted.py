"""Deterministic scripted player policies.

Used for engine-level testing (replay fixtures, the base-camper vs
enemy-chaser comparison), as MTS control mode "scripted", and as the
random-action baseline for scaled-down training comparisons.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from .engine import (
    Action,
    Cell,
    DIR_DELTAS,
    Direction,
    GameState,
    Side,
    Tank,
    TileKind,
)

Policy = Callable[[GameState, str], Action]

_DIR_ACTIONS = {
    Direction.UP: Action.UP,
    Direction.DOWN: Action.DOWN,
    Direction.LEFT: Action.LEFT,
    Direction.RIGHT: Action.RIGHT,
}

_DIR_ORDER = [Direction.UP, Direction.DOWN, Direction.LEFT, Direction.RIGHT]


def _player(state: GameState, agent_id: str) -> Optional[Tank]:
    for t in state.alive_players():
        if t.agent_id == agent_id:
            return t
    return None


def _clear_shot(state: GameState, pos: Cell, direction: Direction) -> bool:
    """True when a bullet fired from pos in direction hits an enemy
    before any wall, base or friendly tank."""
    dc, dr = DIR_DELTAS[direction]
    c, r = pos
    while True:
        c, r = c + dc, r + dr
        if not state.in_bounds((c, r)):
            return False
        tank = state.tank_at((c, r))
        if tank is not None:
            return tank.side == Side.ENEMY
        tile = state.tile((c, r))
        if tile in (TileKind.HARD_WALL, TileKind.SOFT_WALL, TileKind.BASE):
            return False
        # empty and pond: bullet continues


def _aim_or_fire(state: GameState, tank: Tank) -> Optional[Action]:
    """Fire if facing a clear shot, else turn toward one."""
    if state.has_live_bullet(tank.id):
        return None
    if _clear_shot(state, tank.pos, tank.facing):
        return Action.FIRE
    for direction in _DIR_ORDER:
        if direction != tank.facing and _clear_shot(state, tank.pos, direction):
            return _DIR_ACTIONS[direction]
    return None


def _toward(state: GameState, pos: Cell, dist: np.ndarray) -> Optional[Action]:
    """Step to the passable neighbour with the smallest distance value."""
    best, best_d = None, None
    for direction in _DIR_ORDER:
        dc, dr = DIR_DELTAS[direction]
        nxt = (pos[0] + dc, pos[1] + dr)
        if not state.passable(nxt):
            continue
        d = int(dist[nxt[1], nxt[0]])
        if d < 0:
            continue
        if best_d is None or d < best_d:
            best, best_d = direction, d
    return _DIR_ACTIONS[best] if best is not None else None


def _face_nearest_enemy(state: GameState, tank: Tank) -> Action:
    enemies = state.alive_enemies()
    if not enemies:
        return Action.NOOP
    bc, br = tank.pos
    target = min(enemies, key=lambda e: (abs(e.pos[0] - bc) + abs(e.pos[1] - br), e.id))
    dc, dr = target.pos[0] - bc, target.pos[1] - br
    if abs(dc) >= abs(dr):
        direction = Direction.RIGHT if dc > 0 else Direction.LEFT
    else:
        direction = Direction.DOWN if dr > 0 else Direction.UP
    if tank.facing == direction and not state.has_live_bullet(tank.id):
        return Action.FIRE
    return _DIR_ACTIONS[direction]


def _guard_cells(state: GameState) -> list:
    """Cells worth parking on to guard the base: its open neighbours,
    then the cells one further out along each approach."""
    bc, br = state.base
    first = []
    for direction in _DIR_ORDER:
        dc, dr = DIR_DELTAS[direction]
        cell = (bc + dc, br + dr)
        if state.in_bounds(cell) and state.tile(cell) == TileKind.EMPTY:
            first.append((cell, direction))
    second = []
    for (c, r), direction in first:
        dc, dr = DIR_DELTAS[direction]
        cell = (c + dc, r + dr)
        if state.in_bounds(cell) and state.tile(cell) == TileKind.EMPTY:
            second.append((cell, direction))
    return first + second


def base_camper(state: GameState, agent_id: str) -> Action:
    """Park on the base's approach corridor and shoot up it."""
    tank = _player(state, agent_id)
    if tank is None:
        return Action.NOOP
    guards = _guard_cells(state)
    index = sorted(t.agent_id for t in state.players()).index(agent_id)
    guard_cell, outward = guards[index % len(guards)] if guards else (None, None)

    shot = _aim_or_fire(state, tank)
    if tank.pos == guard_cell:
        if shot is not None:
            return shot
        if tank.facing != outward:
            return _DIR_ACTIONS[outward]
        if not state.has_live_bullet(tank.id):
            return Action.FIRE
        return Action.NOOP
    if shot is not None:
        return shot
    move = _toward(state, tank.pos, state.dist_to_base())
    if move is not None:
        return move
    # Guard post unreachable (base pocket sealed): hold position and
    # snipe whatever crosses a firing line.
    return Action.NOOP


def enemy_chaser(state: GameState, agent_id: str) -> Action:
    """Greedily hunt the nearest enemy anywhere on the map."""
    tank = _player(state, agent_id)
    if tank is None:
        return Action.NOOP
    shot = _aim_or_fire(state, tank)
    if shot is not None:
        return shot
    enemies = state.alive_enemies()
    if not enemies:
        return Action.NOOP
    tc, tr = tank.pos
    target = min(enemies, key=lambda e: (abs(e.pos[0] - tc) + abs(e.pos[1] - tr), e.id))
    dc, dr = target.pos[0] - tc, target.pos[1] - tr
    prefs = []
    if abs(dc) >= abs(dr):
        if dc:
            prefs.append(Direction.RIGHT if dc > 0 else Direction.LEFT)
        if dr:
            prefs.append(Direction.DOWN if dr > 0 else Direction.UP)
    else:
        if dr:
            prefs.append(Direction.DOWN if dr > 0 else Direction.UP)
        if dc:
            prefs.append(Direction.RIGHT if dc > 0 else Direction.LEFT)
    for direction in prefs:
        dcc, drr = DIR_DELTAS[direction]
        if state.passable((tc + dcc, tr + drr)):
            return _DIR_ACTIONS[direction]
    return _face_nearest_enemy(state, tank)


def noop(state: GameState, agent_id: str) -> Action:
    return Action.NOOP


class RandomPolicy:
    """Uniform random actions from a private seeded generator."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, state: GameState, agent_id: str) -> Action:
        return Action(int(self.rng.integers(len(Action))))


REGISTRY: Dict[str, Callable[..., Policy]] = {
    "base_camper": lambda **_: base_camper,
    "enemy_chaser": lambda **_: enemy_chaser,
    "noop": lambda **_: noop,
    "random": lambda seed=0, **_: RandomPolicy(seed),
}


def make_policy(name: str, **kwargs) -> Policy:
    if name not in REGISTRY:
        raise KeyError(f"unknown scripted policy {name!r}; "
                       f"known: {sorted(REGISTRY)}")
    return REGISTRY[name](**kwargs)
