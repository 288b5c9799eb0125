"""Deterministic tick-level simulation of the Multiple Tank Defence game.

The whole game lives on a small cell grid. Player tanks defend a base
against up to five enemy tanks that respawn while the episode runs.
Every source of randomness goes through one seeded generator stored in
the state, so a (seed, action sequence) pair always replays to the same
final state.
"""

from __future__ import annotations

import copy
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np

Cell = Tuple[int, int]  # (col, row)


class TileKind(IntEnum):
    EMPTY = 0
    SOFT_WALL = 1
    HARD_WALL = 2
    POND = 3
    BASE = 4


class Direction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


DIR_DELTAS: Dict[Direction, Cell] = {
    Direction.UP: (0, -1),
    Direction.DOWN: (0, 1),
    Direction.LEFT: (-1, 0),
    Direction.RIGHT: (1, 0),
}

_EMPTY_VALUE = int(TileKind.EMPTY)

# Shared memo of breadth-first distance fields, keyed by grid contents and
# base cell (episode resets reuse the same stage layout over and over).
_DIST_CACHE: Dict[tuple, np.ndarray] = {}


class Action(IntEnum):
    NOOP = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4
    FIRE = 5


MOVE_ACTIONS: Dict[Action, Direction] = {
    Action.UP: Direction.UP,
    Action.DOWN: Direction.DOWN,
    Action.LEFT: Direction.LEFT,
    Action.RIGHT: Direction.RIGHT,
}


class Side(str, Enum):
    PLAYER = "player"
    ENEMY = "enemy"


class Status(str, Enum):
    RUNNING = "running"
    BASE_DESTROYED = "base_destroyed"
    ALL_PLAYERS_DEAD = "all_players_dead"
    STEP_LIMIT = "step_limit"


class EngineError(Exception):
    pass


class MalformedStage(EngineError):
    pass


class SteppedTerminalState(EngineError):
    pass


class MissingAction(EngineError):
    pass


STAGE_LEGEND = {
    ".": TileKind.EMPTY,
    "#": TileKind.HARD_WALL,
    "s": TileKind.SOFT_WALL,
    "~": TileKind.POND,
    "B": TileKind.BASE,
    "1": TileKind.EMPTY,
    "2": TileKind.EMPTY,
    "E": TileKind.EMPTY,
}


@dataclass
class EngineConfig:
    bullet_speed: int = 2
    p_advance: float = 0.6
    p_fire: float = 0.2
    respawn_delay: int = 20
    step_limit: int = 3000
    reward_per_kill: float = 10.0
    cell_px: int = 8
    max_enemies: int = 5

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        return cls(**d)


@dataclass
class Tank:
    id: int
    side: Side
    pos: Cell
    facing: Direction
    alive: bool = True
    agent_id: Optional[str] = None  # players only


@dataclass
class Bullet:
    owner: int
    owner_side: Side
    pos: Cell
    dir: Direction


@dataclass
class StepOutcome:
    rewards: Dict[str, float]
    events: List[dict]
    terminal: bool


@dataclass
class GameState:
    """Complete, serializable simulation state."""

    grid: np.ndarray  # (rows, cols) uint8 of TileKind codes
    base: Cell
    player_spawns: Dict[str, Cell]
    enemy_spawns: List[Cell]
    tanks: List[Tank]
    bullets: List[Bullet] = field(default_factory=list)
    tick: int = 0
    status: Status = Status.RUNNING
    agent_scores: Dict[str, float] = field(default_factory=dict)
    pending_spawns: List[int] = field(default_factory=list)
    next_entity_id: int = 0
    config: EngineConfig = field(default_factory=EngineConfig)
    seed: int = 0
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )
    _dist_to_base: Optional[np.ndarray] = field(default=None, repr=False)

    # -- geometry helpers -------------------------------------------------

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def in_bounds(self, cell: Cell) -> bool:
        c, r = cell
        return 0 <= c < self.width and 0 <= r < self.height

    def tile(self, cell: Cell) -> TileKind:
        return TileKind(int(self.grid[cell[1], cell[0]]))

    def tank_at(self, cell: Cell) -> Optional[Tank]:
        for t in self.tanks:
            if t.alive and t.pos == cell:
                return t
        return None

    def passable(self, cell: Cell) -> bool:
        c, r = cell
        h, w = self.grid.shape
        return (
            0 <= c < w
            and 0 <= r < h
            and self.grid[r, c] == _EMPTY_VALUE
            and self.tank_at(cell) is None
        )

    def players(self) -> List[Tank]:
        return [t for t in self.tanks if t.side == Side.PLAYER]

    def alive_players(self) -> List[Tank]:
        return [t for t in self.players() if t.alive]

    def alive_enemies(self) -> List[Tank]:
        return [t for t in self.tanks if t.side == Side.ENEMY and t.alive]

    def tank_by_id(self, entity_id: int) -> Tank:
        for t in self.tanks:
            if t.id == entity_id:
                return t
        raise KeyError(entity_id)

    def has_live_bullet(self, owner: int) -> bool:
        return any(b.owner == owner for b in self.bullets)

    # -- pathing ----------------------------------------------------------

    def dist_to_base(self) -> np.ndarray:
        """Breadth-first move distance from every cell to the base.

        Distance of a cell is the number of moves needed to reach a cell
        orthogonally adjacent to the base (adjacent cells have distance 1).
        Unreachable cells hold -1. Cached until a wall changes; identical
        grids share one read-only distance field across states.
        """
        if self._dist_to_base is None:
            key = (self.grid.tobytes(), self.base)
            cached = _DIST_CACHE.get(key)
            if cached is None:
                dist = np.full(self.grid.shape, -1, dtype=np.int32)
                bc, br = self.base
                q: deque = deque()
                dist[br, bc] = 0
                q.append(self.base)
                while q:
                    c, r = q.popleft()
                    for dc, dr in DIR_DELTAS.values():
                        nc, nr = c + dc, r + dr
                        if 0 <= nc < self.width and 0 <= nr < self.height:
                            if dist[nr, nc] == -1 and self.grid[nr, nc] == TileKind.EMPTY:
                                dist[nr, nc] = dist[r, c] + 1
                                q.append((nc, nr))
                dist.setflags(write=False)
                if len(_DIST_CACHE) >= 256:
                    _DIST_CACHE.clear()
                _DIST_CACHE[key] = dist
                cached = dist
            self._dist_to_base = cached
        return self._dist_to_base

    def _invalidate_paths(self) -> None:
        self._dist_to_base = None

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "seed": self.seed,
            "status": self.status.value,
            "grid": self.grid.tolist(),
            "base": list(self.base),
            "player_spawns": {k: list(v) for k, v in self.player_spawns.items()},
            "enemy_spawns": [list(c) for c in self.enemy_spawns],
            "tanks": [
                {
                    "id": t.id,
                    "side": t.side.value,
                    "pos": list(t.pos),
                    "facing": int(t.facing),
                    "alive": t.alive,
                    "agent_id": t.agent_id,
                }
                for t in self.tanks
            ],
            "bullets": [
                {
                    "owner": b.owner,
                    "owner_side": b.owner_side.value,
                    "pos": list(b.pos),
                    "dir": int(b.dir),
                }
                for b in self.bullets
            ],
            "agent_scores": dict(self.agent_scores),
            "pending_spawns": list(self.pending_spawns),
            "next_entity_id": self.next_entity_id,
            "config": self.config.to_dict(),
            "rng_state": _rng_state_to_jsonable(self.rng),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameState":
        rng = np.random.default_rng(0)
        rng.bit_generator.state = _rng_state_from_jsonable(d["rng_state"])
        return cls(
            grid=np.array(d["grid"], dtype=np.uint8),
            base=tuple(d["base"]),
            player_spawns={k: tuple(v) for k, v in d["player_spawns"].items()},
            enemy_spawns=[tuple(c) for c in d["enemy_spawns"]],
            tanks=[
                Tank(
                    id=t["id"],
                    side=Side(t["side"]),
                    pos=tuple(t["pos"]),
                    facing=Direction(t["facing"]),
                    alive=t["alive"],
                    agent_id=t["agent_id"],
                )
                for t in d["tanks"]
            ],
            bullets=[
                Bullet(
                    owner=b["owner"],
                    owner_side=Side(b["owner_side"]),
                    pos=tuple(b["pos"]),
                    dir=Direction(b["dir"]),
                )
                for b in d["bullets"]
            ],
            tick=d["tick"],
            status=Status(d["status"]),
            agent_scores=dict(d["agent_scores"]),
            pending_spawns=list(d["pending_spawns"]),
            next_entity_id=d["next_entity_id"],
            config=EngineConfig.from_dict(d["config"]),
            seed=d["seed"],
            rng=rng,
        )

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def state_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def clone(self) -> "GameState":
        return copy.deepcopy(self)


def _rng_state_to_jsonable(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_state_from_jsonable(d: dict) -> dict:
    return {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }


# -- stage loading --------------------------------------------------------


def load_stage(stage_text: str, config: Optional[EngineConfig] = None,
               seed: int = 0) -> GameState:
    """Parse an ASCII stage description into a fresh running state.

    Legend: ``.`` empty, ``#`` hard wall, ``s`` soft wall, ``~`` pond,
    ``B`` base, ``1``/``2`` player spawns, ``E`` enemy spawn. Exactly one
    base, one or two player markers and at least one enemy marker are
    required.
    """
    config = config or EngineConfig()
    lines = [ln for ln in stage_text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedStage("empty stage")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise MalformedStage("stage rows have unequal lengths")

    grid = np.zeros((len(lines), width), dtype=np.uint8)
    base: Optional[Cell] = None
    player_spawns: Dict[str, Cell] = {}
    enemy_spawns: List[Cell] = []
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch not in STAGE_LEGEND:
                raise MalformedStage(f"unknown stage character {ch!r} at {(c, r)}")
            grid[r, c] = STAGE_LEGEND[ch]
            if ch == "B":
                if base is not None:
                    raise MalformedStage("multiple base markers")
                base = (c, r)
            elif ch in "12":
                aid = f"p{int(ch) - 1}"
                if aid in player_spawns:
                    raise MalformedStage(f"duplicate player marker {ch}")
                player_spawns[aid] = (c, r)
            elif ch == "E":
                enemy_spawns.append((c, r))

    if base is None:
        raise MalformedStage("no base marker")
    if "p0" not in player_spawns:
        raise MalformedStage("no player-1 marker")
    if not enemy_spawns:
        raise MalformedStage("no enemy spawn markers")

    state = GameState(
        grid=grid,
        base=base,
        player_spawns=player_spawns,
        enemy_spawns=enemy_spawns,
        tanks=[],
        config=config,
        seed=seed,
        rng=np.random.default_rng(seed),
    )

    for aid in sorted(player_spawns):
        state.tanks.append(
            Tank(
                id=state.next_entity_id,
                side=Side.PLAYER,
                pos=player_spawns[aid],
                facing=Direction.UP,
                agent_id=aid,
            )
        )
        state.agent_scores[aid] = 0.0
        state.next_entity_id += 1

    # Fill up to the enemy cap immediately; shortfall spawns as cells free up.
    placed = 0
    for _ in range(config.max_enemies):
        if not _spawn_one_enemy(state):
            break
        placed += 1
    state.pending_spawns = [0] * (config.max_enemies - placed)
    return state


def _spawn_one_enemy(state: GameState) -> bool:
    free = [c for c in state.enemy_spawns if state.passable(c)]
    if not free:
        return False
    cell = free[int(state.rng.integers(len(free)))]
    state.tanks.append(
        Tank(
            id=state.next_entity_id,
            side=Side.ENEMY,
            pos=cell,
            facing=Direction.DOWN,
        )
    )
    state.next_entity_id += 1
    return True


def spawn_enemies(state: GameState) -> None:
    """Respawn pass, run once per tick: counts down pending respawn
    timers and places elapsed enemies on free spawn cells (retrying next
    tick when every spawn cell is occupied)."""
    if not state.pending_spawns:
        return
    state.pending_spawns = [max(0, t - 1) for t in state.pending_spawns]
    remaining: List[int] = []
    for timer in state.pending_spawns:
        if (
            timer == 0
            and len(state.alive_enemies()) < state.config.max_enemies
            and _spawn_one_enemy(state)
        ):
            continue
        remaining.append(timer)
    state.pending_spawns = remaining


# -- enemy behaviour ------------------------------------------------------

_DIR_ORDER = [Direction.UP, Direction.DOWN, Direction.LEFT, Direction.RIGHT]


def enemy_policy(state: GameState, enemy_id: int) -> Action:
    """Stochastic pressure toward the base.

    With probability ``p_advance`` the enemy steps along a shortest
    passable path toward the base (breadth-first distance, lowest
    direction index on ties); otherwise it picks a uniformly random
    direction. Independently it fires with probability ``p_fire`` when it
    has no bullet in flight; a triggered shot takes the whole turn.
    All draws consume the state RNG in a fixed order.
    """
    tank = state.tank_by_id(enemy_id)
    cfg = state.config

    if float(state.rng.random()) < cfg.p_advance:
        direction = _advance_direction(state, tank.pos)
        if direction is None:
            direction = tank.facing
    else:
        direction = _DIR_ORDER[int(state.rng.integers(4))]

    if not state.has_live_bullet(enemy_id):
        if float(state.rng.random()) < cfg.p_fire:
            return Action.FIRE

    return {
        Direction.UP: Action.UP,
        Direction.DOWN: Action.DOWN,
        Direction.LEFT: Action.LEFT,
        Direction.RIGHT: Action.RIGHT,
    }[direction]


def _advance_direction(state: GameState, pos: Cell) -> Optional[Direction]:
    dist = state.dist_to_base()
    best: Optional[Direction] = None
    best_d = None
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
    return best


# -- stepping -------------------------------------------------------------


def step(state: GameState, player_actions: Dict[str, Action]) -> StepOutcome:
    """Advance exactly one tick, mutating ``state`` in place.

    Fixed phase order: player actions, enemy actions, bullet advance
    (swept, ``bullet_speed`` cells), spawning, termination check. Only
    player kills earn reward (``reward_per_kill`` each).
    """
    if state.status != Status.RUNNING:
        raise SteppedTerminalState(f"cannot step a {state.status.value} state")

    rewards: Dict[str, float] = {p.agent_id: 0.0 for p in state.players()}
    events: List[dict] = []

    for tank in sorted(state.alive_players(), key=lambda t: t.agent_id):
        if tank.agent_id not in player_actions:
            raise MissingAction(f"no action for alive player {tank.agent_id}")
        _apply_action(state, tank, player_actions[tank.agent_id])

    for tank in sorted(state.alive_enemies(), key=lambda t: t.id):
        _apply_action(state, tank, enemy_policy(state, tank.id))

    base_destroyed = _advance_bullets(state, rewards, events)

    spawn_enemies(state)

    state.tick += 1
    if base_destroyed:
        state.status = Status.BASE_DESTROYED
    elif not state.alive_players():
        state.status = Status.ALL_PLAYERS_DEAD
    elif state.tick >= state.config.step_limit:
        state.status = Status.STEP_LIMIT

    for aid, r in rewards.items():
        state.agent_scores[aid] += r

    return StepOutcome(
        rewards=rewards,
        events=events,
        terminal=state.status != Status.RUNNING,
    )


def _apply_action(state: GameState, tank: Tank, action: Action) -> None:
    if action == Action.NOOP:
        return
    if action == Action.FIRE:
        if not state.has_live_bullet(tank.id):
            state.bullets.append(
                Bullet(owner=tank.id, owner_side=tank.side, pos=tank.pos,
                       dir=tank.facing)
            )
        return
    direction = MOVE_ACTIONS[action]
    tank.facing = direction
    dc, dr = DIR_DELTAS[direction]
    dest = (tank.pos[0] + dc, tank.pos[1] + dr)
    if state.passable(dest):
        tank.pos = dest


def _advance_bullets(state: GameState, rewards: Dict[str, float],
                     events: List[dict]) -> bool:
    """Swept bullet movement; returns True if the base was hit."""
    base_destroyed = False
    surviving: List[Bullet] = []
    for bullet in state.bullets:
        removed = False
        dc, dr = DIR_DELTAS[bullet.dir]
        for _ in range(state.config.bullet_speed):
            cell = (bullet.pos[0] + dc, bullet.pos[1] + dr)
            if not state.in_bounds(cell):
                removed = True
                break
            bullet.pos = cell
            target = state.tank_at(cell)
            if target is not None and _hits(bullet, target):
                target.alive = False
                if target.side == Side.ENEMY:
                    owner = _owner_agent(state, bullet)
                    if owner is not None:
                        rewards[owner] += state.config.reward_per_kill
                    events.append(
                        {"kind": "enemy_destroyed", "by": owner,
                         "enemy_id": target.id, "cell": list(cell)}
                    )
                    state.pending_spawns.append(state.config.respawn_delay)
                else:
                    events.append(
                        {"kind": "player_destroyed",
                         "agent_id": target.agent_id, "cell": list(cell)}
                    )
                removed = True
                break
            tile = state.tile(cell)
            if tile == TileKind.BASE:
                events.append({"kind": "base_hit", "cell": list(cell)})
                base_destroyed = True
                removed = True
                break
            if tile == TileKind.HARD_WALL:
                removed = True
                break
            if tile == TileKind.SOFT_WALL:
                state.grid[cell[1], cell[0]] = TileKind.EMPTY
                state._invalidate_paths()
                events.append({"kind": "wall_destroyed", "cell": list(cell)})
                removed = True
                break
            # EMPTY and POND let the bullet pass.
        if not removed:
            surviving.append(bullet)
    state.bullets = surviving
    return base_destroyed


def _hits(bullet: Bullet, target: Tank) -> bool:
    # Player bullets kill enemies only; enemy bullets kill players only.
    if bullet.owner == target.id:
        return False
    if bullet.owner_side == Side.PLAYER:
        return target.side == Side.ENEMY
    return target.side == Side.PLAYER


def _owner_agent(state: GameState, bullet: Bullet) -> Optional[str]:
    if bullet.owner_side != Side.PLAYER:
        return None
    try:
        return state.tank_by_id(bullet.owner).agent_id
    except KeyError:
        return None
