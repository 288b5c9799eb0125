"""Rendering and observation preprocessing.

GameState -> RGB frame -> grayscale, area-averaged downscale to the
network resolution -> per-agent frame stack, with action repeat handled
at the decision-step level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .engine import (
    Action,
    GameState,
    Side,
    StepOutcome,
    TileKind,
    step,
)


class DimensionMismatch(Exception):
    pass


# Fixed render palette (RGB).
PALETTE = {
    "background": (0, 0, 0),
    "soft_wall": (170, 90, 40),
    "hard_wall": (120, 120, 120),
    "pond": (40, 90, 200),
    "base": (230, 230, 60),
    "player_p0": (240, 200, 40),   # yellow tank
    "player_p1": (60, 200, 60),    # green tank
    "enemy": (200, 60, 60),
    "bullet": (255, 255, 255),
}

_TILE_COLORS = {
    TileKind.EMPTY: PALETTE["background"],
    TileKind.SOFT_WALL: PALETTE["soft_wall"],
    TileKind.HARD_WALL: PALETTE["hard_wall"],
    TileKind.POND: PALETTE["pond"],
    TileKind.BASE: PALETTE["base"],
}


@dataclass
class ObsConfig:
    native_size: Tuple[int, int] = (104, 104)  # (h, w) pixels
    net_size: Tuple[int, int] = (84, 84)
    action_repeat: int = 5
    frame_stack: int = 4
    gray_weights: Tuple[float, float, float] = (0.299, 0.587, 0.114)

    def __post_init__(self) -> None:
        if self.action_repeat < 1 or self.frame_stack < 1:
            raise ValueError("action_repeat and frame_stack must be >= 1")
        if not (self.delta[0] < 1 and self.delta[1] < 1):
            raise ValueError("rescale factor must be < 1 (net smaller than native)")

    @property
    def delta(self) -> Tuple[float, float]:
        """Spatial rescale factor per axis, always below 1."""
        return (
            self.net_size[0] / self.native_size[0],
            self.net_size[1] / self.native_size[1],
        )

    @classmethod
    def for_state(cls, state: GameState, **kwargs) -> "ObsConfig":
        px = state.config.cell_px
        return cls(native_size=(state.height * px, state.width * px), **kwargs)

    def to_dict(self) -> dict:
        return {
            "native_size": list(self.native_size),
            "net_size": list(self.net_size),
            "action_repeat": self.action_repeat,
            "frame_stack": self.frame_stack,
            "gray_weights": list(self.gray_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObsConfig":
        return cls(
            native_size=tuple(d.get("native_size", (104, 104))),
            net_size=tuple(d.get("net_size", (84, 84))),
            action_repeat=d.get("action_repeat", 5),
            frame_stack=d.get("frame_stack", 4),
            gray_weights=tuple(d.get("gray_weights", (0.299, 0.587, 0.114))),
        )


def render_frame(state: GameState) -> np.ndarray:
    """Render the state to an RGB uint8 array of shape (H, W, 3).

    Each cell becomes a solid cell_px block; bullets are 2x2 dots at the
    cell centre. Rendering is a pure function of the state.
    """
    px = state.config.cell_px
    frame = np.zeros((state.height * px, state.width * px, 3), dtype=np.uint8)
    for r in range(state.height):
        for c in range(state.width):
            color = _TILE_COLORS[state.tile((c, r))]
            if color != (0, 0, 0):
                frame[r * px:(r + 1) * px, c * px:(c + 1) * px] = color
    for tank in state.tanks:
        if not tank.alive:
            continue
        if tank.side == Side.PLAYER:
            color = PALETTE.get(f"player_{tank.agent_id}", PALETTE["player_p0"])
        else:
            color = PALETTE["enemy"]
        c, r = tank.pos
        frame[r * px:(r + 1) * px, c * px:(c + 1) * px] = color
    half = px // 2
    for bullet in state.bullets:
        c, r = bullet.pos
        y, x = r * px + half - 1, c * px + half - 1
        frame[y:y + 2, x:x + 2] = PALETTE["bullet"]
    return frame


def resize_weights(src: int, dst: int) -> np.ndarray:
    """Area-average resampling matrix (dst x src), rows summing to 1.

    Entry [i, j] is the fraction of destination pixel i covered by source
    pixel j, i.e. exact box-filter downscaling.
    """
    w = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[i, j] = overlap / scale
    return w


_resize_cache: Dict[Tuple[int, int], np.ndarray] = {}


def _resize_matrix(src: int, dst: int) -> np.ndarray:
    key = (src, dst)
    if key not in _resize_cache:
        _resize_cache[key] = resize_weights(src, dst)
    return _resize_cache[key]


def area_resize(img: np.ndarray, out_hw: Tuple[int, int]) -> np.ndarray:
    """Area-average resize of a 2-D float image."""
    wr = _resize_matrix(img.shape[0], out_hw[0])
    wc = _resize_matrix(img.shape[1], out_hw[1])
    return wr @ img.astype(np.float64) @ wc.T


def preprocess(frame: np.ndarray, cfg: ObsConfig) -> np.ndarray:
    """RGB frame -> grayscale image at net_size, values in [0, 255]."""
    if frame.shape[:2] != cfg.native_size:
        raise DimensionMismatch(
            f"frame is {frame.shape[:2]}, expected {cfg.native_size}"
        )
    gray = frame.astype(np.float64) @ np.asarray(cfg.gray_weights)
    return area_resize(gray, cfg.net_size).astype(np.float32)


class FrameStack:
    """Sliding window of the most recent preprocessed frames for one agent.

    The observation tensor has shape (net_h, net_w, frame_stack), values
    in [0, 1], newest frame last; slots not yet filled stay zero.
    """

    def __init__(self, cfg: ObsConfig):
        self.cfg = cfg
        h, w = cfg.net_size
        self._buf = np.zeros((h, w, cfg.frame_stack), dtype=np.float32)
        self.pushes = 0

    def push(self, gray: np.ndarray) -> None:
        self._buf[:, :, :-1] = self._buf[:, :, 1:]
        self._buf[:, :, -1] = gray / 255.0
        self.pushes += 1

    def tensor(self) -> np.ndarray:
        return self._buf.copy()

    def reset(self) -> None:
        self._buf[:] = 0.0
        self.pushes = 0


class ObservationPipeline:
    """Owns one frame stack per player agent for one environment replica."""

    def __init__(self, cfg: ObsConfig, agent_ids: List[str]):
        self.cfg = cfg
        self.stacks: Dict[str, FrameStack] = {
            aid: FrameStack(cfg) for aid in agent_ids
        }

    def observe(self, state: GameState) -> Dict[str, np.ndarray]:
        gray = preprocess(render_frame(state), self.cfg)
        out = {}
        for aid, stack in self.stacks.items():
            stack.push(gray)
            out[aid] = stack.tensor()
        return out

    def reset(self) -> None:
        for stack in self.stacks.values():
            stack.reset()


def repeat_and_observe(
    state: GameState,
    player_actions: Dict[str, Action],
    pipeline: ObservationPipeline,
) -> Tuple[Dict[str, np.ndarray], Dict[str, float], bool, List[dict]]:
    """One decision step: apply the same actions for action_repeat engine
    ticks (stopping early on terminal), sum rewards, then push the final
    frame into every agent's stack.

    Returns (obs per agent, summed rewards per agent, terminal, events).
    """
    cfg = pipeline.cfg
    rewards: Dict[str, float] = {
        t.agent_id: 0.0 for t in state.players() if t.agent_id
    }
    events: List[dict] = []
    terminal = False
    for _ in range(cfg.action_repeat):
        actions = {
            t.agent_id: player_actions.get(t.agent_id, Action.NOOP)
            for t in state.alive_players()
        }
        outcome = step(state, actions)
        for aid, r in outcome.rewards.items():
            rewards[aid] = rewards.get(aid, 0.0) + r
        events.extend(outcome.events)
        if outcome.terminal:
            terminal = True
            break
    obs = pipeline.observe(state)
    return obs, rewards, terminal, events
