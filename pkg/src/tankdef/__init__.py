"""Multiple Tank Defence: environment, goal maps, dual-stream A3C
training, evaluation harness and live co-play server."""

__version__ = "0.1.0"

from .engine import (  # noqa: F401
    Action,
    EngineConfig,
    GameState,
    Status,
    enemy_policy,
    load_stage,
    spawn_enemies,
    step,
)
from .observation import ObsConfig, preprocess, render_frame  # noqa: F401
