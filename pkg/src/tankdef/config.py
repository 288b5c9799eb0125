"""Config file loading (YAML) and bundled data access."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional, Union

import yaml

from .engine import EngineConfig
from .mts import ConfigError, StrategyConfig
from .observation import ObsConfig

PathLike = Union[str, Path]


def bundled_stage(name: str) -> str:
    """Text of a stage shipped with the package ("default" or "desk")."""
    return resources.files("tankdef.data").joinpath(f"{name}_stage.txt").read_text()


def load_stage_text(path_or_name: PathLike) -> str:
    p = Path(path_or_name)
    if p.exists():
        return p.read_text()
    try:
        return bundled_stage(str(path_or_name))
    except FileNotFoundError:
        raise ConfigError(f"stage {path_or_name!r} is neither a file nor a "
                          f"bundled stage name")


def _read_config_text(path_or_name: PathLike) -> str:
    """Text of a config file, or of a bundled config by bare name
    (e.g. "default_strategy" -> tankdef/data/default_strategy.yaml)."""
    p = Path(path_or_name)
    if p.exists():
        return p.read_text()
    try:
        return resources.files("tankdef.data").joinpath(
            f"{path_or_name}.yaml"
        ).read_text()
    except FileNotFoundError:
        raise ConfigError(
            f"config {path_or_name!r} is neither a file nor a bundled "
            f"config name"
        )


def _load_yaml(path: PathLike) -> dict:
    try:
        data = yaml.safe_load(_read_config_text(path)) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_engine_config(path: Optional[PathLike]) -> EngineConfig:
    if path is None:
        return EngineConfig()
    try:
        return EngineConfig.from_dict(_load_yaml(path))
    except TypeError as e:
        raise ConfigError(f"bad engine config {path}: {e}") from e


def load_obs_config(path: Optional[PathLike]) -> ObsConfig:
    if path is None:
        return ObsConfig()
    return ObsConfig.from_dict(_load_yaml(path))


def load_strategy_config(path: PathLike) -> StrategyConfig:
    try:
        return StrategyConfig.from_dict(_load_yaml(path))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad strategy config {path}: {e}") from e


def load_run_config(path: PathLike) -> dict:
    """Training run config: stage/strategy/engine/obs paths, hyperparams,
    output directory. Returned as a plain dict, validated downstream."""
    return _load_yaml(path)
