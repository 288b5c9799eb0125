"""Shared fixtures: bundled stages and small controlled stages."""

import numpy as np
import pytest

from tankdef.config import bundled_stage
from tankdef.engine import EngineConfig, load_stage

# A single enemy sealed in a pond pocket: it can never move (enemies
# cannot enter ponds) while bullets fly straight through, so shot
# outcomes are exact.
BOX_STAGE = """\
#####
#~E~#
#~~~#
#.1.#
#..B#
#####
"""

# Open corridor: player can drive and shoot the base or the walls.
CORRIDOR_STAGE = """\
#########
#E#.....#
###.....#
#1..s..B#
#########
"""


@pytest.fixture(scope="session")
def default_stage_text():
    return bundled_stage("default")


@pytest.fixture(scope="session")
def desk_stage_text():
    return bundled_stage("desk")


@pytest.fixture
def quiet_config():
    """Enemies never fire and never chase: only facing draws remain."""
    return EngineConfig(p_fire=0.0, p_advance=0.0, max_enemies=1)


@pytest.fixture
def box_state(quiet_config):
    return load_stage(BOX_STAGE, quiet_config, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
