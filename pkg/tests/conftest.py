import dataclasses

import numpy as np
import pytest

from platoon_frl.config import ExperimentConfig, ScheduleConfig, preset
from platoon_frl.ddpg import AgentConfig
from platoon_frl.dynamics import EpisodeSpec

TINY_AGENT = AgentConfig(
    batch_size=8,
    buffer_capacity=500,
    actor_hidden=(8, 6),
    critic_state_units=5,
    critic_action_units=7,
    critic_hidden=6,
    actor_lr=1e-3,
    critic_lr=1e-3,
)


def tiny(name: str = "nofrl-2veh", steps: int = 20, episodes: int = 3, **changes) -> ExperimentConfig:
    """A preset shrunk to toy networks and short episodes for fast tests."""
    cfg = preset(name)
    return dataclasses.replace(
        cfg,
        episodes=episodes,
        episode=dataclasses.replace(cfg.episode, steps=steps),
        agent=TINY_AGENT,
        **changes,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
