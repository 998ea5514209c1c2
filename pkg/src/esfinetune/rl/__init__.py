"""Actor-critic training on dense surrogate rewards."""

from esfinetune.rl.agents import (
    Algorithm,
    Critic,
    DeterministicAgent,
    SacAgent,
    SacConfig,
    Td3Config,
    TrainingError,
    deterministic_actor_grad,
    make_agent,
    polyak_update,
)
from esfinetune.rl.buffer import Batch, ReplayBuffer
from esfinetune.rl.optim import Adam
from esfinetune.rl.training import TrainConfig, TrainResult, evaluate, train

__all__ = [
    "Adam",
    "Algorithm",
    "Batch",
    "Critic",
    "DeterministicAgent",
    "ReplayBuffer",
    "SacAgent",
    "SacConfig",
    "Td3Config",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "deterministic_actor_grad",
    "evaluate",
    "make_agent",
    "polyak_update",
    "train",
]
