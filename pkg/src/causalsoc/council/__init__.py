"""Dual masked value-function policies trained by adversarial self-play."""

from .net import (
    AdamState,
    ValueNet,
    clip_gradients,
    double_dqn_target,
    epsilon_greedy,
    masked_greedy,
    masked_softmax,
    polyak_update,
)
from .policy import DivergenceScore, Arbitration, arbitrate, divergence
from .replay import ReplayBuffer
from .training import TrainConfig, TrainResult, train_self_play

__all__ = [
    "AdamState",
    "Arbitration",
    "DivergenceScore",
    "ReplayBuffer",
    "TrainConfig",
    "TrainResult",
    "ValueNet",
    "arbitrate",
    "clip_gradients",
    "divergence",
    "double_dqn_target",
    "epsilon_greedy",
    "masked_greedy",
    "masked_softmax",
    "polyak_update",
    "train_self_play",
]
