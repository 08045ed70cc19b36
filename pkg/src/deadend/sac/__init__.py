"""Soft actor-critic learner built on numpy."""

from deadend.sac.agent import Batch, SACAgent, SACConfig, load_checkpoint, save_checkpoint
from deadend.sac.buffer import ReplayBuffer, load_buffer, save_buffer
from deadend.sac.train import TrainConfig, TrainState, train

__all__ = [
    "Batch", "SACAgent", "SACConfig", "load_checkpoint", "save_checkpoint",
    "ReplayBuffer", "load_buffer", "save_buffer", "TrainConfig", "TrainState", "train",
]
