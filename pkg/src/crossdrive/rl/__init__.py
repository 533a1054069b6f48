"""Learning stack: observations, rewards, networks, PPO."""

from .actions import scale_action, scale_control
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import ACTION_DIMS, ENDTOEND, SPEEDREF, Adam, GaussianPolicy, MLP
from .observation import OBS_DIM, ObsConfig, build_observation
from .ppo import (PPOConfig, TransitionBatch, UpdateStats, compute_gae,
                  normalize_advantages, ppo_loss_and_grads, ppo_update)
from .reward import TERMINAL_REWARDS, RewardBreakdown, compute_reward

__all__ = [
    "ACTION_DIMS",
    "Adam",
    "ENDTOEND",
    "GaussianPolicy",
    "MLP",
    "OBS_DIM",
    "ObsConfig",
    "PPOConfig",
    "RewardBreakdown",
    "SPEEDREF",
    "TERMINAL_REWARDS",
    "TransitionBatch",
    "UpdateStats",
    "build_observation",
    "compute_gae",
    "compute_reward",
    "load_checkpoint",
    "normalize_advantages",
    "ppo_loss_and_grads",
    "ppo_update",
    "save_checkpoint",
    "scale_action",
    "scale_control",
]
