"""Adaptive, on-policyness-weighted experience replay for offline-to-online RL."""

from .algo import Agent, Hyper, expectile_loss
from .buffer import Adaptive, Minibatch, Naive, Parallel, ReplayBuffer, SamplingMode, TopN
from .core import Dataset, Origin, Rng, Tier, Trajectory, Transition, dataset_load, dataset_save
from .envs import TierSpec, generate_dataset, make_env
from .harness import RunConfig, RunMetrics, parse_config, run, sweep
from .onpolicy import (
    Level,
    OnPolicyConfig,
    clipped_logp,
    onpolicyness,
    trajectory_weight,
    transition_weight,
)
from .plotting import plot

__version__ = "0.1.0"

__all__ = [
    "Agent", "Hyper", "expectile_loss",
    "Adaptive", "Minibatch", "Naive", "Parallel", "ReplayBuffer", "SamplingMode", "TopN",
    "Dataset", "Origin", "Rng", "Tier", "Trajectory", "Transition",
    "dataset_load", "dataset_save",
    "TierSpec", "generate_dataset", "make_env",
    "RunConfig", "RunMetrics", "parse_config", "run", "sweep",
    "Level", "OnPolicyConfig", "clipped_logp", "onpolicyness",
    "trajectory_weight", "transition_weight",
    "plot",
]
