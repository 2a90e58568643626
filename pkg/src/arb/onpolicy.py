"""Pure functions for on-policyness scores and trajectory sampling weights.

The score of a stored transition is the current policy's clipped, max-shifted
log-likelihood of its action, exponentiated into (0, 1].  A trajectory's
sampling weight is the geometric mean of its transitions' scores, each first
raised to 1/lambda.  All aggregation happens in log space; exponentiation is
deferred to the very end so trajectories hundreds of steps long cannot
underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Level(Enum):
    TRAJECTORY = "trajectory"
    TRANSITION = "transition"


@dataclass(frozen=True)
class OnPolicyConfig:
    """Clip bounds, temperature and weighting granularity.

    p_lo/p_hi clamp the (optionally per-action-dimension) log-likelihood for
    numerical stability.  lam is the temperature: small values sharpen
    sampling toward high on-policyness data, large values approach uniform.
    """

    p_lo: float = -12.0
    p_hi: float = 7.0
    lam: float = 0.5
    normalize_by_action_dim: bool = True
    level: Level = Level.TRAJECTORY

    def __post_init__(self):
        if not self.p_lo < self.p_hi:
            raise ValueError(f"p_lo must be < p_hi, got [{self.p_lo}, {self.p_hi}]")
        if not self.lam > 0:
            raise ValueError(f"temperature must be positive, got {self.lam}")


def clipped_logp(raw_logp, cfg: OnPolicyConfig, action_dim: int):
    """Clamp a raw policy log-likelihood into [p_lo, p_hi].

    Normalization by the action dimension (when enabled) happens before
    clipping, so the fixed clip window keeps the same meaning across
    environments with different action sizes.  Accepts scalars or arrays.
    """
    if action_dim < 1:
        raise ValueError(f"action_dim must be >= 1, got {action_dim}")
    raw = np.asarray(raw_logp, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite log-likelihood")
    divisor = action_dim if cfg.normalize_by_action_dim else 1
    out = np.clip(raw / divisor, cfg.p_lo, cfg.p_hi)
    return float(out) if np.isscalar(raw_logp) else out


def onpolicyness(clipped_logps, p_max: float):
    """Map clipped log-likelihoods to scores exp(clipped - p_max) in (0, 1].

    The caller supplies p_max, the maximum clipped log-likelihood over every
    transition currently buffered; any input above it is a contract violation.
    """
    c = np.asarray(clipped_logps, dtype=np.float64)
    if c.size and float(np.max(c)) > p_max:
        raise ValueError(
            f"clipped log-likelihood {float(np.max(c))} exceeds p_max {p_max}"
        )
    return np.exp(c - p_max)


def trajectory_weight(clipped_logps, p_max: float, cfg: OnPolicyConfig) -> float:
    """Sampling weight of a whole trajectory.

    Equals the geometric mean of the member transitions' on-policyness
    scores, each tempered by 1/lambda:

        exp( (1/n) * sum_t (clipped_t - p_max) / lambda )

    computed entirely in log space.  Result lies in (0, 1], hitting 1 exactly
    when every transition attains the global maximum.
    """
    c = np.asarray(clipped_logps, dtype=np.float64)
    if c.size == 0:
        raise ValueError("cannot weight an empty trajectory")
    if float(np.max(c)) > p_max:
        raise ValueError(
            f"clipped log-likelihood {float(np.max(c))} exceeds p_max {p_max}"
        )
    return float(np.exp(np.mean(c - p_max) / cfg.lam))


def transition_weight(clipped_logp: float, p_max: float, cfg: OnPolicyConfig) -> float:
    """Weight of a single transition: the length-1 trajectory case."""
    return trajectory_weight([clipped_logp], p_max, cfg)
