"""Deterministic toy continuous-control environments and tiered datasets.

Two environments:

* ``pointmass``: 2-D position plus a fixed goal at the origin in the state,
  position moves by 0.1 * clipped action per step, reward is the negative
  distance to the goal after the move, terminal inside radius 0.05,
  horizon 100.
* ``pendulum``: one-link torque-controlled swing-up with the usual
  cos/sin/velocity observation, horizon 200, no terminal state.

Dataset tiers mirror the usual offline-quality ladder: a uniform random
policy, a scripted expert, noisy/mixed variants in between.  Reference
returns for score normalization were measured once with 10k-episode rollouts
(see the constants next to each registry entry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Origin, Rng, Tier, Trajectory, Transition


class Env:
    """Base interface: reset with external rng, pure-function step, horizon."""

    name: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    horizon: int
    r_random: float
    r_expert: float

    def __init__(self):
        self._state: np.ndarray | None = None
        self._t = 0
        self._done = False

    def reset(self, rng: Rng) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, state, action):
        raise NotImplementedError

    def step(self, action: np.ndarray):
        """Advance one step; returns (next_state, reward, done).

        done marks the terminal predicate only; hitting the horizon ends
        the episode without setting done (time-limit truncation).
        """
        if self._state is None:
            raise RuntimeError("reset() must be called before step()")
        if self._done or self._t >= self.horizon:
            raise RuntimeError("step() called on a finished episode")
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        if a.shape != (self.action_dim,):
            raise ValueError(f"expected action shape ({self.action_dim},), got {a.shape}")
        next_state, reward, done = self._dynamics(self._state, a)
        self._state = next_state
        self._t += 1
        self._done = done
        return next_state, reward, done

    @property
    def t(self) -> int:
        return self._t

    @property
    def truncated(self) -> bool:
        return not self._done and self._t >= self.horizon

    def normalized_score(self, mean_return: float) -> float:
        return 100.0 * (mean_return - self.r_random) / (self.r_expert - self.r_random)

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointMass(Env):
    name = "pointmass"
    state_dim = 4  # (pos_x, pos_y, goal_x, goal_y), goal pinned to the origin
    action_dim = 2
    action_low = -1.0
    action_high = 1.0
    horizon = 100
    goal_radius = 0.05
    step_size = 0.1
    medium_eps = 0.85  # medium tier: per-step chance of acting randomly
    # 10k-episode reference rollouts, seeds 12001 (random) / 12002 (expert)
    r_random = -88.80
    r_expert = -2.95

    def reset(self, rng: Rng) -> np.ndarray:
        pos = rng.uniform(-1.0, 1.0, 2)
        self._state = np.array([pos[0], pos[1], 0.0, 0.0])
        self._t = 0
        self._done = False
        return self._state

    def _dynamics(self, state, action):
        pos = state[:2] + self.step_size * action
        dist = float(np.linalg.norm(pos))
        next_state = np.array([pos[0], pos[1], 0.0, 0.0])
        return next_state, -dist, dist < self.goal_radius

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        pos = state[:2]
        dist = np.linalg.norm(pos)
        if dist < 1e-12:
            return np.zeros(2)
        return -pos / dist


class Pendulum(Env):
    name = "pendulum"
    state_dim = 3  # (cos theta, sin theta, theta_dot), theta = 0 upright
    action_dim = 1
    action_low = -2.0
    action_high = 2.0
    horizon = 200
    medium_eps = 0.5
    # 10k-episode reference rollouts, seeds 12001 (random) / 12002 (expert)
    r_random = -1225.32
    r_expert = -150.25

    g = 10.0
    m = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0

    def reset(self, rng: Rng) -> np.ndarray:
        self._theta = rng.uniform(-math.pi, math.pi)
        self._theta_dot = rng.uniform(-1.0, 1.0)
        self._state = self._obs()
        self._t = 0
        self._done = False
        return self._state

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self._theta), math.sin(self._theta), self._theta_dot])

    def _dynamics(self, state, action):
        u = float(action[0])
        th, thdot = self._theta, self._theta_dot
        angle = ((th + math.pi) % (2.0 * math.pi)) - math.pi
        cost = angle * angle + 0.1 * thdot * thdot + 0.001 * u * u
        thdot = thdot + (1.5 * self.g / self.length * math.sin(th)
                         + 3.0 / (self.m * self.length**2) * u) * self.dt
        thdot = float(np.clip(thdot, -self.max_speed, self.max_speed))
        th = th + thdot * self.dt
        self._theta, self._theta_dot = th, thdot
        return self._obs(), -cost, False

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        """Energy-pumping swing-up with a PD hold near the top."""
        cos_th, sin_th, thdot = state
        angle = math.atan2(sin_th, cos_th)
        if cos_th > 0.9 and abs(thdot) < 2.5:
            u = -8.0 * angle - 2.0 * thdot
        else:
            inertia = self.m * self.length**2 / 3.0
            energy = 0.5 * inertia * thdot * thdot + 0.5 * self.m * self.g * self.length * (cos_th - 1.0)
            u = 4.0 * thdot * (-energy)
        return np.array([float(np.clip(u, self.action_low, self.action_high))])


REGISTRY: dict[str, type[Env]] = {
    "pointmass": PointMass,
    "pendulum": Pendulum,
}


def make_env(name: str) -> Env:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown env {name!r}; have {sorted(REGISTRY)}") from None


@dataclass(frozen=True)
class TierSpec:
    """Which behavior policy generates the data and how many episodes."""

    tier: Tier
    episodes: int = 200

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("need at least one episode")
        if self.tier is Tier.CUSTOM:
            raise ValueError("custom datasets are loaded from files, not generated")


def _behavior(env: Env, tier: Tier, episode_idx: int, total_episodes: int, rng: Rng):
    """Per-episode action function for a tier's behavior policy."""
    lo, hi = env.action_low, env.action_high

    def random_action(state):
        return rng.uniform(lo, hi, env.action_dim)

    def expert_action(state):
        return env.expert_action(state)

    def noisy_expert(sigma):
        def act(state):
            return env.expert_action(state) + sigma * rng.normal(env.action_dim)
        return act

    def medium_action(state):
        # one mediocre stationary policy: expert with per-step chance
        # env.medium_eps of acting uniformly at random (plain gaussian noise
        # barely dents returns on these tasks once actions are clipped)
        if rng.uniform() < env.medium_eps:
            return random_action(state)
        return expert_action(state)

    if tier is Tier.RANDOM:
        return random_action
    if tier is Tier.EXPERT:
        return expert_action
    if tier is Tier.MEDIUM:
        return medium_action
    if tier is Tier.MEDIUM_REPLAY:
        frac = episode_idx / max(total_episodes - 1, 1)
        return noisy_expert(3.0 + (0.1 - 3.0) * frac)
    if tier is Tier.MEDIUM_EXPERT:
        return expert_action if episode_idx % 2 == 0 else medium_action
    raise ValueError(f"cannot generate tier {tier}")


def rollout_episode(env: Env, action_fn, rng: Rng) -> list[tuple]:
    """One episode as a list of (s, a, r, s', done) with env-clipped actions."""
    state = env.reset(rng)
    steps = []
    while True:
        action = np.clip(np.asarray(action_fn(state), dtype=np.float64),
                         env.action_low, env.action_high)
        next_state, reward, done = env.step(action)
        steps.append((state, action, reward, next_state, done))
        state = next_state
        if done or env.truncated:
            return steps


def _assemble(env: Env, episodes: list[list[tuple]], tier: Tier) -> Dataset:
    ds = Dataset(state_dim=env.state_dim, action_dim=env.action_dim, tier=tier)
    for traj_id, steps in enumerate(episodes):
        indices = []
        for (s, a, r, sn, done) in steps:
            indices.append(len(ds.transitions))
            ds.transitions.append(Transition(s, a, float(r), sn, bool(done),
                                             Origin.OFFLINE, traj_id))
        ds.trajectories.append(Trajectory(id=traj_id, transition_indices=indices))
    return ds


def _ordering_ok(env: Env, tier: Tier, mean_return: float) -> bool:
    margin = 0.2 * (env.r_expert - env.r_random)
    if tier is Tier.RANDOM:
        return mean_return < env.r_random + margin
    if tier is Tier.MEDIUM:
        return env.r_random + margin < mean_return < env.r_expert - margin
    if tier is Tier.EXPERT:
        return mean_return > env.r_expert - margin
    return True  # mixture tiers carry no ordering constraint of their own


def generate_dataset(env: Env, spec: TierSpec, rng: Rng) -> Dataset:
    """Roll out the tier's behavior policy and package the episodes.

    The random < medium < expert mean-return ordering (with a 20% margin of
    the random-expert gap) is verified against the env's reference returns;
    on violation the generation retries with a fresh substream, erroring
    after three attempts.
    """
    for attempt in range(3):
        sub = rng.spawn(1000 + attempt)
        episodes = [
            rollout_episode(env, _behavior(env, spec.tier, i, spec.episodes, sub), sub)
            for i in range(spec.episodes)
        ]
        ds = _assemble(env, episodes, spec.tier)
        if _ordering_ok(env, spec.tier, ds.mean_episode_return()):
            ds.validate()
            return ds
    raise RuntimeError(
        f"tier {spec.tier.value} dataset failed the return-ordering check three times "
        f"(last mean return {ds.mean_episode_return():.2f})"
    )
