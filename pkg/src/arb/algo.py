"""Minimal in-sample actor-critic for offline pretraining and online fine-tuning.

Value learning is expectile regression of the min of two target critics,
critics regress on the one-step TD target bootstrapped through V, and the
policy is extracted by advantage-weighted log-likelihood regression.  All
three losses touch only state-action pairs that appear in the batch, so the
critics are never queried at actions the policy invented; a forward-call
counter on each critic makes that checkable from the outside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward
from .buffer import Minibatch
from .core import Dataset, Rng
from .envs import Env
from .nets import Adam, GaussianPolicy, Mlp, load_checkpoint, save_checkpoint, soft_update

ADV_EXP_CLIP = 100.0  # cap on the exponent of the advantage weight


@dataclass(frozen=True)
class Hyper:
    discount: float = 0.99
    expectile: float = 0.7
    awr_beta: float = 3.0
    soft_update_rate: float = 0.005
    learning_rate: float = 3e-4
    hidden: tuple = (32, 32)

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if not 0.0 < self.expectile < 1.0:
            raise ValueError("expectile must be in (0, 1)")
        if not 0.0 < self.soft_update_rate <= 1.0:
            raise ValueError("soft update rate must be in (0, 1]")


def expectile_loss(diff, tau: float):
    """Asymmetric squared error |tau - 1{diff<0}| * diff^2, elementwise."""
    d = np.asarray(diff, dtype=np.float64)
    weight = np.where(d < 0, 1.0 - tau, tau)
    out = weight * d * d
    return float(out) if np.isscalar(diff) else out


class Agent:
    """Policy, twin critics, value net, target copies, and their optimizers."""

    def __init__(self, state_dim: int, action_dim: int, hyper: Hyper = Hyper(),
                 rng: Rng | None = None):
        rng = rng or Rng(0)
        self.hyper = hyper
        self.state_dim = state_dim
        self.action_dim = action_dim
        h = list(hyper.hidden)
        self.policy = GaussianPolicy(state_dim, action_dim, tuple(h), rng=rng.spawn(1))
        self.q1 = Mlp([state_dim + action_dim, *h, 1], "relu", rng.spawn(2))
        self.q2 = Mlp([state_dim + action_dim, *h, 1], "relu", rng.spawn(3))
        self.v = Mlp([state_dim, *h, 1], "relu", rng.spawn(4))
        self.target_q1 = self.q1.copy()
        self.target_q2 = self.q2.copy()
        lr = hyper.learning_rate
        self.policy_opt = Adam(self.policy.params(), lr)
        self.q_opt = Adam(self.q1.params() + self.q2.params(), lr)
        self.v_opt = Adam(self.v.params(), lr)
        self.update_count = 0

    # -- losses -------------------------------------------------------------

    def value_loss(self, states, actions, sa=None) -> tuple[Tensor, np.ndarray]:
        """Expectile regression of V toward min of the target critics.

        Returns the loss tensor and the (constant) target-Q values so the
        policy step can reuse them without touching the critics again.
        """
        if sa is None:
            sa = np.concatenate([states, actions], axis=1)
        q_targets = np.minimum(self.target_q1.predict(sa), self.target_q2.predict(sa))[:, 0]
        v = self.v.forward(states)
        diff = Tensor(q_targets) - v.sum(axis=1)
        asym = np.where(diff.data < 0, 1.0 - self.hyper.expectile, self.hyper.expectile)
        return (diff.square() * asym).mean(), q_targets

    def critic_loss(self, states, actions, rewards, next_states, dones, sa=None) -> Tensor:
        """Squared TD error for both critics against r + gamma * (1-done) * V(s')."""
        v_next = self.v.predict(next_states)[:, 0]
        td = rewards + self.hyper.discount * (1.0 - dones.astype(np.float64)) * v_next
        if sa is None:
            sa = np.concatenate([states, actions], axis=1)
        e1 = self.q1.forward(sa).sum(axis=1) - td
        e2 = self.q2.forward(sa).sum(axis=1) - td
        return e1.square().mean() + e2.square().mean()

    def policy_loss(self, states, actions, weights) -> Tensor:
        """Weighted negative log-likelihood of the batch actions."""
        logp = self.policy.log_prob(states, actions)
        return -(logp * np.asarray(weights, dtype=np.float64)).mean()

    def advantage_weights(self, states, q_targets) -> np.ndarray:
        adv = q_targets - self.v.predict(states)[:, 0]
        return np.exp(np.minimum(self.hyper.awr_beta * adv, ADV_EXP_CLIP))

    # -- training -------------------------------------------------------------

    def update(self, batch: Minibatch) -> dict:
        """One gradient step each on V, the critics, and the policy."""
        if len(batch) == 0:
            raise ValueError("empty minibatch")
        s, a = batch.states, batch.actions
        sa = np.concatenate([s, a], axis=1)

        v_loss, q_targets = self.value_loss(s, a, sa)
        self.v_opt.zero_grad()
        backward(v_loss)
        self.v_opt.step()

        q_loss = self.critic_loss(s, a, batch.rewards, batch.next_states, batch.dones, sa)
        self.q_opt.zero_grad()
        backward(q_loss)
        self.q_opt.step()

        weights = self.advantage_weights(s, q_targets)
        p_loss = self.policy_loss(s, a, weights)
        self.policy_opt.zero_grad()
        backward(p_loss)
        self.policy_opt.step()

        soft_update(self.target_q1, self.q1, self.hyper.soft_update_rate)
        soft_update(self.target_q2, self.q2, self.hyper.soft_update_rate)
        self.update_count += 1
        losses = {
            "v_loss": float(v_loss.data),
            "q_loss": float(q_loss.data),
            "policy_loss": float(p_loss.data),
        }
        for name, value in losses.items():
            if not np.isfinite(value):
                raise FloatingPointError(f"{name} became non-finite at update {self.update_count}")
        return losses

    def pretrain(self, offline: Dataset, steps: int, batch_size: int, rng: Rng,
                 callback=None) -> None:
        """Uniform minibatch updates over the offline dataset."""
        if steps == 0:
            return
        n = len(offline)
        states = np.stack([t.state for t in offline.transitions])
        actions = np.stack([t.action for t in offline.transitions])
        rewards = np.array([t.reward for t in offline.transitions])
        next_states = np.stack([t.next_state for t in offline.transitions])
        dones = np.array([t.done for t in offline.transitions], dtype=bool)
        for k in range(steps):
            idx = np.asarray(rng.integers(0, n, batch_size))
            batch = Minibatch(idx, states[idx], actions[idx], rewards[idx],
                              next_states[idx], dones[idx], np.zeros(batch_size, dtype=bool))
            losses = self.update(batch)
            if callback is not None:
                callback(k + 1, losses)

    def evaluate(self, env: Env, episodes: int, rng: Rng) -> tuple[float, float]:
        """Mean return of the deterministic policy plus its normalized score."""
        if episodes < 1:
            raise ValueError("need at least one evaluation episode")
        returns = []
        for _ in range(episodes):
            state = env.reset(rng)
            total = 0.0
            while True:
                action = self.policy.mean_action(state)
                state, reward, done = env.step(action)
                total += reward
                if done or env.truncated:
                    break
            returns.append(total)
        mean_return = float(np.mean(returns))
        return mean_return, env.normalized_score(mean_return)

    # -- persistence ------------------------------------------------------------

    def _named_params(self) -> dict:
        named = {}
        nets = {
            "policy_trunk": self.policy.trunk, "q1": self.q1, "q2": self.q2, "v": self.v,
            "target_q1": self.target_q1, "target_q2": self.target_q2,
        }
        for prefix, net in nets.items():
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                named[f"{prefix}.w{i}"] = w
                named[f"{prefix}.b{i}"] = b
        named["policy_log_std"] = self.policy.log_std
        return named

    def save(self, path) -> None:
        save_checkpoint(path, self._named_params())

    def restore(self, path) -> None:
        loaded = load_checkpoint(path)
        for name, tensor in self._named_params().items():
            if name not in loaded:
                raise ValueError(f"checkpoint missing tensor {name}")
            if loaded[name].shape != tensor.data.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {loaded[name].shape}, "
                                 f"expected {tensor.data.shape}")
            tensor.data = loaded[name]
