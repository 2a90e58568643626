"""Small MLPs, a diagonal-Gaussian policy head, and an Adam optimizer.

Two evaluation paths exist side by side: ``forward`` builds an autodiff
graph for training, ``predict`` is plain numpy for rollouts, re-weighting
passes, and evaluation.  Both share the same parameter arrays, and tests
pin them against each other.

The policy is an unsquashed diagonal Gaussian: actions are clipped by the
environment instead of tanh-squashed, which keeps log-densities of stored
actions exact even when those actions fall outside the current typical set.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import LOG_2PI, Tensor
from .core import Rng

LOG_STD_LO = -5.0
LOG_STD_HI = 2.0


class Mlp:
    """Fully connected net, ReLU or Tanh hidden activations, identity output.

    Weights and biases start from U(-1/sqrt(fan_in), +1/sqrt(fan_in)), so a
    fixed rng seed reproduces the network exactly.
    """

    def __init__(self, dims: list[int], activation: str = "relu", rng: Rng | None = None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.dims = list(dims)
        self.activation = activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        rng = rng or Rng(0)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True))
        self.forward_calls = 0  # instrumentation, lets tests assert who queried the net

    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dims[0]:
            raise ValueError(f"expected input dim {self.dims[0]}, got {x.shape[-1]}")
        return x

    def forward(self, x) -> Tensor:
        """Graph-tracked evaluation; accepts a Tensor or array of shape (..., in)."""
        self.forward_calls += 1
        h = x if isinstance(x, Tensor) else Tensor(self._check_input(x))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = h.relu() if self.activation == "relu" else h.tanh()
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy evaluation, no graph."""
        self.forward_calls += 1
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
        return h

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.dims = list(self.dims)
        dup.activation = self.activation
        dup.weights = [Tensor(w.data.copy(), requires_grad=True) for w in self.weights]
        dup.biases = [Tensor(b.data.copy(), requires_grad=True) for b in self.biases]
        dup.forward_calls = 0
        return dup


class GaussianPolicy:
    """Diagonal Gaussian over actions: mean from an MLP trunk, one learned
    state-independent log-std per action dimension, clamped to [-5, 2]."""

    def __init__(self, state_dim: int, action_dim: int, hidden: tuple = (64, 64),
                 rng: Rng | None = None, log_std_init: float = -0.5):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.trunk = Mlp([state_dim, *hidden, action_dim], "relu", rng)
        self.log_std = Tensor(np.full(action_dim, float(log_std_init)), requires_grad=True)

    def params(self) -> list[Tensor]:
        return self.trunk.params() + [self.log_std]

    def _clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std.data, LOG_STD_LO, LOG_STD_HI)

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> Tensor:
        """Graph-tracked log pi(a|s) per row, shape (batch,)."""
        mu = self.trunk.forward(states)
        log_std = self.log_std.clip(LOG_STD_LO, LOG_STD_HI)
        inv_std = (-log_std).exp()
        z = (Tensor(np.asarray(actions, dtype=np.float64)) - mu) * inv_std
        per_dim = z.square() * -0.5 - log_std - 0.5 * LOG_2PI
        return per_dim.sum(axis=per_dim.data.ndim - 1)

    def log_prob_np(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorized log-density without a graph; used by buffer re-weighting."""
        mu = self.trunk.predict(states)
        log_std = self._clamped_log_std()
        z = (np.asarray(actions, dtype=np.float64) - mu) * np.exp(-log_std)
        per_dim = -0.5 * z * z - log_std - 0.5 * LOG_2PI
        return per_dim.sum(axis=-1)

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        """Deterministic action: the Gaussian mean."""
        return self.trunk.predict(state)

    def sample(self, state: np.ndarray, rng: Rng) -> np.ndarray:
        mu = self.trunk.predict(state)
        sigma = np.exp(self._clamped_log_std())
        return mu + sigma * rng.normal(mu.shape)

    def copy(self) -> "GaussianPolicy":
        dup = GaussianPolicy.__new__(GaussianPolicy)
        dup.state_dim = self.state_dim
        dup.action_dim = self.action_dim
        dup.trunk = self.trunk.copy()
        dup.log_std = Tensor(self.log_std.data.copy(), requires_grad=True)
        return dup


class Adam:
    """Bias-corrected adaptive-moment gradient descent.

    Moment state lives in flat vectors; gradients are gathered into a
    scratch buffer per step so the elementwise update runs as a handful of
    whole-vector ops regardless of how many parameter tensors there are.
    """

    def __init__(self, params: list[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._slices = []
        offset = 0
        for p in self.params:
            self._slices.append(slice(offset, offset + p.data.size))
            offset += p.data.size
        self.m = np.zeros(offset)
        self.v = np.zeros(offset)
        self._g = np.zeros(offset)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        g = self._g
        for p, sl in zip(self.params, self._slices):
            if p.grad is None:
                g[sl] = 0.0
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
            g[sl] = p.grad.ravel()
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * np.square(g)
        delta = self.m * (-self.lr / b1c)
        delta /= np.sqrt(self.v / b2c) + self.eps
        for p, sl in zip(self.params, self._slices):
            p.data = p.data + delta[sl].reshape(p.data.shape)


def soft_update(target: Mlp, source: Mlp, rate: float) -> None:
    """Polyak averaging: target <- rate * source + (1 - rate) * target."""
    for tp, sp in zip(target.params(), source.params()):
        tp.data *= 1.0 - rate
        tp.data += rate * sp.data


def _fmt(x: float) -> str:
    return repr(float(x))


def save_checkpoint(path, named_tensors: dict) -> None:
    """Text dump of parameter tensors: a shape manifest line per tensor
    followed by one space-separated row of full-precision values per matrix
    row.  Values round-trip bit-exactly."""
    lines = ["#arb-checkpoint v1"]
    for name, tensor in named_tensors.items():
        data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        shape = "x".join(str(d) for d in data.shape) or "scalar"
        lines.append(f"tensor {name} {shape}")
        rows = data.reshape(data.shape[0], -1) if data.ndim > 1 else data.reshape(1, -1)
        for row in rows:
            lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "#arb-checkpoint v1":
        raise ValueError(f"{path}: not a checkpoint file")
    out: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        parts = lines[i].split()
        if len(parts) != 3 or parts[0] != "tensor":
            raise ValueError(f"{path}: bad manifest line {i + 1}: {lines[i]!r}")
        name, shape_s = parts[1], parts[2]
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split("x"))
        n_rows = shape[0] if len(shape) > 1 else 1
        values = []
        for r in range(n_rows):
            values.extend(float(v) for v in lines[i + 1 + r].split())
        out[name] = np.asarray(values, dtype=np.float64).reshape(shape)
        i += 1 + n_rows
    return out
