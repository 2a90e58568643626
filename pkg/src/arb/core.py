"""Shared domain types, deterministic RNG, and the dataset file format.

Everything downstream (buffer, envs, harness) works with these containers.
Observations, actions and rewards are stored as float64 in memory; the text
file format keeps full-precision decimals so a save/load cycle is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Origin(Enum):
    OFFLINE = "offline"
    ONLINE = "online"


class Tier(Enum):
    RANDOM = "random"
    MEDIUM = "medium"
    MEDIUM_REPLAY = "medium-replay"
    EXPERT = "expert"
    MEDIUM_EXPERT = "medium-expert"
    CUSTOM = "custom"


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the documented line format."""


@dataclass
class Transition:
    """One (s, a, r, s', done) tuple plus trajectory membership and origin.

    ``done`` marks environment termination only; an episode cut off by the
    time limit ends its trajectory with done=False so value bootstrapping
    stays correct.
    """

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    origin: Origin = Origin.OFFLINE
    traj_id: int = 0


@dataclass
class Trajectory:
    """Ordered span of transitions with cached weighting state.

    ``cached_logp_sum`` is the sum of clipped log-likelihoods over the
    member transitions as of the last re-weighting pass; ``weight`` is the
    sampling weight derived from it and always stays in (0, 1].
    """

    id: int
    transition_indices: list[int]
    cached_logp_sum: float = 0.0
    weight: float = 1.0

    @property
    def length(self) -> int:
        return len(self.transition_indices)


@dataclass
class Dataset:
    """A list of transitions partitioned into contiguous trajectories."""

    transitions: list[Transition] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)
    state_dim: int = 0
    action_dim: int = 0
    tier: Tier = Tier.CUSTOM

    def __len__(self) -> int:
        return len(self.transitions)

    def validate(self) -> None:
        """Check the partition and dimensionality invariants, raising on violation."""
        seen: set[int] = set()
        total = 0
        for traj in self.trajectories:
            if traj.length < 1:
                raise ValueError(f"trajectory {traj.id} is empty")
            total += traj.length
            for idx in traj.transition_indices:
                if idx in seen:
                    raise ValueError(f"transition {idx} appears in more than one trajectory")
                seen.add(idx)
                if self.transitions[idx].traj_id != traj.id:
                    raise ValueError(f"transition {idx} does not point back to trajectory {traj.id}")
        if total != len(self.transitions):
            raise ValueError(
                f"trajectories cover {total} transitions but dataset holds {len(self.transitions)}"
            )
        for i, t in enumerate(self.transitions):
            if t.state.shape != (self.state_dim,) or t.next_state.shape != (self.state_dim,):
                raise ValueError(f"transition {i}: state dim mismatch")
            if t.action.shape != (self.action_dim,):
                raise ValueError(f"transition {i}: action dim mismatch")

    def trajectory_return(self, traj: Trajectory) -> float:
        return float(sum(self.transitions[i].reward for i in traj.transition_indices))

    def mean_episode_return(self) -> float:
        if not self.trajectories:
            raise ValueError("empty dataset has no episode returns")
        return float(np.mean([self.trajectory_return(t) for t in self.trajectories]))


class Rng:
    """Deterministic random stream backed by the Philox 4x64-10 counter generator.

    The seed is used directly as the Philox key, so equal seeds give equal
    streams across runs and platforms.  Substreams come from :meth:`spawn`,
    which extends the key with a stream index; this keeps every consumer of
    randomness on an independent, reproducible stream.
    """

    def __init__(self, seed: int, _key=None):
        self.seed = int(seed)
        key = _key if _key is not None else self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream: int) -> "Rng":
        """Independent child stream; (seed, stream) fully determines it.

        Children derive from the root seed's key space: spawning from a
        child is the same as spawning from the root, so give every consumer
        its own stream index rather than nesting spawns.
        """
        return Rng(self.seed, _key=(self.seed & (2**64 - 1)) * 2**64 + int(stream))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)


def _fmt(x: float) -> str:
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(x))


def dataset_save(dataset: Dataset, path) -> None:
    """Write a dataset in the line-oriented text format.

    First line is ``#arb-dataset v1 state_dim=<n> action_dim=<m>``, then one
    line per transition:
    ``traj_id,s_0..s_{n-1},a_0..a_{m-1},r,sn_0..sn_{n-1},done`` with done in
    {0,1}.  Trajectories are contiguous blocks with nondecreasing traj_id.
    Non-finite values are rejected.
    """
    dataset.validate()
    lines = [f"#arb-dataset v1 state_dim={dataset.state_dim} action_dim={dataset.action_dim}"]
    for traj in dataset.trajectories:
        for idx in traj.transition_indices:
            t = dataset.transitions[idx]
            values = np.concatenate([t.state, t.action, [t.reward], t.next_state])
            if not np.all(np.isfinite(values)):
                raise ValueError(f"transition {idx} contains non-finite values; refusing to save")
            fields = [str(traj.id)] + [_fmt(v) for v in values] + ["1" if t.done else "0"]
            lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def dataset_load(path) -> Dataset:
    """Read a dataset file, reconstructing trajectory boundaries from the traj_id column."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    header = lines[0].split()
    if (
        len(header) != 4
        or header[0] != "#arb-dataset"
        or header[1] != "v1"
        or not header[2].startswith("state_dim=")
        or not header[3].startswith("action_dim=")
    ):
        raise DatasetFormatError(f"{path}: bad header line: {lines[0]!r}")
    try:
        state_dim = int(header[2].split("=", 1)[1])
        action_dim = int(header[3].split("=", 1)[1])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: bad header dims: {lines[0]!r}") from exc

    expected_cols = 1 + state_dim + action_dim + 1 + state_dim + 1
    ds = Dataset(state_dim=state_dim, action_dim=action_dim)
    seen_ids: set[int] = set()
    current: Trajectory | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cols = line.split(",")
        if len(cols) != expected_cols:
            raise DatasetFormatError(
                f"{path}:{lineno}: expected {expected_cols} columns, found {len(cols)}"
            )
        try:
            traj_id = int(cols[0])
            values = [float(c) for c in cols[1:-1]]
            done_col = cols[-1]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: unparseable field") from exc
        if done_col not in ("0", "1"):
            raise DatasetFormatError(f"{path}:{lineno}: done column must be 0 or 1")
        if current is None or traj_id != current.id:
            if traj_id in seen_ids:
                raise DatasetFormatError(
                    f"{path}:{lineno}: trajectory {traj_id} is not contiguous"
                )
            if current is not None and traj_id < current.id:
                raise DatasetFormatError(
                    f"{path}:{lineno}: traj_id decreased ({current.id} -> {traj_id})"
                )
            current = Trajectory(id=traj_id, transition_indices=[])
            ds.trajectories.append(current)
            seen_ids.add(traj_id)
        s = np.asarray(values[:state_dim], dtype=np.float64)
        a = np.asarray(values[state_dim : state_dim + action_dim], dtype=np.float64)
        r = values[state_dim + action_dim]
        sn = np.asarray(values[state_dim + action_dim + 1 :], dtype=np.float64)
        idx = len(ds.transitions)
        ds.transitions.append(
            Transition(
                state=s,
                action=a,
                reward=r,
                next_state=sn,
                done=done_col == "1",
                origin=Origin.OFFLINE,
                traj_id=traj_id,
            )
        )
        current.transition_indices.append(idx)
    ds.validate()
    return ds
