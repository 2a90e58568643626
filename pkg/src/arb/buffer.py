"""Replay-buffer strategies: adaptive on-policyness weighting plus baselines.

Four strategies share one storage layout (flat growable arrays plus a list of
contiguous trajectory spans):

* ``Adaptive``: trajectories re-weighted periodically by the current
  policy's clipped log-likelihood; minibatches drawn by weight.
* ``Naive``: uniform over everything.
* ``Parallel``: half the batch uniform from offline data, half from online.
* ``TopN``: offline data filtered to the n best-return trajectories at
  load time, then uniform.

The adaptive sampler supports two marginals.  ``FLAT`` (default) gives every
transition its trajectory's weight and samples transitions proportionally,
so a long trajectory receives proportionally more slots.  ``TWO_STAGE``
draws a trajectory by weight first and then a transition uniformly inside
it, which equalizes trajectories regardless of length.  Both run in
O(log n) per draw via cumulative-sum binary search; the cumulative arrays
are rebuilt once per re-weighting pass and extended in O(1) per push.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Dataset, Rng, Transition
from .onpolicy import Level, OnPolicyConfig, clipped_logp

logger = logging.getLogger(__name__)


class SamplingMode(Enum):
    FLAT = "flat"
    TWO_STAGE = "two-stage"


@dataclass(frozen=True)
class Adaptive:
    onpolicy: OnPolicyConfig = OnPolicyConfig()
    mode: SamplingMode = SamplingMode.FLAT

    def __post_init__(self):
        if self.mode is SamplingMode.TWO_STAGE and self.onpolicy.level is not Level.TRAJECTORY:
            raise ValueError("two-stage sampling requires trajectory-level weights")


@dataclass(frozen=True)
class Naive:
    pass


@dataclass(frozen=True)
class Parallel:
    pass


@dataclass(frozen=True)
class TopN:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("TopN needs n >= 1")


Strategy = Adaptive | Naive | Parallel | TopN


@dataclass
class Minibatch:
    """Gathered batch plus the exact share of online-origin samples."""

    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    online: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def origin_online_fraction(self) -> float:
        return int(self.online.sum()) / len(self.indices)


@dataclass
class _Traj:
    id: int
    start: int
    length: int
    online: bool
    closed: bool
    ret: float = 0.0
    cached_logp_sum: float = 0.0
    weight: float = 1.0


class ReplayBuffer:
    """Strategy-tagged transition store with trajectory bookkeeping."""

    def __init__(self, offline: Dataset, strategy: Strategy, capacity: int | None = None):
        offline.validate()
        self.strategy = strategy
        self.capacity = capacity
        self.state_dim = offline.state_dim
        self.action_dim = offline.action_dim
        self.p_max = float("nan")
        self.reweight_count = 0

        cap = max(len(offline), 1024)
        self._states = np.empty((cap, self.state_dim))
        self._actions = np.empty((cap, self.action_dim))
        self._rewards = np.empty(cap)
        self._next_states = np.empty((cap, self.state_dim))
        self._dones = np.empty(cap, dtype=bool)
        self._online = np.empty(cap, dtype=bool)
        self._clipped = np.full(cap, np.nan)
        self._tw = np.empty(cap)       # per-transition sampling weight
        self._twcum = np.empty(cap)    # running cumulative sum of _tw
        self._n = 0
        self.trajectories: list[_Traj] = []
        self._traj_cum: np.ndarray | None = None  # rebuilt lazily for two-stage draws
        self.offline_count = 0
        self.online_count = 0
        self._next_traj_id = 0

        kept = offline.trajectories
        if isinstance(strategy, TopN):
            if strategy.n > len(kept):
                logger.warning(
                    "TopN(%d) asked for more trajectories than the %d available; keeping all",
                    strategy.n, len(kept),
                )
            elif strategy.n < len(kept):
                ranked = sorted(kept, key=lambda tr: (-offline.trajectory_return(tr), tr.id))
                keep_ids = {tr.id for tr in ranked[: strategy.n]}
                kept = [tr for tr in kept if tr.id in keep_ids]
        for tr in kept:
            self._begin_traj(online=False, traj_id=tr.id)
            for idx in tr.transition_indices:
                self._append(offline.transitions[idx], online=False)
            self._close_traj()
        if offline.trajectories:
            self._next_traj_id = max(tr.id for tr in offline.trajectories) + 1

    # -- storage ----------------------------------------------------------

    def __len__(self) -> int:
        return self._n

    def _grow(self) -> None:
        cap = max(2 * len(self._rewards), 1024)

        def enlarge(arr):
            fresh = np.empty((cap, *arr.shape[1:]), dtype=arr.dtype)
            fresh[: self._n] = arr[: self._n]
            return fresh

        self._states = enlarge(self._states)
        self._actions = enlarge(self._actions)
        self._rewards = enlarge(self._rewards)
        self._next_states = enlarge(self._next_states)
        self._dones = enlarge(self._dones)
        self._online = enlarge(self._online)
        self._clipped = enlarge(self._clipped)
        self._tw = enlarge(self._tw)
        self._twcum = enlarge(self._twcum)

    def _begin_traj(self, online: bool, traj_id: int | None = None) -> _Traj:
        if traj_id is None:
            traj_id = self._next_traj_id
            self._next_traj_id += 1
        traj = _Traj(id=traj_id, start=self._n, length=0, online=online, closed=False)
        self.trajectories.append(traj)
        self._traj_cum = None
        return traj

    def _close_traj(self) -> None:
        open_traj = self.trajectories[-1]
        if open_traj.length == 0:
            raise ValueError("cannot close an empty trajectory")
        open_traj.closed = True

    def _append(self, t: Transition, online: bool) -> None:
        if t.state.shape != (self.state_dim,) or t.next_state.shape != (self.state_dim,):
            raise ValueError(f"state dim mismatch: expected {self.state_dim}")
        if t.action.shape != (self.action_dim,):
            raise ValueError(f"action dim mismatch: expected {self.action_dim}")
        if self._n == len(self._rewards):
            self._grow()
        traj = self.trajectories[-1]
        i = self._n
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._dones[i] = t.done
        self._online[i] = online
        self._clipped[i] = np.nan
        # until the next re-weighting pass, fresh transitions sample at their
        # trajectory's current weight (1.0 for brand-new trajectories)
        self._tw[i] = traj.weight
        self._twcum[i] = (self._twcum[i - 1] if i else 0.0) + self._tw[i]
        self._n += 1
        traj.length += 1
        traj.ret += t.reward
        if online:
            self.online_count += 1
        else:
            self.offline_count += 1

    # -- public surface ----------------------------------------------------

    @property
    def open_trajectory(self) -> _Traj | None:
        if self.trajectories and not self.trajectories[-1].closed:
            return self.trajectories[-1]
        return None

    def push(self, t: Transition, episode_end: bool) -> None:
        """Append one online transition, closing the episode if asked."""
        if self.open_trajectory is None:
            self._begin_traj(online=True)
        self._append(t, online=True)
        if episode_end:
            self._close_traj()
        if self.capacity is not None and self._n > self.capacity:
            self._evict()

    def _evict(self) -> None:
        """Drop oldest closed online trajectories until back under capacity.

        Offline data and the open episode are never evicted, so the buffer
        may legitimately exceed capacity when they alone fill it.
        """
        keep = []
        over = self._n - self.capacity
        for traj in self.trajectories:
            if over > 0 and traj.online and traj.closed:
                over -= traj.length
                continue
            keep.append(traj)
        if len(keep) == len(self.trajectories):
            return
        order = np.concatenate([
            np.arange(tr.start, tr.start + tr.length) for tr in keep
        ]) if keep else np.empty(0, dtype=int)
        m = len(order)
        for arr in (self._states, self._actions, self._rewards, self._next_states,
                    self._dones, self._online, self._clipped, self._tw):
            arr[:m] = arr[order]
        pos = 0
        for traj in keep:
            traj.start = pos
            pos += traj.length
        self.trajectories = keep
        self._n = m
        self.online_count = int(self._online[:m].sum())
        self.offline_count = m - self.online_count
        self._twcum[:m] = np.cumsum(self._tw[:m])
        self._traj_cum = None

    def online_fraction(self) -> float:
        """Share of buffered transitions collected online."""
        if self._n == 0:
            raise ValueError("empty buffer has no online fraction")
        return self.online_count / self._n

    def reweight(self, logp_fn) -> None:
        """Recompute every sampling weight against the current policy.

        ``logp_fn(states, actions)`` must return the policy's exact
        log-densities for a batch of rows.  The pass is atomic: weights are
        computed into fresh arrays and swapped in at the end, so a sampler
        never sees a half-updated set.  The open partial episode is weighted
        over its collected prefix like any closed trajectory.
        """
        if not isinstance(self.strategy, Adaptive):
            raise ValueError("re-weighting only applies to the adaptive strategy")
        if self._n == 0:
            raise ValueError("cannot re-weight an empty buffer")
        cfg = self.strategy.onpolicy
        raw = np.asarray(logp_fn(self._states[: self._n], self._actions[: self._n]),
                         dtype=np.float64)
        if raw.shape != (self._n,):
            raise ValueError(f"logp_fn returned shape {raw.shape}, expected ({self._n},)")
        bad = np.flatnonzero(~np.isfinite(raw))
        if bad.size:
            raise ValueError(f"non-finite log-likelihood for transition {bad[0]}")
        clipped = clipped_logp(raw, cfg, self.action_dim)
        p_max = float(clipped.max())

        starts = np.array([tr.start for tr in self.trajectories])
        lengths = np.array([tr.length for tr in self.trajectories], dtype=np.float64)
        sums = np.add.reduceat(clipped, starts)
        traj_w = np.exp((sums / lengths - p_max) / cfg.lam)
        if cfg.level is Level.TRAJECTORY:
            tw = np.repeat(traj_w, lengths.astype(int))
        else:
            tw = np.exp((clipped - p_max) / cfg.lam)

        self._clipped[: self._n] = clipped
        self._tw[: self._n] = tw
        self._twcum[: self._n] = np.cumsum(tw)
        for traj, s, w in zip(self.trajectories, sums, traj_w):
            traj.cached_logp_sum = float(s)
            traj.weight = float(w)
        self.p_max = p_max
        self._traj_cum = None
        self.reweight_count += 1

    def trajectory_weights(self) -> np.ndarray:
        return np.array([tr.weight for tr in self.trajectories])

    def transition_weights(self) -> np.ndarray:
        return self._tw[: self._n].copy()

    def sample(self, batch_size: int, rng: Rng) -> Minibatch:
        """Draw a minibatch with replacement under the buffer's strategy."""
        if self._n == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if isinstance(self.strategy, (Naive, TopN)):
            idx = np.asarray(rng.integers(0, self._n, batch_size))
        elif isinstance(self.strategy, Parallel):
            n_off_draws = (batch_size + 1) // 2
            if self.online_count == 0:
                idx = np.asarray(rng.integers(0, self.offline_count, batch_size))
            elif self.offline_count == 0:
                idx = np.asarray(rng.integers(self.offline_count, self._n, batch_size))
            else:
                off = rng.integers(0, self.offline_count, n_off_draws)
                on = rng.integers(self.offline_count, self._n, batch_size - n_off_draws)
                idx = np.concatenate([off, on])
        elif self.strategy.mode is SamplingMode.FLAT:
            total = self._twcum[self._n - 1]
            u = rng.uniform(0.0, total, batch_size)
            idx = np.searchsorted(self._twcum[: self._n], u, side="right")
            idx = np.minimum(idx, self._n - 1)
        else:
            if self._traj_cum is None:
                self._traj_cum = np.cumsum([tr.weight for tr in self.trajectories])
            u = rng.uniform(0.0, self._traj_cum[-1], batch_size)
            tsel = np.searchsorted(self._traj_cum, u, side="right")
            tsel = np.minimum(tsel, len(self.trajectories) - 1)
            starts = np.array([tr.start for tr in self.trajectories])
            lengths = np.array([tr.length for tr in self.trajectories])
            within = np.floor(rng.uniform(0.0, 1.0, batch_size) * lengths[tsel]).astype(int)
            within = np.minimum(within, lengths[tsel] - 1)
            idx = starts[tsel] + within
        return Minibatch(
            indices=idx,
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
            online=self._online[idx],
        )

    def stats(self) -> dict:
        """Per-pass statistics for the metrics CSV."""
        w = self.trajectory_weights()
        return {
            "p_max": self.p_max,
            "sum_weights": float(w.sum()) if w.size else 0.0,
            "online_fraction_buffer": self.online_fraction() if self._n else 0.0,
            "weight_mean": float(w.mean()) if w.size else float("nan"),
            "weight_min": float(w.min()) if w.size else float("nan"),
            "weight_max": float(w.max()) if w.size else float("nan"),
        }

    def check_invariants(self) -> None:
        """Partition, counter, and weight-positivity invariants."""
        total = sum(tr.length for tr in self.trajectories)
        if total != self._n:
            raise AssertionError(f"trajectory lengths sum to {total}, buffer holds {self._n}")
        pos = 0
        for tr in self.trajectories:
            if tr.start != pos:
                raise AssertionError(f"trajectory {tr.id} not contiguous at {pos}")
            pos += tr.length
            if not tr.closed and tr is not self.trajectories[-1]:
                raise AssertionError("only the newest trajectory may be open")
            if not (tr.weight > 0) or np.isnan(tr.weight):
                raise AssertionError(f"trajectory {tr.id} has invalid weight {tr.weight}")
        if self.offline_count + self.online_count != self._n:
            raise AssertionError("origin counters out of sync")
        if int(self._online[: self._n].sum()) != self.online_count:
            raise AssertionError("online flags out of sync with counter")
        if not np.all(self._tw[: self._n] > 0):
            raise AssertionError("non-positive transition weight")
        recum = np.cumsum(self._tw[: self._n])
        if self._n and not np.allclose(recum, self._twcum[: self._n], rtol=1e-12, atol=1e-9):
            raise AssertionError("cumulative weights out of sync")
