import numpy as np
import pytest

from arb.core import Dataset, Origin, Rng, Trajectory, Transition


def build_dataset(rng: Rng, n_traj: int, max_len: int = 6,
                  state_dim: int = 3, action_dim: int = 2) -> Dataset:
    """Random but internally consistent dataset for round-trip style tests."""
    ds = Dataset(state_dim=state_dim, action_dim=action_dim)
    for tid in range(n_traj):
        length = int(rng.integers(1, max_len + 1))
        state = rng.uniform(-1, 1, state_dim)
        idxs = []
        for k in range(length):
            nxt = rng.uniform(-1, 1, state_dim)
            t = Transition(
                state=state,
                action=rng.uniform(-1, 1, action_dim),
                reward=float(rng.uniform(-1, 1)),
                next_state=nxt,
                done=bool(k == length - 1 and rng.uniform() < 0.5),
                origin=Origin.OFFLINE,
                traj_id=tid,
            )
            idxs.append(len(ds.transitions))
            ds.transitions.append(t)
            state = nxt
        ds.trajectories.append(Trajectory(id=tid, transition_indices=idxs))
    ds.validate()
    return ds


@pytest.fixture
def rng():
    return Rng(1234)
