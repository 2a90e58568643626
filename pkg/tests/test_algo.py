import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arb.algo import Agent, Hyper, expectile_loss
from arb.autodiff import backward
from arb.buffer import Minibatch
from arb.core import Rng, Tier
from arb.envs import PointMass, TierSpec, generate_dataset


def random_batch(rng, n=32, state_dim=3, action_dim=2, reward=None, done=False):
    rewards = np.full(n, reward) if reward is not None else rng.uniform(-1, 1, n)
    return Minibatch(
        indices=np.arange(n),
        states=rng.uniform(-1, 1, (n, state_dim)),
        actions=rng.uniform(-1, 1, (n, action_dim)),
        rewards=rewards,
        next_states=rng.uniform(-1, 1, (n, state_dim)),
        dones=np.full(n, done, dtype=bool),
        online=np.zeros(n, dtype=bool),
    )


def policy_grad(agent, loss):
    agent.policy_opt.zero_grad()
    backward(loss)
    return np.concatenate([p.grad.ravel() for p in agent.policy.params()])


# -- expectile ----------------------------------------------------------------

def test_expectile_half_is_half_mse():
    for diff in (-2.0, -0.3, 0.0, 1.7):
        assert expectile_loss(diff, 0.5) == 0.5 * diff * diff


@settings(max_examples=100)
@given(diff=st.floats(-100, 100, allow_nan=False))
def test_expectile_half_identity_everywhere(diff):
    assert expectile_loss(diff, 0.5) == 0.5 * diff * diff


def test_expectile_positive_diff():
    assert expectile_loss(1.0, 0.7) == pytest.approx(0.7, rel=1e-15)


def test_expectile_negative_diff():
    assert expectile_loss(-1.0, 0.7) == pytest.approx(0.3, rel=1e-15)


def test_expectile_vectorized():
    out = expectile_loss(np.array([1.0, -1.0]), 0.7)
    assert np.allclose(out, [0.7, 0.3], rtol=1e-15)


def test_hyper_validation():
    with pytest.raises(ValueError):
        Hyper(discount=1.0)
    with pytest.raises(ValueError):
        Hyper(expectile=0.0)
    with pytest.raises(ValueError):
        Hyper(soft_update_rate=0.0)


# -- update mechanics ------------------------------------------------------------

def test_gamma_zero_fixed_point():
    # with no bootstrapping and constant reward 1, both critics regress to 1
    rng = Rng(0)
    agent = Agent(3, 2, Hyper(discount=0.0, learning_rate=3e-3, hidden=(16, 16)), rng)
    batch = random_batch(rng, n=64, reward=1.0)
    for _ in range(2500):
        agent.update(batch)
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    assert np.max(np.abs(agent.q1.predict(sa) - 1.0)) < 1e-2
    assert np.max(np.abs(agent.q2.predict(sa) - 1.0)) < 1e-2


def test_done_transitions_bootstrap_to_reward_only():
    rng = Rng(1)
    agent = Agent(3, 2, Hyper(), rng)
    batch = random_batch(rng, done=True)
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    manual = float(
        np.mean((agent.q1.predict(sa)[:, 0] - batch.rewards) ** 2)
        + np.mean((agent.q2.predict(sa)[:, 0] - batch.rewards) ** 2)
    )
    loss = agent.critic_loss(batch.states, batch.actions, batch.rewards,
                             batch.next_states, batch.dones)
    assert float(loss.data) == pytest.approx(manual, rel=1e-12)


def test_equal_advantage_weights_match_behavior_cloning_direction():
    rng = Rng(2)
    agent = Agent(3, 2, Hyper(), rng)
    batch = random_batch(rng)
    weighted = policy_grad(agent, agent.policy_loss(batch.states, batch.actions,
                                                    np.full(len(batch), 2.5)))
    cloning = policy_grad(agent, agent.policy_loss(batch.states, batch.actions,
                                                   np.ones(len(batch))))
    assert np.allclose(weighted, 2.5 * cloning, rtol=1e-12)


def test_soft_update_rate_one_syncs_targets():
    rng = Rng(3)
    agent = Agent(3, 2, Hyper(soft_update_rate=1.0), rng)
    agent.update(random_batch(rng))
    for tp, p in zip(agent.target_q1.params(), agent.q1.params()):
        assert np.array_equal(tp.data, p.data)


def test_policy_step_never_queries_critics():
    # the in-sample property: one update makes exactly one forward call per
    # critic (value + TD losses); the policy step reuses cached values
    rng = Rng(4)
    agent = Agent(3, 2, Hyper(), rng)
    agent.update(random_batch(rng))
    assert agent.q1.forward_calls == 1
    assert agent.q2.forward_calls == 1
    assert agent.target_q1.forward_calls == 1
    assert agent.target_q2.forward_calls == 1


def test_policy_loss_alone_touches_no_critic():
    rng = Rng(5)
    agent = Agent(3, 2, Hyper(), rng)
    batch = random_batch(rng)
    before = (agent.q1.forward_calls, agent.q2.forward_calls,
              agent.target_q1.forward_calls, agent.target_q2.forward_calls)
    agent.policy_loss(batch.states, batch.actions, np.ones(len(batch)))
    after = (agent.q1.forward_calls, agent.q2.forward_calls,
             agent.target_q1.forward_calls, agent.target_q2.forward_calls)
    assert before == after


def test_update_rejects_empty_batch():
    agent = Agent(2, 1, Hyper(), Rng(0))
    empty = Minibatch(np.empty(0, dtype=int), np.empty((0, 2)), np.empty((0, 1)),
                      np.empty(0), np.empty((0, 2)), np.empty(0, dtype=bool),
                      np.empty(0, dtype=bool))
    with pytest.raises(ValueError):
        agent.update(empty)


def test_losses_reported_finite():
    rng = Rng(6)
    agent = Agent(3, 2, Hyper(), rng)
    report = agent.update(random_batch(rng))
    assert set(report) == {"v_loss", "q_loss", "policy_loss"}
    assert all(np.isfinite(v) for v in report.values())


# -- gradient checks on the actual losses -------------------------------------------

def all_params(agent):
    return agent.policy.params() + agent.q1.params() + agent.q2.params() + agent.v.params()


def flat(params):
    return np.concatenate([p.data.ravel() for p in params])


def set_flat(params, values):
    i = 0
    for p in params:
        n = p.data.size
        p.data = values[i:i + n].reshape(p.data.shape).copy()
        i += n


@pytest.mark.parametrize("which", ["value", "critic", "policy"])
def test_loss_gradients_match_finite_differences(which):
    # each loss is checked against its own trainable parameters; the frozen
    # targets inside it (target-Q values, V bootstrap, advantage weights)
    # are constants of the loss definition, not differentiation paths
    rng = Rng(7)
    agent = Agent(2, 2, Hyper(hidden=(5, 5)), rng)
    batch = random_batch(rng, n=8, state_dim=2)
    fixed_weights = np.exp(rng.uniform(-1, 1, 8))

    def make_loss():
        if which == "value":
            return agent.value_loss(batch.states, batch.actions)[0]
        if which == "critic":
            return agent.critic_loss(batch.states, batch.actions, batch.rewards,
                                     batch.next_states, batch.dones)
        return agent.policy_loss(batch.states, batch.actions, fixed_weights)

    params = {"value": agent.v.params(),
              "critic": agent.q1.params() + agent.q2.params(),
              "policy": agent.policy.params()}[which]
    for p in params:
        p.grad = None
    backward(make_loss())
    analytic = np.concatenate([np.zeros(p.data.size) if p.grad is None else p.grad.ravel()
                               for p in params])

    base = flat(params)
    numeric = np.zeros_like(base)
    h = 1e-5
    for i in range(len(base)):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        set_flat(params, up)
        lp = float(make_loss().data)
        set_flat(params, dn)
        lm = float(make_loss().data)
        numeric[i] = (lp - lm) / (2 * h)
    set_flat(params, base)
    scale = np.maximum(np.abs(numeric), 1e-3)
    assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


# -- pretrain / evaluate --------------------------------------------------------------

def test_pretrain_zero_steps_leaves_parameters():
    rng = Rng(8)
    agent = Agent(4, 2, Hyper(), rng)
    env = PointMass()
    ds = generate_dataset(env, TierSpec(Tier.EXPERT, 5), Rng(0))
    before = flat(all_params(agent))
    agent.pretrain(ds, 0, 32, Rng(1))
    assert np.array_equal(before, flat(all_params(agent)))


def test_pretrain_deterministic_under_fixed_seed():
    env = PointMass()
    ds = generate_dataset(env, TierSpec(Tier.EXPERT, 10), Rng(0))
    results = []
    for _ in range(2):
        agent = Agent(env.state_dim, env.action_dim, Hyper(hidden=(8, 8)), Rng(5))
        agent.pretrain(ds, 50, 16, Rng(6))
        results.append(flat(all_params(agent)))
    assert np.array_equal(results[0], results[1])


@pytest.mark.slow
def test_pretrain_on_expert_data_recovers_expert_behavior():
    env = PointMass()
    ds = generate_dataset(env, TierSpec(Tier.EXPERT, 200), Rng(0))
    agent = Agent(env.state_dim, env.action_dim, Hyper(), Rng(10))
    agent.pretrain(ds, 20000, 256, Rng(11))
    _, score = agent.evaluate(env, 20, Rng(12))
    assert score >= 80.0  # at least 0.8 of the expert's normalized performance


def test_evaluate_expert_controller_scores_100():
    env = PointMass()
    agent = Agent(env.state_dim, env.action_dim, Hyper(), Rng(0))
    agent.policy.mean_action = env.expert_action  # behave exactly like the expert
    ret, score = agent.evaluate(env, 100, Rng(1))
    assert score == pytest.approx(100.0, abs=3.0)


def test_evaluate_random_controller_scores_0():
    env = PointMass()
    agent = Agent(env.state_dim, env.action_dim, Hyper(), Rng(0))
    noise = Rng(2)
    agent.policy.mean_action = lambda s: noise.uniform(-1, 1, 2)
    ret, score = agent.evaluate(env, 100, Rng(3))
    assert score == pytest.approx(0.0, abs=8.0)


def test_normalized_score_linear_midpoint():
    env = PointMass()
    mid = 0.5 * (env.r_random + env.r_expert)
    assert env.normalized_score(mid) == pytest.approx(50.0, abs=1e-9)


def test_evaluate_requires_episodes():
    env = PointMass()
    agent = Agent(env.state_dim, env.action_dim, Hyper(), Rng(0))
    with pytest.raises(ValueError):
        agent.evaluate(env, 0, Rng(1))


# -- persistence -----------------------------------------------------------------------

def test_agent_checkpoint_round_trip(tmp_path):
    rng = Rng(9)
    a = Agent(3, 2, Hyper(hidden=(6, 6)), rng)
    a.update(random_batch(rng))
    path = tmp_path / "agent.txt"
    a.save(path)
    b = Agent(3, 2, Hyper(hidden=(6, 6)), Rng(999))
    b.restore(path)
    s = rng.uniform(-1, 1, (4, 3))
    assert np.array_equal(a.policy.trunk.predict(s), b.policy.trunk.predict(s))
    assert np.array_equal(a.v.predict(s), b.v.predict(s))


def test_restore_rejects_shape_mismatch(tmp_path):
    a = Agent(3, 2, Hyper(hidden=(6, 6)), Rng(0))
    path = tmp_path / "agent.txt"
    a.save(path)
    b = Agent(3, 2, Hyper(hidden=(8, 8)), Rng(0))
    with pytest.raises(ValueError):
        b.restore(path)
