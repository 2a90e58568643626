"""Acceptance gate: one test per criterion, printed as a PASS/FAIL line each.

The behavioral criteria share two run matrices built once per session:
a six-cell matrix (strategy/temperature/level) at 20k online steps for the
online-ratio claims, and a two-cell matrix at 50k online steps for the
end-to-end score comparison.  Oracles are kept independent of the code paths
they check: linear-domain products, scipy chi-square, central finite
differences.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from arb.algo import Agent, Hyper, expectile_loss
from arb.buffer import Adaptive, Minibatch, Parallel, ReplayBuffer, SamplingMode
from arb.core import Dataset, Rng, Trajectory, Transition
from arb.harness import RunConfig, load_or_generate_dataset, run_single
from arb.nets import GaussianPolicy
from arb.onpolicy import OnPolicyConfig, trajectory_weight

pytestmark = pytest.mark.acceptance

SETUP_RATIO = dict(n_pretrain=5000, n_interaction=20000, eval_every=5000,
                   dataset_episodes=210)
SETUP_FINAL = dict(n_pretrain=20000, n_interaction=50000, eval_every=5000,
                   dataset_episodes=210)
SEEDS = (0, 1, 2, 3)


def report(criterion, passed, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    return passed


@pytest.fixture(scope="module")
def offline_dataset():
    ds = load_or_generate_dataset(RunConfig(**SETUP_RATIO))
    assert 19_500 <= len(ds) <= 21_000, "random-tier dataset should hold about 20k transitions"
    return ds


def run_cell(setup, overrides, seeds, dataset, root):
    metrics, elapsed = [], 0.0
    for seed in seeds:
        cfg = RunConfig(**setup, **overrides)
        t0 = time.time()
        metrics.append(run_single(cfg, seed, dataset, root / f"seed{seed}"))
        elapsed += time.time() - t0
    return metrics, elapsed


@pytest.fixture(scope="module")
def ratio_matrix(offline_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("ratio_matrix")
    cells = {
        "adaptive": dict(strategy="arb"),
        "naive": dict(strategy="naive"),
        "lam0.25": dict(strategy="arb", lam=0.25),
        "lam2": dict(strategy="arb", lam=2.0),
        "lam8": dict(strategy="arb", lam=8.0),
        "transition": dict(strategy="arb", level="transition"),
    }
    out = {}
    for name, overrides in cells.items():
        out[name] = run_cell(SETUP_RATIO, overrides, SEEDS, offline_dataset, root / name)
    return out


@pytest.fixture(scope="module")
def final_matrix(offline_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("final_matrix")
    return {
        name: run_cell(SETUP_FINAL, dict(strategy=name if name != "adaptive" else "arb"),
                       SEEDS, offline_dataset, root / name)
        for name in ("adaptive", "naive")
    }


def seed_mean_rows(metrics_list, key):
    return np.array([[row[key] for row in m.ratio_rows] for m in metrics_list]).mean(axis=0)


# -- criterion 1 -----------------------------------------------------------------

def test_criterion_1_trajectory_weight_matches_linear_oracle():
    rng = Rng(101)
    t0 = time.time()
    worst = 0.0
    lams = [0.25, 0.5, 5.0]
    for k in range(1000):
        n = int(rng.integers(1, 201))
        clipped = rng.uniform(-12.0, 7.0, n)
        p_max = float(clipped.max())
        lam = lams[k % 3]
        got = trajectory_weight(clipped, p_max, OnPolicyConfig(lam=lam))
        oracle = 1.0
        root = 1.0 / (lam * n)
        for c in clipped:
            oracle *= math.exp(c - p_max) ** root
        worst = max(worst, abs(got - oracle) / oracle)
    elapsed = time.time() - t0
    ok = worst < 1e-9 and elapsed < 5.0
    assert report(1, ok, f"max rel err {worst:.2e} over 1000 trajectories in {elapsed:.2f}s"), \
        f"relative error {worst} (limit 1e-9) or runtime {elapsed:.1f}s (limit 5s)"


# -- criterion 2 -----------------------------------------------------------------

def _weighted_buffer(mode):
    lengths = [1, 2, 3, 5, 8, 1, 4, 2, 6, 3]
    logps = [0.0, -0.4, -1.1, -0.2, -1.8, -0.9, -0.05, -1.4, -0.6, -2.0]
    ds = Dataset(state_dim=1, action_dim=1)
    for tid, length in enumerate(lengths):
        idxs = []
        for _ in range(length):
            t = Transition(np.array([float(tid)]), np.zeros(1), 0.0,
                           np.array([float(tid)]), False)
            t.traj_id = tid
            idxs.append(len(ds.transitions))
            ds.transitions.append(t)
        ds.trajectories.append(Trajectory(id=tid, transition_indices=idxs))
    cfg = OnPolicyConfig(lam=1.0, normalize_by_action_dim=False)
    buf = ReplayBuffer(ds, Adaptive(cfg, mode))
    table = dict(zip((float(i) for i in range(10)), logps))
    buf.reweight(lambda s, a: np.vectorize(table.get)(s[:, 0]))
    return buf, np.array(lengths), np.exp(np.array(logps))


def test_criterion_2_sampler_chi_square_fidelity():
    t0 = time.time()
    draws = 100_000
    p_values = {}
    for mode in (SamplingMode.FLAT, SamplingMode.TWO_STAGE):
        buf, lengths, weights = _weighted_buffer(mode)
        if mode is SamplingMode.FLAT:
            per_transition = np.repeat(weights, lengths)
            expected = per_transition / per_transition.sum()
        else:
            expected = np.repeat(weights / weights.sum() / lengths, lengths)
        idx = buf.sample(draws, Rng(202)).indices
        counts = np.bincount(idx, minlength=lengths.sum())
        _, p = stats.chisquare(counts, expected * draws)
        p_values[mode.value] = p
    elapsed = time.time() - t0
    ok = all(p > 0.01 for p in p_values.values()) and elapsed < 10.0
    detail = ", ".join(f"{k}: p={v:.3f}" for k, v in p_values.items())
    assert report(2, ok, f"{detail} ({draws} draws, {elapsed:.2f}s)"), \
        f"chi-square p-values {p_values} (need > 0.01) or runtime {elapsed:.1f}s"


# -- criterion 3 -----------------------------------------------------------------

def _fd_check(agent, loss_fn, params, h=1e-5):
    for p in params:
        p.grad = None
    from arb.autodiff import backward
    backward(loss_fn())
    analytic = np.concatenate([np.zeros(p.data.size) if p.grad is None else p.grad.ravel()
                               for p in params])
    flat = np.concatenate([p.data.ravel() for p in params])

    def set_flat(values):
        i = 0
        for p in params:
            n = p.data.size
            p.data = values[i:i + n].reshape(p.data.shape).copy()
            i += n

    numeric = np.zeros_like(flat)
    for i in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        set_flat(up)
        lp = float(loss_fn().data)
        set_flat(dn)
        lm = float(loss_fn().data)
        numeric[i] = (lp - lm) / (2 * h)
    set_flat(flat)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-4)))


def test_criterion_3_loss_gradients_finite_difference():
    t0 = time.time()
    worst = 0.0
    for draw in range(20):
        rng = Rng(300 + draw)
        agent = Agent(2, 2, Hyper(hidden=(5, 5)), rng)
        n = 6
        batch = Minibatch(
            indices=np.arange(n),
            states=rng.uniform(-1, 1, (n, 2)),
            actions=rng.uniform(-1, 1, (n, 2)),
            rewards=rng.uniform(-1, 1, n),
            next_states=rng.uniform(-1, 1, (n, 2)),
            dones=rng.uniform(size=n) < 0.3,
            online=np.zeros(n, dtype=bool),
        )
        weights = np.exp(rng.uniform(-1, 1, n))
        checks = [
            (lambda: agent.value_loss(batch.states, batch.actions)[0], agent.v.params()),
            (lambda: agent.critic_loss(batch.states, batch.actions, batch.rewards,
                                       batch.next_states, batch.dones),
             agent.q1.params() + agent.q2.params()),
            (lambda: agent.policy_loss(batch.states, batch.actions, weights),
             agent.policy.params()),
        ]
        for loss_fn, params in checks:
            worst = max(worst, _fd_check(agent, loss_fn, params))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    assert report(3, ok, f"max rel err {worst:.2e} over 20 draws x 3 losses in {elapsed:.1f}s"), \
        f"gradient error {worst} (limit 1e-4) or runtime {elapsed:.1f}s (limit 60s)"


# -- criterion 4 -----------------------------------------------------------------

def test_criterion_4_analytic_identities():
    diffs = np.linspace(-10, 10, 1001)
    expectile_exact = all(expectile_loss(d, 0.5) == 0.5 * d * d for d in diffs)

    pol = GaussianPolicy(1, 1, (4,), rng=Rng(404), log_std_init=0.0)
    s = np.array([0.25])
    logp_err = abs(pol.log_prob_np(s, pol.mean_action(s)) - (-0.5 * math.log(2 * math.pi)))

    ds = Dataset(state_dim=1, action_dim=1)
    for tid in range(6):
        t = Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False)
        t.traj_id = tid
        ds.transitions.append(t)
        ds.trajectories.append(Trajectory(id=tid, transition_indices=[tid]))
    buf = ReplayBuffer(ds, Parallel())
    for i in range(6):
        buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False),
                 episode_end=True)
    fractions = {buf.sample(256, Rng(40 + k)).origin_online_fraction for k in range(5)}

    ok = expectile_exact and logp_err < 1e-12 and fractions == {0.5}
    assert report(4, ok, f"expectile exact={expectile_exact}, logp err={logp_err:.1e}, "
                         f"parallel fractions={sorted(fractions)}"), \
        "analytic identity violated"


# -- criteria 5-7: behavioral runs -------------------------------------------------

def test_criterion_5_adaptive_ratio_exceeds_buffer_fraction(ratio_matrix):
    arb_metrics, arb_time = ratio_matrix["adaptive"]
    naive_metrics, naive_time = ratio_matrix["naive"]
    ratio = seed_mean_rows(arb_metrics, "minibatch_online_ratio")
    frac = seed_mean_rows(arb_metrics, "buffer_online_fraction")
    exceed_share = float(np.mean(ratio > frac))

    n_ratio = seed_mean_rows(naive_metrics, "minibatch_online_ratio")
    n_frac = seed_mean_rows(naive_metrics, "buffer_online_fraction")
    naive_dev = float(np.max(np.abs(n_ratio - n_frac)))

    elapsed = arb_time + naive_time
    ok = exceed_share >= 0.95 and naive_dev <= 0.05 and elapsed <= 15 * 60
    assert report(5, ok, f"adaptive exceeds at {100 * exceed_share:.0f}% of rows, "
                         f"naive max dev {naive_dev:.4f}, runtime {elapsed / 60:.1f} min"), \
        (f"exceed share {exceed_share} (need >= 0.95), naive deviation {naive_dev} "
         f"(need <= 0.05), runtime {elapsed:.0f}s (limit 900s)")


def test_criterion_6_lower_temperature_raises_online_ratio(ratio_matrix):
    averages = {}
    elapsed = 0.0
    for lam, cell in ((0.25, "lam0.25"), (0.5, "adaptive"), (2.0, "lam2"), (8.0, "lam8")):
        metrics, secs = ratio_matrix[cell]
        averages[lam] = float(seed_mean_rows(metrics, "minibatch_online_ratio").mean())
        elapsed += secs
    ordered = [averages[lam] for lam in (0.25, 0.5, 2.0, 8.0)]
    strictly_decreasing = all(a > b for a, b in zip(ordered, ordered[1:]))
    ok = strictly_decreasing and elapsed <= 45 * 60
    detail = ", ".join(f"lam={lam}: {averages[lam]:.4f}" for lam in (0.25, 0.5, 2.0, 8.0))
    assert report(6, ok, f"{detail}, runtime {elapsed / 60:.1f} min"), \
        f"time-averaged ratios not strictly decreasing in temperature: {averages}"


def test_criterion_7_transition_level_ratio_at_least_trajectory_level(ratio_matrix):
    traj_metrics, _ = ratio_matrix["adaptive"]
    trans_metrics, _ = ratio_matrix["transition"]
    traj_avg = float(seed_mean_rows(traj_metrics, "minibatch_online_ratio").mean())
    trans_avg = float(seed_mean_rows(trans_metrics, "minibatch_online_ratio").mean())
    ok = trans_avg >= traj_avg
    assert report(7, ok, f"transition {trans_avg:.4f} vs trajectory {traj_avg:.4f}"), \
        (f"transition-level time-averaged ratio {trans_avg:.4f} fell below "
         f"trajectory-level {traj_avg:.4f}: with broad random-tier offline data, "
         f"per-transition weights keep mass on the best-scoring offline transitions "
         f"while trajectory averaging suppresses every random episode outright, so "
         f"the claimed direction reverses on this tier (it holds on narrow tiers, "
         f"e.g. expert)")


# -- criterion 8 -----------------------------------------------------------------

def test_criterion_8_adaptive_final_score_at_least_naive(final_matrix):
    arb_metrics, arb_time = final_matrix["adaptive"]
    naive_metrics, naive_time = final_matrix["naive"]
    arb_finals = [m.final_score for m in arb_metrics]
    naive_finals = [m.final_score for m in naive_metrics]
    wins = sum(a >= n for a, n in zip(arb_finals, naive_finals))
    elapsed = arb_time + naive_time
    ok = wins >= 3 and elapsed <= 30 * 60
    assert report(8, ok, f"adaptive {[round(x, 1) for x in arb_finals]} vs "
                         f"naive {[round(x, 1) for x in naive_finals]}, "
                         f"wins {wins}/4, runtime {elapsed / 60:.1f} min"), \
        f"adaptive won only {wins}/4 seeds or runtime {elapsed:.0f}s exceeded 1800s"


# -- criterion 9 -----------------------------------------------------------------

def test_criterion_9_rerun_reproduces_metrics_byte_identically(
        offline_dataset, tmp_path_factory):
    cfg = RunConfig(**SETUP_RATIO)
    root = tmp_path_factory.mktemp("determinism")
    seen = {}
    for attempt in ("first", "second"):
        out = root / attempt
        run_single(cfg, 0, offline_dataset, out)
        seen[attempt] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    identical = seen["first"] == seen["second"]
    assert report(9, identical,
                  f"{sorted(seen['first'])} identical across reruns = {identical}"), \
        "re-running the same seed did not reproduce the metrics byte-for-byte"
