"""Experiment orchestration: offline pretraining, online fine-tuning, metrics.

One run is two phases.  Phase 1 pretrains the agent with uniform minibatches
from the offline dataset.  Phase 2 seeds the replay buffer with that same
dataset and then, per environment step: collect one transition with the
stochastic policy, push it, re-weight the buffer every ``d_weight`` steps
(adaptive strategy only), and every ``d_update`` steps run ``n_update``
gradient updates on sampled minibatches.  Metrics flush to three CSVs per
seed; the ratio CSV logs at the re-weight cadence for every strategy so
curves are comparable across them.

All randomness derives from the run seed through named substreams, so a
repeated run reproduces its CSVs byte for byte.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algo import Agent, Hyper
from .buffer import Adaptive, Naive, Parallel, ReplayBuffer, SamplingMode, TopN
from .core import Dataset, Origin, Rng, Tier, Transition, dataset_load
from .envs import TierSpec, generate_dataset, make_env
from .onpolicy import Level, OnPolicyConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values in a config file."""


@dataclass
class RunConfig:
    """Full experiment description; every field has a config-file key."""

    env: str = "pointmass"
    dataset: str | None = None          # path; generated from tier when absent
    tier: str = "random"
    dataset_episodes: int = 207
    dataset_seed: int = 0
    strategy: str = "arb"               # arb | naive | parallel | topn
    top_n: int = 10
    lam: float = 0.5                    # config key "lambda"
    p_lo: float = -12.0
    p_hi: float = 7.0
    normalize_by_action_dim: bool = True
    level: str = "trajectory"           # trajectory | transition
    sampling: str = "flat"              # flat | two-stage
    capacity: int | None = None
    n_pretrain: int = 20000
    n_interaction: int = 50000
    d_weight: int = 1000
    d_update: int = 1000
    n_update: int = 1000
    batch_size: int = 256
    eval_every: int = 2500
    eval_episodes: int = 20
    seeds: tuple = (0, 1, 2, 3)
    out_dir: str = "runs"
    discount: float = 0.99
    expectile: float = 0.7
    awr_beta: float = 3.0
    soft_update: float = 0.005
    learning_rate: float = 3e-4
    hidden_dim: int = 32
    hidden_layers: int = 2

    def validate(self) -> None:
        for name in ("d_weight", "d_update", "n_update", "batch_size",
                     "eval_every", "eval_episodes", "dataset_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("n_pretrain", "n_interaction"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.strategy not in ("arb", "naive", "parallel", "topn"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.level not in ("trajectory", "transition"):
            raise ConfigError(f"unknown level {self.level!r}")
        if self.sampling not in ("flat", "two-stage"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    def onpolicy_config(self) -> OnPolicyConfig:
        return OnPolicyConfig(
            p_lo=self.p_lo, p_hi=self.p_hi, lam=self.lam,
            normalize_by_action_dim=self.normalize_by_action_dim,
            level=Level(self.level),
        )

    def buffer_strategy(self):
        if self.strategy == "arb":
            return Adaptive(self.onpolicy_config(), SamplingMode(self.sampling))
        if self.strategy == "naive":
            return Naive()
        if self.strategy == "parallel":
            return Parallel()
        return TopN(self.top_n)

    def hyper(self) -> Hyper:
        return Hyper(
            discount=self.discount, expectile=self.expectile, awr_beta=self.awr_beta,
            soft_update_rate=self.soft_update, learning_rate=self.learning_rate,
            hidden=(self.hidden_dim,) * self.hidden_layers,
        )


# config-file key -> dataclass field (identity except for the keyword clash)
_KEY_TO_FIELD = {f.name: f.name for f in dataclasses.fields(RunConfig) if f.name != "lam"}
_KEY_TO_FIELD["lambda"] = "lam"


def _coerce(key: str, raw: str):
    field_name = _KEY_TO_FIELD[key]
    if field_name in ("env", "tier", "strategy", "level", "sampling", "out_dir"):
        return raw
    if field_name == "dataset":
        return None if raw.lower() == "none" else raw
    if field_name == "capacity":
        return None if raw.lower() == "none" else int(raw)
    if field_name == "normalize_by_action_dim":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if field_name == "seeds":
        return tuple(int(s) for s in raw.split(",") if s.strip())
    if field_name in ("lam", "p_lo", "p_hi", "discount", "expectile", "awr_beta",
                      "soft_update", "learning_rate"):
        return float(raw)
    return int(raw)


def parse_config(path) -> RunConfig:
    """Read a flat ``key = value`` file; unknown keys are errors."""
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _KEY_TO_FIELD:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                setattr(cfg, _KEY_TO_FIELD[key], _coerce(key, raw))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    cfg.validate()
    return cfg


def config_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    out = dataclasses.replace(cfg, **overrides)
    out.validate()
    return out


@dataclass
class RunMetrics:
    """In-memory copy of everything the per-seed CSVs record."""

    seed: int
    eval_rows: list = field(default_factory=list)    # (env_step, mean_return, score)
    ratio_rows: list = field(default_factory=list)   # dicts, see _RATIO_COLUMNS
    loss_rows: list = field(default_factory=list)    # (updates, v, q, policy, eval_return|None)
    reweight_passes: int = 0
    total_updates: int = 0

    @property
    def final_score(self) -> float:
        return self.eval_rows[-1][2] if self.eval_rows else float("nan")

    def time_avg_online_ratio(self) -> float:
        vals = [r["minibatch_online_ratio"] for r in self.ratio_rows
                if r["minibatch_online_ratio"] is not None]
        return float(np.mean(vals)) if vals else float("nan")


_RATIO_COLUMNS = ("step", "minibatch_online_ratio", "buffer_online_fraction",
                  "p_max", "sum_weights", "weight_mean", "weight_min", "weight_max")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def _write_csv(path, header: tuple, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_or_generate_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is not None:
        return dataset_load(cfg.dataset)
    env = make_env(cfg.env)
    spec = TierSpec(Tier(cfg.tier), cfg.dataset_episodes)
    return generate_dataset(env, spec, Rng(cfg.dataset_seed))


def _flush_metrics_files(metrics: RunMetrics, cfg: RunConfig, out_dir: Path) -> None:
    _write_csv(out_dir / "eval.csv", ("step", "mean_return", "normalized_score"),
               metrics.eval_rows)
    if cfg.n_interaction > 0:
        _write_csv(out_dir / "ratio.csv", _RATIO_COLUMNS,
                   [tuple(r[c] for c in _RATIO_COLUMNS) for r in metrics.ratio_rows])
    _write_csv(out_dir / "losses.csv",
               ("updates", "v_loss", "q_loss", "policy_loss", "eval_return"),
               metrics.loss_rows)


def run_single(cfg: RunConfig, seed: int, offline: Dataset, out_dir: Path) -> RunMetrics:
    """One seed of the two-phase pipeline; writes the per-seed CSVs.

    On error the rows collected so far are still flushed, so a crashed run
    leaves partial CSVs behind for inspection.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env)
    eval_env = make_env(cfg.env)
    root = Rng(seed)
    rng_pretrain = root.spawn(200)
    rng_env = root.spawn(300)
    rng_policy = root.spawn(400)
    rng_buffer = root.spawn(500)
    rng_eval = root.spawn(600)

    agent = Agent(env.state_dim, env.action_dim, cfg.hyper(), root.spawn(100))
    metrics = RunMetrics(seed=seed)

    loss_acc: list[dict] = []
    pending_eval: float | None = None

    def flush_loss_row() -> None:
        nonlocal pending_eval
        if not loss_acc:
            return
        mean = {k: float(np.mean([r[k] for r in loss_acc])) for k in loss_acc[0]}
        metrics.loss_rows.append((agent.update_count, mean["v_loss"], mean["q_loss"],
                                  mean["policy_loss"], pending_eval))
        pending_eval = None
        loss_acc.clear()

    def do_eval(env_step: int) -> None:
        nonlocal pending_eval
        mean_return, score = agent.evaluate(eval_env, cfg.eval_episodes, rng_eval)
        metrics.eval_rows.append((env_step, mean_return, score))
        pending_eval = score

    buffer = ReplayBuffer(offline, cfg.buffer_strategy(), capacity=cfg.capacity)
    is_adaptive = isinstance(buffer.strategy, Adaptive)
    try:
        # phase 1: uniform offline pretraining
        if cfg.n_pretrain > 0:
            def record(step, losses):
                loss_acc.append(losses)
                if step % cfg.d_update == 0 or step == cfg.n_pretrain:
                    flush_loss_row()

            agent.pretrain(offline, cfg.n_pretrain, cfg.batch_size, rng_pretrain,
                           callback=record)
        do_eval(0)

        # phase 2: online fine-tuning
        ratio_acc: list[float] = []
        state = env.reset(rng_env)

        for step in range(1, cfg.n_interaction + 1):
            action = agent.policy.sample(state, rng_policy)
            next_state, reward, done = env.step(
                np.clip(action, env.action_low, env.action_high))
            episode_end = done or env.truncated
            buffer.push(
                Transition(state, np.asarray(action), float(reward), next_state,
                           bool(done), Origin.ONLINE),
                episode_end=episode_end,
            )
            state = env.reset(rng_env) if episode_end else next_state

            if is_adaptive and step % cfg.d_weight == 0:
                buffer.reweight(agent.policy.log_prob_np)

            if step % cfg.d_update == 0:
                for _ in range(cfg.n_update):
                    batch = buffer.sample(cfg.batch_size, rng_buffer)
                    ratio_acc.append(batch.origin_online_fraction)
                    loss_acc.append(agent.update(batch))
                flush_loss_row()

            if step % cfg.d_weight == 0:
                stats = buffer.stats()
                row = {
                    "step": step,
                    "minibatch_online_ratio":
                        float(np.mean(ratio_acc)) if ratio_acc else None,
                    "buffer_online_fraction": stats["online_fraction_buffer"],
                }
                for key in ("p_max", "sum_weights", "weight_mean",
                            "weight_min", "weight_max"):
                    row[key] = stats[key] if is_adaptive else None
                metrics.ratio_rows.append(row)
                ratio_acc.clear()

            if step % cfg.eval_every == 0:
                do_eval(step)

        if cfg.n_interaction % cfg.eval_every != 0:
            do_eval(cfg.n_interaction)
        flush_loss_row()
    finally:
        # a crashed run still leaves its partial metrics behind
        metrics.reweight_passes = buffer.reweight_count
        metrics.total_updates = agent.update_count
        _flush_metrics_files(metrics, cfg, out_dir)

    agent.save(out_dir / "checkpoint.txt")
    return metrics


def run(cfg: RunConfig) -> list[RunMetrics]:
    """Run every configured seed against a shared offline dataset."""
    cfg.validate()
    offline = load_or_generate_dataset(cfg)
    out_root = Path(cfg.out_dir)
    results = []
    for seed in cfg.seeds:
        t0 = time.time()
        metrics = run_single(cfg, seed, offline, out_root / f"seed{seed}")
        logger.info("seed %d finished in %.1fs (final score %.1f)",
                    seed, time.time() - t0, metrics.final_score)
        results.append(metrics)
    return results


def sweep(cfg: RunConfig, param: str, values: list[str]) -> dict:
    """One full run per axis value, sharing the base dataset; failures of a
    single cell are recorded and the sweep moves on."""
    if param not in _KEY_TO_FIELD:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    field_name = _KEY_TO_FIELD[param]
    out_root = Path(cfg.out_dir)
    results: dict[str, list[RunMetrics] | Exception] = {}
    for raw in values:
        value = _coerce(param, raw)
        sub = config_overrides(cfg, **{field_name: value},
                               out_dir=str(out_root / f"{param}={raw}"))
        try:
            results[raw] = run(sub)
        except Exception as exc:  # keep sweeping, report at the end
            logger.error("sweep cell %s=%s failed: %s", param, raw, exc)
            results[raw] = exc
    rows = []
    for raw, cell in results.items():
        if isinstance(cell, Exception):
            continue
        for metrics in cell:
            rows.append((param, raw, metrics.seed, metrics.final_score,
                         metrics.time_avg_online_ratio()))
    _write_csv(out_root / "sweep.csv",
               ("param", "value", "seed", "final_normalized_score", "time_avg_online_ratio"),
               rows)
    return results
