"""Online and offline policy optimization around the any-step model."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ModelBuffer, ReplayBuffer, mixed_batch, read_dataset
from .envs import make_env
from .exceptions import ConfigurationError, TrainingError
from .models import AnyStepDynamicsModel
from .models.baselines import BootstrapRNNModel, EnsembleDynamicsModel
from .rollout import branched_rollout
from .sac import SACAgent
from .uncertainty import PenaltyConfig

log = logging.getLogger(__name__)


@dataclass
class ScheduleFn:
    """Thresholded linear ramp from ``x`` to ``y`` as t goes from ``a`` to ``b``."""

    x: float = 1
    y: float = 15
    a: float = 0
    b: float = 50_000

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigurationError("schedule needs a < b", key="schedule")
        if self.x > self.y:
            raise ConfigurationError("schedule needs x <= y", key="schedule")

    def value(self, t: float) -> float:
        v = self.x + (t - self.a) / (self.b - self.a) * (self.y - self.x)
        return min(max(v, self.x), self.y)

    def __call__(self, t: float) -> int:
        return max(1, int(math.floor(self.value(t))))


def schedule(t, x=1, y=15, a=0, b=50_000) -> int:
    return ScheduleFn(x, y, a, b)(t)


@dataclass
class ModelConfig:
    hidden_size: int = 200
    head_hidden: tuple = (200, 200)
    log_std_bounds: tuple = (-10.0, 0.5)
    learning_rate: float = 1e-3
    batch_size: int = 256
    holdout_fraction: float = 0.1
    patience: int = 5
    max_epochs: int | None = None
    max_batches_per_epoch: int | None = None
    min_batches_per_epoch: int | None = None

    def build(self, m: int, seed, warm_start: bool = False) -> AnyStepDynamicsModel:
        return AnyStepDynamicsModel(m=m, warm_start=warm_start, random_state=seed, **asdict(self))

    def _shared(self) -> dict:
        d = asdict(self)
        for key in ("hidden_size", "head_hidden"):
            d.pop(key)
        return d

    def build_ensemble(self, seed) -> EnsembleDynamicsModel:
        """Single-step comparison ensemble with four hidden layers of the model's width."""
        return EnsembleDynamicsModel(hidden=(self.hidden_size,) * 4, random_state=seed, **self._shared())

    def build_rnn(self, m: int, seed) -> BootstrapRNNModel:
        return BootstrapRNNModel(m=m, hidden_size=self.hidden_size, head_hidden=self.head_hidden,
                                 random_state=seed, **self._shared())


@dataclass
class SacConfig:
    hidden: tuple = (256, 256)
    gamma: float = 0.99
    tau: float = 5e-3
    lr_actor: float = 1e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    batch_size: int = 256
    target_entropy: float | None = None
    real_fraction: float = 0.05

    def build(self, state_dim: int, action_dim: int, seed) -> SACAgent:
        return SACAgent(state_dim=state_dim, action_dim=action_dim, random_state=seed, **asdict(self))


@dataclass
class OnlineLoopConfig:
    env: str = "pendulum"
    warmup_steps: int = 1000
    epochs: int = 15
    steps_per_epoch: int = 1000
    retrain_interval: int = 250
    retrain_each_epoch: bool = False
    retrain_max_epochs: int | None = 5
    rollouts_per_step: int = 400
    utd_ratio: int = 20
    schedule: tuple = (1, 15, 0, 50_000)
    m: int = 5
    eval_interval: int = 1000
    eval_episodes: int = 10
    model_buffer_capacity: int = 400_000
    model_based: bool = True

    def __post_init__(self):
        if self.utd_ratio < 1:
            raise ConfigurationError("utd_ratio must be >= 1", key="utd_ratio")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1", key="m")
        if self.warmup_steps < self.m:
            raise ConfigurationError("warmup_steps must cover at least m transitions", key="warmup_steps")
        if self.retrain_interval < 1:
            raise ConfigurationError("retrain_interval must be >= 1", key="retrain_interval")
        ScheduleFn(*self.schedule)


@dataclass
class OfflineLoopConfig:
    dataset: str | None = None
    iterations: int = 100
    rollouts: int = 100
    horizon: int = 5
    m: int = 5
    beta: float = 1.0
    utd_ratio: int = 100
    eval_interval: int = 25
    eval_episodes: int = 10
    model_buffer_capacity: int = 100_000

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1", key="horizon")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0", key="beta")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1", key="m")


@dataclass
class RunResult:
    agent: SACAgent
    metrics: list
    model: AnyStepDynamicsModel | None = None
    real: ReplayBuffer | None = None
    model_buffer: ModelBuffer | None = None
    extra: dict = field(default_factory=dict)


def evaluate(agent: SACAgent, env, episodes: int, seed, index: int) -> tuple[float, float]:
    """Mean/std return over ``episodes`` real episodes with mean-mode actions.

    Initial states depend only on ``(seed, index)`` so runs sharing a seed are
    scored on identical starts.
    """
    rng = np.random.default_rng([int(seed), 7919, int(index)])
    returns = []
    for _ in range(episodes):
        state = env.reset(rng)
        total, done = 0.0, False
        while not done:
            state, r, done = env.step(state, agent.act(state.obs, mode="mean"))
            total += r
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


def _check_metric(record: dict) -> None:
    for key in ("mean_return", "std_return"):
        if not np.isfinite(record[key]):
            raise TrainingError(f"non-finite metric {key}: {json.dumps(record, default=str)}")


def write_metrics(path, metrics) -> None:
    with open(path, "w") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_online(loop: OnlineLoopConfig, model_cfg: ModelConfig, sac_cfg: SacConfig, seed: int = 0,
               stop_return: float | None = None, checkpoint_steps=(), env=None) -> RunResult:
    """Interleave real interaction, model roll-outs and SAC updates.

    With ``loop.model_based=False`` (or zero roll-outs) this is plain SAC on
    real data.  ``stop_return`` ends the run at the first evaluation reaching
    it.  Agent snapshots are kept for the env steps in ``checkpoint_steps``.
    """
    env = env or make_env(loop.env)
    sd, ad_ = env.spec.state_dim, env.spec.action_dim
    env_rng = np.random.default_rng([seed, 1])
    act_rng = np.random.default_rng([seed, 2])
    batch_rng = np.random.default_rng([seed, 3])
    agent = sac_cfg.build(sd, ad_, seed=[seed, 4])
    real = ReplayBuffer(sd, ad_, capacity=loop.warmup_steps + loop.epochs * loop.steps_per_epoch + 1)
    model_based = loop.model_based and loop.rollouts_per_step > 0
    model_buf = ModelBuffer(sd, ad_, loop.model_buffer_capacity)
    model = model_cfg.build(loop.m, seed=[seed, 5], warm_start=True) if model_based else None
    sched = ScheduleFn(*loop.schedule)
    metrics, snapshots = [], {}

    state = env.reset(env_rng)
    for _ in range(loop.warmup_steps):
        a = act_rng.uniform(-1.0, 1.0, size=ad_)
        nxt, r, done = env.step(state, a)
        real.add(state.obs, a, r, nxt.obs, done, terminal=nxt.info["terminal"])
        state = env.reset(env_rng) if done else nxt

    total = loop.epochs * loop.steps_per_epoch
    n_eval = 0
    policy = agent.policy("sample")
    for t in range(total):
        env_step = loop.warmup_steps + t
        if model_based and ((loop.retrain_each_epoch and t % loop.steps_per_epoch == 0)
                            or (not loop.retrain_each_epoch and t % loop.retrain_interval == 0)):
            model.fit(real)
            model.max_epochs = loop.retrain_max_epochs
        a = agent.act(state.obs, mode="sample", rng=act_rng)
        nxt, r, done = env.step(state, a)
        real.add(state.obs, a, r, nxt.obs, done, terminal=nxt.info["terminal"])
        state = env.reset(env_rng) if done else nxt
        h = sched(env_step)
        if model_based:
            branched_rollout(model, policy, real, model_buf, loop.rollouts_per_step, h, seed=seed, call=t,
                             terminal_fn=env.is_terminal)
        for _ in range(loop.utd_ratio):
            agent.update(mixed_batch(real, model_buf if model_based else None, agent.batch_size,
                                     agent.real_fraction, batch_rng))
        step_count = env_step + 1
        if step_count in checkpoint_steps:
            snapshots[step_count] = agent.state()
        if loop.eval_interval and (t + 1) % loop.eval_interval == 0:
            mean, std = evaluate(agent, env, loop.eval_episodes, seed, n_eval)
            n_eval += 1
            rec = {"env_step": step_count, "mean_return": mean, "std_return": std, "h": h,
                   "model_holdout_nll_per_k": list(model.holdout_nll_per_k_) if model_based else []}
            _check_metric(rec)
            metrics.append(rec)
            log.info("online step %d: return %.1f +- %.1f", step_count, mean, std)
            if stop_return is not None and mean >= stop_return:
                break
    return RunResult(agent, metrics, model, real, model_buf, {"snapshots": snapshots})


def run_offline(loop: OfflineLoopConfig, model_cfg: ModelConfig, sac_cfg: SacConfig, seed: int = 0,
                dataset: ReplayBuffer | None = None, env_name: str | None = None,
                model: AnyStepDynamicsModel | None = None) -> RunResult:
    """Train the model once on the dataset, then alternate penalized roll-outs and SAC updates."""
    manifest = {}
    if dataset is None:
        if not loop.dataset:
            raise ConfigurationError("offline training needs a dataset", key="dataset")
        dataset, manifest = read_dataset(loop.dataset)
    env_name = env_name or manifest.get("env")
    if env_name is None:
        raise ConfigurationError("cannot tell which environment the dataset came from", key="env")
    env = make_env(env_name)
    sd, ad_ = env.spec.state_dim, env.spec.action_dim
    if dataset.max_episode_length() < loop.m:
        raise ConfigurationError(f"dataset episodes are shorter than m={loop.m}", key="m")
    if model is None:
        model = model_cfg.build(loop.m, seed=[seed, 5]).fit(dataset)
    agent = sac_cfg.build(sd, ad_, seed=[seed, 4])
    batch_rng = np.random.default_rng([seed, 3])
    model_buf = ModelBuffer(sd, ad_, loop.model_buffer_capacity)
    penalty = PenaltyConfig(loop.beta)
    policy = agent.policy("sample")
    metrics = []
    n_eval = 0
    u_trace = []
    for it in range(loop.iterations):
        report = branched_rollout(model, policy, dataset, model_buf, loop.rollouts, loop.horizon, seed=seed,
                                  call=it, terminal_fn=env.is_terminal, penalty=penalty)
        if report is not None:
            u_trace.append(float(np.mean(report.u)))
        for _ in range(loop.utd_ratio):
            agent.update(mixed_batch(dataset, model_buf, agent.batch_size, agent.real_fraction, batch_rng))
        last = it == loop.iterations - 1
        if last or (loop.eval_interval and (it + 1) % loop.eval_interval == 0):
            mean, std = evaluate(agent, env, loop.eval_episodes, seed, n_eval)
            n_eval += 1
            rec = {"iteration": it + 1, "mean_return": mean, "std_return": std, "h": loop.horizon,
                   "mean_uncertainty": float(np.mean(u_trace[-loop.eval_interval:])) if u_trace else 0.0,
                   "model_holdout_nll_per_k": list(model.holdout_nll_per_k_)}
            _check_metric(rec)
            metrics.append(rec)
            log.info("offline iteration %d: return %.1f +- %.1f", it + 1, mean, std)
    return RunResult(agent, metrics, model, dataset, model_buf, {"manifest": manifest})
