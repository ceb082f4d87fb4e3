"""Measurement harnesses: open-loop compounding error, uncertainty vs. error, m sweeps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ReplayBuffer, RolloutSeed
from .exceptions import ConfigurationError, UsageError
from .models import AnyStepDynamicsModel, Normalizer
from .models.baselines import BootstrapRNNModel, EnsembleDynamicsModel
from .rollout import adm_roll, trajectory_rngs

FLOAT32_MAX = float(np.finfo(np.float32).max)
ERROR_METRIC = "l2 over state normalized by dataset std"


@dataclass
class CompoundingErrorCurve:
    lengths: np.ndarray
    mean_error: np.ndarray
    std_error: np.ndarray
    model_id: str
    n_starts: int
    n_seeds: int = 1
    errors: np.ndarray | None = None  # (starts, L)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# error: {ERROR_METRIC}; model: {self.model_id}; starts: {self.n_starts}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["length", "mean_error", "std_error"])
            for row in zip(self.lengths, self.mean_error, self.std_error):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2]))])


@dataclass
class UncertaintyScatter:
    u: np.ndarray
    err: np.ndarray
    tags: list
    r: float
    degenerate: bool = False
    inputs: dict = field(default_factory=dict)

    def mean_u(self, tag: str) -> float:
        sel = np.array([t == tag for t in self.tags])
        return float(np.mean(self.u[sel]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "err", "policy_tag"])
            for u, e, t in zip(self.u, self.err, self.tags):
                w.writerow([repr(float(u)), repr(float(e)), t])


def _clamp_errors(err: np.ndarray) -> np.ndarray:
    err = np.where(np.isfinite(err), err, FLOAT32_MAX)
    return np.minimum(err, FLOAT32_MAX)


def error_starts(dataset: ReplayBuffer, horizon: int, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Start indices whose episode holds the m-step seed window plus ``horizon`` more transitions."""
    need = m - 1 + horizon
    valid = np.flatnonzero(dataset.remaining() >= need)
    if len(valid) == 0:
        raise ConfigurationError(
            f"no episode has {need} transitions (horizon {horizon} with m={m}); "
            f"longest is {dataset.max_episode_length()}", key="horizon")
    return np.sort(valid[rng.choice(len(valid), size=n, replace=len(valid) < n)])


def _replay_policy(actions: np.ndarray):
    step = [0]

    def policy(states, rngs):
        a = actions[:, step[0]]
        step[0] += 1
        return a

    return policy


def open_loop_predictions(model, dataset: ReplayBuffer, starts: np.ndarray, horizon: int, m: int,
                          seed: int = 0) -> np.ndarray:
    """Mean-mode predictions (B, horizon, S) of the states after each replayed action.

    Every model sees the same history: the states ``s[i..i+m-1]`` and the
    actions between them, then the recorded actions from ``i+m-1`` on.
    """
    arr = dataset.arrays()
    idx = starts[:, None] + np.arange(m)[None, :]
    states_hist = arr["s"][idx]
    act_idx = starts[:, None] + np.arange(m - 1 + horizon)[None, :]
    acts = arr["a"][act_idx]
    future = acts[:, m - 1:]
    b, sd = len(starts), dataset.state_dim
    out = np.empty((b, horizon, sd))
    if isinstance(model, EnsembleDynamicsModel):
        s = states_hist[:, -1]
        for t in range(horizon):
            s = np.mean([model.predict_member(i, s, future[:, t]).mean_s for i in model.elites_], axis=0)
            out[:, t] = s
        return out
    if isinstance(model, BootstrapRNNModel):
        win_s, win_a = states_hist, acts[:, :m]
        for t in range(horizon):
            s = model.predict(win_s, win_a)
            out[:, t] = s
            if t + 1 < horizon:
                win_s = np.concatenate([win_s[:, 1:], s[:, None]], axis=1)
                win_a = np.concatenate([win_a[:, 1:], future[:, t + 1][:, None]], axis=1)
        return out
    mm = getattr(model, "m", 1)
    seed_win = RolloutSeed(states=states_hist[:, m - mm:], actions=acts[:, m - mm: m - 1], index=starts)
    rep = adm_roll(model, _replay_policy(future), horizon, seed_win, trajectory_rngs(seed, 0, b), mode="mean")
    out[rep.traj, rep.step] = rep.s_next
    return out


def compounding_error(model, dataset: ReplayBuffer, horizon: int, starts: int, seed: int = 0,
                      m: int | None = None, model_id: str | None = None,
                      scale: np.ndarray | None = None) -> CompoundingErrorCurve:
    """Open-loop error curve for lengths 1..horizon, replaying recorded actions."""
    if horizon < 1 or starts < 1:
        raise UsageError("horizon and starts must be >= 1")
    m = m or getattr(model, "m", 1)
    rng = np.random.default_rng([int(seed), 17])
    idx = error_starts(dataset, horizon, m, starts, rng)
    pred = open_loop_predictions(model, dataset, idx, horizon, m, seed=seed)
    truth = dataset.arrays()["s_next"][idx[:, None] + (m - 1) + np.arange(horizon)[None, :]]
    scale = Normalizer.fit(dataset.arrays()["s"]).std if scale is None else np.asarray(scale)
    with np.errstate(over="ignore", invalid="ignore"):
        err = np.linalg.norm((pred - truth) / scale, axis=-1)
    err = _clamp_errors(err)
    with np.errstate(over="ignore", invalid="ignore"):
        mean, std = _clamp_errors(err.mean(axis=0)), _clamp_errors(err.std(axis=0))
    return CompoundingErrorCurve(np.arange(1, horizon + 1), mean, std, model_id or type(model).__name__,
                                 len(idx), errors=err)


def average_curves(curves) -> CompoundingErrorCurve:
    """Pool curves from several seeds into one (mean of per-seed means)."""
    curves = list(curves)
    means = np.stack([c.mean_error for c in curves])
    return replace(curves[0], mean_error=_clamp_errors(means.mean(axis=0)),
                   std_error=_clamp_errors(means.std(axis=0)), n_seeds=len(curves), errors=None)


def pearson(x, y) -> tuple[float, bool]:
    """Correlation and a degenerate flag; zero-variance inputs report r = 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, True
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return float(np.clip(r, -1.0, 1.0)), False


def true_errors(env, model, cond, plans, k, mean_s) -> np.ndarray:
    """Normalized L2 gap between predicted means and the env's exact k-step result."""
    truth = np.stack([env.true_k_step(c, p[:kk]) for c, p, kk in zip(cond, plans, k)])
    return np.linalg.norm((mean_s - truth) / model.state_scale, axis=-1)


def uncertainty_scatter(model: AnyStepDynamicsModel, dataset: ReplayBuffer, env, policies: dict,
                        n: int, horizon: int = 5, seed: int = 0) -> UncertaintyScatter:
    """Roll each tagged policy through the model and pair u with true one-step error.

    ``policies`` maps tag to ``f(states, rngs)``.  ``n`` points per tag come
    from ``ceil(n / horizon)`` mean-mode roll-outs; the error compares the
    chosen-k mean with the exact env applied to the same state and actions.
    """
    if not isinstance(model, AnyStepDynamicsModel):
        raise UsageError("uncertainty readings need an any-step model")
    us, errs, tags = [], [], []
    inputs = {"cond": [], "plans": [], "k": [], "mean_s": []}
    n_traj = -(-n // horizon)
    for j, (tag, policy) in enumerate(sorted(policies.items())):
        start_rng = np.random.default_rng([int(seed), 23, j])
        seed_win = dataset.sample_rollout_starts(n_traj, model.m, start_rng)
        rep = adm_roll(model, policy, horizon, seed_win, trajectory_rngs(seed, 1000 + j, n_traj), mode="mean",
                       uncertainty=True, terminal_fn=env.is_terminal, record_inputs=True)
        cond = np.concatenate([c for _, _, c, _ in rep.inputs])[:n]
        plans = np.concatenate([p for _, _, _, p in rep.inputs])[:n]
        k = rep.k[:n]
        mean_s = rep.s_next[:n]
        errs.append(true_errors(env, model, cond, plans, k, mean_s))
        us.append(rep.u[:n])
        tags += [tag] * len(k)
        for key, val in (("cond", cond), ("plans", plans), ("k", k), ("mean_s", mean_s)):
            inputs[key].append(val)
    u = np.concatenate(us)
    err = np.concatenate(errs)
    r, degenerate = pearson(u, err)
    return UncertaintyScatter(u, err, tags, r, degenerate, {key: np.concatenate(v) for key, v in inputs.items()})


@dataclass
class SweepRow:
    m: int
    mean_return: float
    std_return: float
    returns: list


def m_sweep(run_fn, m_values, seeds=(0, 1, 2)) -> list[SweepRow]:
    """``run_fn(m, seed) -> final return``; one row per m with mean/std over seeds."""
    rows = []
    for m in m_values:
        if int(m) < 1:
            raise ConfigurationError(f"m must be >= 1, got {m}", key="m")
        rets = [float(run_fn(int(m), int(s))) for s in seeds]
        rows.append(SweepRow(int(m), float(np.mean(rets)), float(np.std(rets)), rets))
    return rows


def sweep_spread(rows) -> float:
    """(max - min) of row means relative to the best row's magnitude."""
    means = np.array([r.mean_return for r in rows])
    return float((means.max() - means.min()) / abs(means.max()))


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "mean_return", "std_return"])
        for row in rows:
            w.writerow([row.m, repr(row.mean_return), repr(row.std_return)])
