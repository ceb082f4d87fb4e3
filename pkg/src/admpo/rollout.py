"""Model roll-outs with a uniformly random backtracking length at every step.

The window holds the last m states and the m-1 actions between them.  At each
step the policy picks the next action, a length k is drawn from {1..m}, and the
model predicts the next state from the state k-1 steps back plus the k most
recent actions.  The window then slides forward by one (state, action) pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ModelBuffer, ReplayBuffer, RolloutSeed
from .exceptions import UsageError
from .uncertainty import PenaltyConfig, penalize, uncertainty_from_arrays


def trajectory_rngs(seed, call: int, n: int) -> list:
    """One generator per trajectory, keyed on (seed, call, trajectory index)."""
    return [np.random.default_rng([int(seed), int(call), i]) for i in range(n)]


@dataclass
class RolloutWindow:
    """Sliding history: ``states`` (B, m, S) and ``actions`` (B, m-1, A)."""

    states: np.ndarray
    actions: np.ndarray

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @classmethod
    def from_seed(cls, seed: RolloutSeed) -> "RolloutWindow":
        if seed.states.ndim != 3 or seed.actions.shape[1] != seed.states.shape[1] - 1:
            raise UsageError("seed window must hold m states and m-1 actions")
        return cls(seed.states.copy(), seed.actions.copy())

    def plan(self, new_action: np.ndarray, k: np.ndarray):
        """Conditioning state and left-aligned action plan for each row's k."""
        m = self.m
        full = np.concatenate([self.actions, new_action[:, None, :]], axis=1)
        rows = np.arange(len(k))
        cond = self.states[rows, m - k]
        # left-align the last k actions: position j holds full[m - k + j]
        pos = np.clip((m - k)[:, None] + np.arange(m)[None, :], 0, m - 1)
        plans = full[rows[:, None], pos] * (np.arange(m)[None, :] < k[:, None])[..., None]
        return cond, plans, full

    def slide(self, full_actions: np.ndarray, new_state: np.ndarray) -> "RolloutWindow":
        states = np.concatenate([self.states[:, 1:], new_state[:, None, :]], axis=1)
        return RolloutWindow(states, full_actions[:, 1:])


@dataclass
class RolloutBatchReport:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    traj: np.ndarray
    step: np.ndarray
    k: np.ndarray
    truncation: list
    u: np.ndarray | None = None
    r_raw: np.ndarray | None = None
    per_k_means: list = field(default_factory=list)
    per_k_stds: list = field(default_factory=list)
    inputs: list = field(default_factory=list)

    def __len__(self):
        return len(self.r)


def adm_roll(model, policy, horizon: int, seed: RolloutSeed, rngs, mode: str = "sample",
             uncertainty: bool = False, terminal_fn=None, penalty: PenaltyConfig | None = None,
             record_inputs: bool = False) -> RolloutBatchReport:
    """Roll ``len(rngs)`` trajectories ``horizon`` steps through ``model``.

    ``policy(states, rngs) -> actions`` draws one action per row using that
    row's generator.  In ``"sample"`` mode next states and rewards are drawn
    from the predicted Gaussian; ``"mean"`` uses its mean.  With
    ``uncertainty=True`` all m backtracking lengths are evaluated at every
    step, the disagreement ``u`` is recorded and, when ``penalty`` is given,
    stored rewards become ``r - beta * u``.
    """
    if horizon < 1:
        raise UsageError(f"roll-out horizon must be >= 1, got {horizon}")
    if mode not in ("sample", "mean"):
        raise UsageError(f"mode must be 'sample' or 'mean', got {mode!r}")
    window = RolloutWindow.from_seed(seed)
    m = window.m
    if m != model.m:
        raise UsageError(f"seed window length {m} does not match model m={model.m}")
    b = len(rngs)
    if window.states.shape[0] != b:
        raise UsageError("one generator per seed window is required")
    if penalty is not None and not uncertainty:
        raise UsageError("a reward penalty needs uncertainty=True")
    sd = window.states.shape[2]
    active = np.arange(b)
    out = {key: [] for key in ("s", "a", "r", "s_next", "terminal", "traj", "step", "k", "u")}
    truncation = ["horizon"] * b
    report_means, report_stds, inputs = [], [], []

    for tau in range(horizon):
        if len(active) == 0:
            break
        act_rngs = [rngs[i] for i in active]
        cur = window.states[:, -1]
        actions = np.asarray(policy(cur, act_rngs), dtype=np.float64).reshape(len(active), -1)
        k = np.array([g.integers(1, m + 1) for g in act_rngs], dtype=np.int64)
        rows = np.arange(len(active))
        if uncertainty:
            # one batch row per (k, trajectory), k-major
            ks_all = np.repeat(np.arange(1, m + 1), len(active))
            win_rep = RolloutWindow(np.tile(window.states, (m, 1, 1)), np.tile(window.actions, (m, 1, 1)))
            cond, plans, full = win_rep.plan(np.tile(actions, (m, 1)), ks_all)
            pred = model.predict_gaussian(cond, plans, ks_all)
            means_all = pred.mean_s.reshape(m, len(active), sd)
            stds_all = pred.std_s.reshape(m, len(active), sd)
            pick = (k - 1) * len(active) + rows
            chosen_mean_s, chosen_std_s = pred.mean_s[pick], pred.std_s[pick]
            chosen_mean_r, chosen_std_r = pred.mean_r[pick], pred.std_r[pick]
            full = full[: len(active)]
            u = uncertainty_from_arrays(means_all, stds_all, model.state_scale)
            report_means.append(means_all)
            report_stds.append(stds_all)
            if record_inputs:
                c, p, _ = window.plan(actions, k)
                inputs.append((active.copy(), k.copy(), c, p))
        else:
            cond, plans, full = window.plan(actions, k)
            pred = model.predict_gaussian(cond, plans, k)
            chosen_mean_s, chosen_std_s = pred.mean_s, pred.std_s
            chosen_mean_r, chosen_std_r = pred.mean_r, pred.std_r
            u = None
            if record_inputs:
                inputs.append((active.copy(), k.copy(), cond, plans))
        if mode == "sample":
            eps = np.stack([g.standard_normal(sd + 1) for g in act_rngs])
            s_next = chosen_mean_s + chosen_std_s * eps[:, :sd]
            r = chosen_mean_r + chosen_std_r * eps[:, sd]
        else:
            s_next, r = chosen_mean_s, chosen_mean_r
        term = np.asarray(terminal_fn(s_next), dtype=bool) if terminal_fn is not None else np.zeros(len(active), bool)

        out["s"].append(cur)
        out["a"].append(actions)
        out["r"].append(r)
        out["s_next"].append(s_next)
        out["terminal"].append(term)
        out["traj"].append(active.copy())
        out["step"].append(np.full(len(active), tau))
        out["k"].append(k)
        if u is not None:
            out["u"].append(u)

        window = window.slide(full, s_next)
        if term.any():
            for i in active[term]:
                truncation[i] = "terminal"
            keep = ~term
            active = active[keep]
            window = RolloutWindow(window.states[keep], window.actions[keep])

    cat = {key: (np.concatenate(v) if v else None) for key, v in out.items()}
    r_raw = cat["r"]
    r_store = r_raw
    if penalty is not None:
        r_store = penalize(r_raw, cat["u"], penalty)
    return RolloutBatchReport(
        s=cat["s"], a=cat["a"], r=r_store, s_next=cat["s_next"], terminal=cat["terminal"],
        traj=cat["traj"], step=cat["step"], k=cat["k"], truncation=truncation, u=cat["u"],
        r_raw=r_raw, per_k_means=report_means, per_k_stds=report_stds, inputs=inputs,
    )


def branched_rollout(model, policy, real: ReplayBuffer, model_buffer: ModelBuffer, n_traj: int, horizon: int,
                     seed: int, call: int = 0, mode: str = "sample", terminal_fn=None,
                     penalty: PenaltyConfig | None = None) -> RolloutBatchReport | None:
    """Seed ``n_traj`` windows from real data, roll them out and append to ``model_buffer``."""
    if n_traj == 0:
        return None
    start_rng = np.random.default_rng([int(seed), int(call), 2 ** 31 - 1])
    seed_win = real.sample_rollout_starts(n_traj, model.m, start_rng)
    rngs = trajectory_rngs(seed, call, n_traj)
    report = adm_roll(model, policy, horizon, seed_win, rngs, mode=mode, uncertainty=penalty is not None,
                      terminal_fn=terminal_fn, penalty=penalty)
    model_buffer.add_batch(report.s, report.a, report.r, report.s_next, report.terminal)
    return report
