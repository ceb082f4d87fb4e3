"""Soft actor-critic with twin critics and automatic temperature tuning."""
from __future__ import annotations

import json
import math

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .exceptions import ConfigurationError, TrainingError, UsageError
from .utils.validation import check_random_state, check_states

LOG_2 = math.log(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class _Actor(ad.Module):
    def __init__(self, state_dim, action_dim, hidden, rng):
        self.net = ad.MLP([state_dim, *hidden, 2 * action_dim], rng)
        self.action_dim = action_dim

    def __call__(self, s):
        out = self.net(s)
        mean = out[:, : self.action_dim]
        log_std = ad.soft_clamp(out[:, self.action_dim:], -20.0, 2.0)
        return mean, log_std


class _Critic(ad.Module):
    def __init__(self, state_dim, action_dim, hidden, rng):
        self.net = ad.MLP([state_dim + action_dim, *hidden, 1], rng)

    def __call__(self, s, a):
        return self.net(ad.concat([s, a], axis=1))


def squashed_sample(mean: ad.Tensor, log_std: ad.Tensor, eps: np.ndarray):
    """Reparameterized tanh-Gaussian draw and its log-density (summed over action dims)."""
    u = mean + ad.mul_const(ad.exp(log_std), eps)
    action = ad.tanh(u)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    log_jac = ((LOG_2 - u) - ad.softplus(u * -2.0)) * 2.0
    const = (-0.5 * eps * eps - HALF_LOG_2PI).sum(axis=1, keepdims=True)
    log_prob = ad.add(ad.neg(log_std + log_jac).sum(axis=1, keepdims=True), ad.Tensor(const, dtype=mean.data.dtype))
    return action, log_prob


def squashed_log_prob(action: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Closed-form log-density of tanh-Gaussian actions (numpy, no graph)."""
    action = np.clip(action, -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(action)
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI - np.log1p(-action * action), axis=-1)


class SACAgent(BaseEstimator):
    """Twin-critic SAC.

    ``real_fraction`` is the share of each minibatch drawn from real data when
    model data is available; ``target_entropy=None`` means ``-action_dim``.
    """

    def __init__(self, state_dim=3, action_dim=1, hidden=(256, 256), gamma=0.99, tau=5e-3, lr_actor=1e-4,
                 lr_critic=3e-4, lr_alpha=3e-4, batch_size=256, target_entropy=None, init_alpha=1.0,
                 real_fraction=0.05, random_state=0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.gamma = gamma
        self.tau = tau
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.lr_alpha = lr_alpha
        self.batch_size = batch_size
        self.target_entropy = target_entropy
        self.init_alpha = init_alpha
        self.real_fraction = real_fraction
        self.random_state = random_state
        self._setup()

    def _setup(self):
        if not 0 < self.tau <= 1:
            raise ConfigurationError("tau must lie in (0, 1]", key="tau")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0, 1)", key="gamma")
        if not 0 < self.real_fraction <= 1:
            raise ConfigurationError("real_fraction must lie in (0, 1]", key="real_fraction")
        rng = check_random_state(self.random_state)
        hidden = tuple(self.hidden)
        self.actor = _Actor(self.state_dim, self.action_dim, hidden, rng)
        self.critics = [_Critic(self.state_dim, self.action_dim, hidden, rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        for t in self.targets:
            for p in t.parameters():
                p.requires_grad = False
        self.log_alpha = ad.Tensor(np.array([math.log(self.init_alpha)]), requires_grad=True)
        self.actor_opt = ad.Adam(self.actor.parameters(), lr=self.lr_actor)
        self.critic_params = [p for c in self.critics for p in c.parameters()]
        self.critic_opt = ad.Adam(self.critic_params, lr=self.lr_critic)
        self.alpha_opt = ad.Adam([self.log_alpha], lr=self.lr_alpha)
        self.rng_ = rng
        self.n_updates_ = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    @property
    def entropy_target(self) -> float:
        return -float(self.action_dim) if self.target_entropy is None else float(self.target_entropy)

    def _tensor(self, x):
        return ad.Tensor(x, dtype=self.actor.net.layers[0].weight.data.dtype)

    # ------------------------------------------------------------ acting

    def act(self, s, mode: str = "sample", rng=None) -> np.ndarray:
        """Action for one state or a batch; ``mode="mean"`` returns ``tanh(mean)``."""
        s_arr, single = check_states(s, self.state_dim)
        with ad.no_grad():
            mean, log_std = self.actor(self._tensor(s_arr))
        if mode == "mean":
            a = np.tanh(mean.data.astype(np.float64))
        elif mode == "sample":
            rng = self.rng_ if rng is None else rng
            eps = rng.standard_normal(mean.shape)
            a = np.tanh(mean.data + np.exp(log_std.data) * eps).astype(np.float64)
        else:
            raise UsageError(f"mode must be 'sample' or 'mean', got {mode!r}")
        return a[0] if single else a

    def policy(self, mode: str = "sample"):
        """Batch policy ``f(states, rngs)`` drawing each row's noise from its own generator."""

        def f(states, rngs):
            with ad.no_grad():
                mean, log_std = self.actor(self._tensor(states))
            if mode == "mean":
                return np.tanh(mean.data.astype(np.float64))
            eps = np.stack([g.standard_normal(self.action_dim) for g in rngs])
            return np.tanh(mean.data.astype(np.float64) + np.exp(log_std.data.astype(np.float64)) * eps)

        return f

    def log_prob(self, s, a) -> np.ndarray:
        s_arr, _ = check_states(s, self.state_dim)
        with ad.no_grad():
            mean, log_std = self.actor(self._tensor(s_arr))
        return squashed_log_prob(np.atleast_2d(a), mean.data.astype(np.float64), log_std.data.astype(np.float64))

    # ------------------------------------------------------------ learning

    def critic_target(self, r, s_next, terminal) -> np.ndarray:
        """``r + gamma * (1 - terminal) * (min target Q(s', a') - alpha log pi(a'|s'))``."""
        r = np.asarray(r, dtype=np.float64).reshape(-1, 1)
        mask = 1.0 - np.asarray(terminal, dtype=np.float64).reshape(-1, 1)
        if self.gamma == 0:
            return r
        with ad.no_grad():
            sn = self._tensor(s_next)
            mean, log_std = self.actor(sn)
            eps = self.rng_.standard_normal(mean.shape)
            a_next, logp = squashed_sample(mean, log_std, eps)
            q = np.minimum(self.targets[0](sn, a_next).data, self.targets[1](sn, a_next).data)
        soft = q.astype(np.float64) - self.alpha * logp.data.astype(np.float64)
        return r + self.gamma * mask * soft

    def update(self, batch: dict) -> dict:
        """One gradient step on critics, actor and temperature, then a Polyak target update."""
        s = self._tensor(batch["s"])
        a = self._tensor(batch["a"])
        y = self.critic_target(batch["r"], batch["s_next"], batch["terminal"])
        y_t = self._tensor(y)
        try:
            q_losses = []
            for c in self.critics:
                diff = c(s, a) - y_t
                q_losses.append(ad.square(diff).mean())
            critic_loss = q_losses[0] + q_losses[1]
            self.critic_opt.step(ad.backward(critic_loss, self.critic_params))

            for p in self.critic_params:
                p.requires_grad = False
            mean, log_std = self.actor(s)
            eps = self.rng_.standard_normal(mean.shape)
            a_new, logp = squashed_sample(mean, log_std, eps)
            q_new = ad.minimum(self.critics[0](s, a_new), self.critics[1](s, a_new))
            actor_loss = (logp * self.alpha - q_new).mean()
            self.actor_opt.step(ad.backward(actor_loss, self.actor.parameters()))
        except ad.NonFiniteError as exc:
            raise TrainingError(f"non-finite SAC loss at update {self.n_updates_}") from exc
        finally:
            for p in self.critic_params:
                p.requires_grad = True

        logp_v = logp.data.astype(np.float64)
        alpha_grad = -np.mean(logp_v + self.entropy_target)
        self.alpha_opt.step([np.array([alpha_grad], dtype=self.log_alpha.data.dtype)])
        self.soft_update()
        self.n_updates_ += 1
        return {
            "critic_loss": float(critic_loss.item()),
            "actor_loss": float(actor_loss.item()),
            "alpha": self.alpha,
            "entropy": float(-logp_v.mean()),
        }

    def soft_update(self) -> None:
        for c, t in zip(self.critics, self.targets):
            for (_, p), (_, tp) in zip(_all_params(c), _all_params(t)):
                tp.data = ((1.0 - self.tau) * tp.data + self.tau * p.data).astype(tp.data.dtype, copy=False)

    # ------------------------------------------------------------ checkpoints

    def _modules(self):
        return [("actor", self.actor), ("q0", self.critics[0]), ("q1", self.critics[1]),
                ("q0_target", self.targets[0]), ("q1_target", self.targets[1])]

    def state(self) -> dict:
        out = {}
        for prefix, mod in self._modules():
            for k, p in _all_params(mod):
                out[f"{prefix}.{k}"] = p.data.copy()
        out["log_alpha"] = self.log_alpha.data.copy()
        return out

    def load_state(self, state: dict) -> None:
        for prefix, mod in self._modules():
            for k, p in _all_params(mod):
                key = f"{prefix}.{k}"
                if key not in state:
                    raise ConfigurationError(f"checkpoint is missing {key}")
                if state[key].shape != p.shape:
                    raise ConfigurationError(
                        f"checkpoint {key} has shape {state[key].shape}, agent expects {p.shape}")
                p.data = np.asarray(state[key], dtype=p.data.dtype).copy()
        self.log_alpha.data = np.asarray(state["log_alpha"], dtype=self.log_alpha.data.dtype).copy()

    def save(self, path) -> None:
        ad.save_params(path, self.state())
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        with open(str(path) + ".json", "w") as fh:
            json.dump({"kind": "sac", "params": params}, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SACAgent":
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["params"].items()}
        agent = cls(**params)
        agent.load_state(ad.load_params(path))
        return agent


def _all_params(mod: ad.Module):
    """Named parameters including frozen ones (targets have requires_grad off)."""
    out = []

    def walk(obj, prefix):
        for name, value in vars(obj).items():
            if isinstance(value, ad.Tensor):
                out.append((prefix + name, value))
            elif isinstance(value, ad.Module):
                walk(value, prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ad.Module):
                        walk(item, f"{prefix}{name}.{i}.")

    walk(mod, "")
    return out
