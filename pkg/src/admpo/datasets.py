"""Offline dataset generation from random, checkpointed or mixed behavior policies."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import ReplayBuffer, write_dataset
from .envs import make_env
from .exceptions import ConfigurationError
from .sac import SACAgent


@dataclass
class BehaviorSpec:
    """``kind`` is ``"random"``, ``"checkpoint"`` or ``"mixture"``.

    A checkpoint policy acts with its mean action plus Gaussian noise of
    scale ``noise`` (clipped to the action box).  A mixture runs its
    ``components`` one after another, each for a share of the episodes
    proportional to ``weights``.
    """

    kind: str = "random"
    path: str | None = None
    noise: float = 0.0
    components: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("random", "checkpoint", "mixture"):
            raise ConfigurationError(f"unknown behavior kind {self.kind!r}", key="behavior")
        if self.kind == "checkpoint" and not self.path:
            raise ConfigurationError("checkpoint behavior needs a path", key="behavior")
        if self.noise < 0:
            raise ConfigurationError("behavior noise must be >= 0", key="behavior")
        if self.kind == "mixture":
            self.components = [c if isinstance(c, BehaviorSpec) else BehaviorSpec.from_any(c) for c in self.components]
            if not self.components:
                raise ConfigurationError("mixture behavior needs components", key="behavior")
            if not self.weights:
                self.weights = [1.0] * len(self.components)
            if len(self.weights) != len(self.components) or min(self.weights) < 0 or sum(self.weights) <= 0:
                raise ConfigurationError("mixture weights must match components and be non-negative",
                                         key="behavior")

    @classmethod
    def from_any(cls, value) -> "BehaviorSpec":
        """Accepts a spec, a dict, a JSON string, ``"random"`` or ``"checkpoint:PATH[:SIGMA]"``."""
        if isinstance(value, BehaviorSpec):
            return value
        if isinstance(value, dict):
            return cls(**value)
        text = str(value).strip()
        if text.startswith("{"):
            return cls(**json.loads(text))
        if text == "random":
            return cls()
        if text.startswith("checkpoint:"):
            rest = text[len("checkpoint:"):]
            path, sep, sigma = rest.rpartition(":")
            if sep and _is_float(sigma):
                return cls(kind="checkpoint", path=path, noise=float(sigma))
            return cls(kind="checkpoint", path=rest)
        raise ConfigurationError(f"cannot parse behavior spec {value!r}", key="behavior")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "checkpoint":
            out.update(path=str(self.path), noise=self.noise)
        if self.kind == "mixture":
            out.update(components=[c.to_dict() for c in self.components], weights=list(self.weights))
        return out


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _episode_split(n: int, weights) -> list[int]:
    w = np.asarray(weights, dtype=np.float64)
    counts = np.floor(n * w / w.sum()).astype(int)
    counts[-1] += n - counts.sum()
    return counts.tolist()


def _behavior_policy(spec: BehaviorSpec, env, rng: np.random.Generator):
    ad_ = env.spec.action_dim
    if spec.kind == "random":
        return lambda obs: rng.uniform(-1.0, 1.0, size=ad_)
    agent = load_behavior_agent(spec.path, env)

    def act(obs):
        a = agent.act(obs, mode="mean")
        if spec.noise > 0:
            a = a + spec.noise * rng.standard_normal(ad_)
        return np.clip(a, -1.0, 1.0)

    return act


def batch_behavior_policy(spec: BehaviorSpec, env, base_dir: str | None = None):
    """Roll-out form ``f(states, rngs)`` of a behavior spec.

    Mixture components are chosen per call and row in proportion to their
    weights.  Relative checkpoint paths are resolved against ``base_dir``.
    """
    ad_ = env.spec.action_dim
    if spec.kind == "random":
        return lambda states, rngs: np.stack([g.uniform(-1.0, 1.0, size=ad_) for g in rngs])
    if spec.kind == "mixture":
        parts = [batch_behavior_policy(c, env, base_dir) for c in spec.components]
        w = np.asarray(spec.weights, dtype=np.float64)
        w = w / w.sum()

        def mix(states, rngs):
            pick = np.array([g.choice(len(parts), p=w) for g in rngs])
            out = np.empty((len(states), ad_))
            for j, f in enumerate(parts):
                rows = np.flatnonzero(pick == j)
                if len(rows):
                    out[rows] = f(states[rows], [rngs[i] for i in rows])
            return out

        return mix
    path = spec.path
    if base_dir and not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(base_dir, path)
    agent = load_behavior_agent(path, env)

    def act(states, rngs):
        a = agent.act(states, mode="mean").reshape(len(states), ad_)
        if spec.noise > 0:
            a = a + spec.noise * np.stack([g.standard_normal(ad_) for g in rngs])
        return np.clip(a, -1.0, 1.0)

    return act


def load_behavior_agent(path, env) -> SACAgent:
    if not os.path.exists(str(path)) or not os.path.exists(str(path) + ".json"):
        raise ConfigurationError(f"checkpoint {path} not found", key="checkpoint")
    agent = SACAgent.load(path)
    if agent.state_dim != env.spec.state_dim or agent.action_dim != env.spec.action_dim:
        raise ConfigurationError(
            f"checkpoint {path} has dims ({agent.state_dim}, {agent.action_dim}), "
            f"env needs ({env.spec.state_dim}, {env.spec.action_dim})", key="checkpoint")
    return agent


def collect(env, spec: BehaviorSpec, episodes: int, rng: np.random.Generator) -> tuple[ReplayBuffer, list]:
    """Roll ``episodes`` real episodes; returns the buffer and per-episode returns."""
    if spec.kind == "mixture":
        parts = [collect(env, c, n, rng) for c, n in zip(spec.components, _episode_split(episodes, spec.weights)) if n]
        arrs = [p.arrays() for p, _ in parts]
        offsets = np.cumsum([0] + [p.n_episodes for p, _ in parts[:-1]])
        cat = {key: np.concatenate([a[key] for a in arrs]) for key in arrs[0]}
        cat["episode_id"] = np.concatenate([a["episode_id"] + off for a, off in zip(arrs, offsets)])
        buf = ReplayBuffer.from_arrays(cat["s"], cat["a"], cat["r"], cat["s_next"], cat["done"],
                                       cat["episode_id"], terminal=cat["terminal"])
        return buf, [r for _, rets in parts for r in rets]
    policy = _behavior_policy(spec, env, rng)
    buf = ReplayBuffer(env.spec.state_dim, env.spec.action_dim,
                       capacity=episodes * env.spec.max_episode_steps + 1)
    returns = []
    for _ in range(episodes):
        state, total, done = env.reset(rng), 0.0, False
        while not done:
            a = policy(state.obs)
            nxt, r, done = env.step(state, a)
            a = np.clip(a, env.spec.action_low, env.spec.action_high)
            buf.add(state.obs, a, r, nxt.obs, done, terminal=nxt.info["terminal"])
            total += r
            state = nxt
        returns.append(total)
    return buf, returns


def gen_dataset(env_name: str, behavior, episodes: int, seed: int, path) -> dict:
    """Generate a dataset file and return its manifest."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1", key="episodes")
    spec = BehaviorSpec.from_any(behavior)
    env = make_env(env_name)
    rng = np.random.default_rng([int(seed), 11])
    buf, returns = collect(env, spec, episodes, rng)
    manifest = {
        "env": env_name,
        "behavior": spec.to_dict(),
        "seed": int(seed),
        "episodes": int(episodes),
        "transitions": len(buf),
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
    }
    parent = os.path.dirname(os.path.abspath(str(path)))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise ConfigurationError(f"cannot write dataset to {path}", key="out")
    write_dataset(path, buf, manifest)
    return manifest
