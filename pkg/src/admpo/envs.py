"""Deterministic toy control tasks with exposed dynamics.

Both environments are value-semantic: the full physical state is the
observation vector, so ``transition(obs, action)`` is a pure function and can
be applied to model-generated states as a ground-truth oracle.

Physical constants (format version 1, frozen):

Pendulum
    g = 10.0, mass = 1.0, length = 1.0, dt = 0.05, max speed 8 rad/s,
    max torque 2.0 (action in [-1, 1] is scaled by 2).  Observation is
    (cos theta, sin theta, theta_dot); theta = 0 is upright.  Reward is
    -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 torque^2) evaluated before the
    step.  No termination; episodes last 200 steps.

PointMass2D
    Double integrator, unit mass, dt = 0.1, force in [-1, 1]^2.  State is
    (x, y, vx, vy); positions are clamped to [-2, 2], velocities to [-2, 2].
    Goal at (1, 1) with radius 0.1; reward is minus the distance to the goal
    after the step; reaching the goal terminates.  Episodes last 100 steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    max_episode_steps: int
    reward: str
    termination: str
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.action_low != -self.action_high:
            raise ValueError("action bounds must be symmetric")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass
class EnvState:
    obs: np.ndarray
    t: int = 0
    action_clipped: bool = False
    info: dict = field(default_factory=dict)


def _clean_action(action, spec: EnvSpec):
    a = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite action {action!r}")
    clipped = np.clip(a, spec.action_low, spec.action_high)
    return clipped, bool(np.any(clipped != a))


class _Env:
    spec: EnvSpec

    def __init__(self, obs_noise_std: float = 0.0, init_noise_scale: float = 1.0):
        self.obs_noise_std = float(obs_noise_std)
        self.init_noise_scale = float(init_noise_scale)

    def transition(self, obs, action):
        raise NotImplementedError

    def is_terminal(self, obs) -> np.ndarray:
        raise NotImplementedError

    def step(self, state: EnvState, action, rng: np.random.Generator | None = None):
        """Advance one step.  Returns ``(next_state, reward, done)``."""
        a, clipped = _clean_action(action, self.spec)
        obs, reward = self.transition(state.obs, a)
        if self.obs_noise_std > 0 and rng is not None:
            obs = obs + rng.normal(0.0, self.obs_noise_std, size=obs.shape)
        t = state.t + 1
        terminal = bool(self.is_terminal(obs))
        done = terminal or t >= self.spec.max_episode_steps
        nxt = EnvState(obs=obs, t=t, action_clipped=clipped, info={"terminal": terminal})
        return nxt, float(reward), done

    def true_k_step(self, obs, actions) -> np.ndarray:
        """Apply the dynamics once per action row and return the final state."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim == 1:
            actions = actions.reshape(1, -1)
        if len(actions) < 1:
            raise ValueError("true_k_step needs at least one action")
        obs = np.asarray(obs, dtype=np.float64)
        for a in actions:
            a, _ = _clean_action(a, self.spec)
            obs, _ = self.transition(obs, a)
        return obs


class Pendulum(_Env):
    spec = EnvSpec(
        name="pendulum",
        state_dim=3,
        action_dim=1,
        max_episode_steps=200,
        reward="-(wrap(theta)^2 + 0.1*theta_dot^2 + 0.001*torque^2)",
        termination="none",
    )
    g = 10.0
    mass = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def reset(self, rng: np.random.Generator) -> EnvState:
        u = rng.uniform(-1.0, 1.0, size=2) * self.init_noise_scale
        theta = math.pi + math.pi * u[0]
        theta_dot = u[1]
        return EnvState(obs=self.observe(theta, theta_dot))

    @staticmethod
    def observe(theta, theta_dot) -> np.ndarray:
        return np.array([np.cos(theta), np.sin(theta), theta_dot], dtype=np.float64)

    def transition(self, obs, action):
        obs = np.asarray(obs, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        theta = np.arctan2(obs[..., 1], obs[..., 0])
        theta_dot = obs[..., 2]
        torque = self.max_torque * np.clip(action[..., 0], -1.0, 1.0)
        wrapped = ((theta + np.pi) % (2 * np.pi)) - np.pi
        reward = -(wrapped ** 2 + 0.1 * theta_dot ** 2 + 0.001 * torque ** 2)
        new_dot = theta_dot + (
            3.0 * self.g / (2.0 * self.length) * np.sin(theta)
            + 3.0 / (self.mass * self.length ** 2) * torque
        ) * self.dt
        new_dot = np.clip(new_dot, -self.max_speed, self.max_speed)
        new_theta = theta + new_dot * self.dt
        nxt = np.stack([np.cos(new_theta), np.sin(new_theta), new_dot], axis=-1)
        return nxt, reward

    def is_terminal(self, obs) -> np.ndarray:
        obs = np.asarray(obs)
        return np.zeros(obs.shape[:-1], dtype=bool)


class PointMass2D(_Env):
    spec = EnvSpec(
        name="pointmass",
        state_dim=4,
        action_dim=2,
        max_episode_steps=100,
        reward="-||position - goal|| after the step",
        termination="||position - goal|| < goal_radius",
    )
    dt = 0.1
    pos_limit = 2.0
    vel_limit = 2.0
    goal = np.array([1.0, 1.0])
    goal_radius = 0.1

    def reset(self, rng: np.random.Generator) -> EnvState:
        pos = rng.normal(0.0, 0.05, size=2) * self.init_noise_scale
        return EnvState(obs=np.concatenate([pos, np.zeros(2)]))

    def transition(self, obs, action):
        obs = np.asarray(obs, dtype=np.float64)
        force = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        pos, vel = obs[..., :2], obs[..., 2:]
        new_pos = pos + vel * self.dt + 0.5 * force * self.dt ** 2
        new_vel = vel + force * self.dt
        new_pos = np.clip(new_pos, -self.pos_limit, self.pos_limit)
        new_vel = np.clip(new_vel, -self.vel_limit, self.vel_limit)
        reward = -np.linalg.norm(new_pos - self.goal, axis=-1)
        return np.concatenate([new_pos, new_vel], axis=-1), reward

    def is_terminal(self, obs) -> np.ndarray:
        obs = np.asarray(obs)
        return np.linalg.norm(obs[..., :2] - self.goal, axis=-1) < self.goal_radius


ENVS = {"pendulum": Pendulum, "pointmass": PointMass2D}


def make_env(name: str, **kwargs) -> _Env:
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**kwargs)


def episode_return(env: _Env, policy, rng: np.random.Generator) -> float:
    """Run one real episode with ``policy(obs) -> action``; returns the summed reward."""
    state = env.reset(rng)
    total, done = 0.0, False
    while not done:
        state, r, done = env.step(state, policy(state.obs), rng)
        total += r
    return total
