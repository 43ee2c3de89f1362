"""Desk-scale control tasks with a shared reset/step interface."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .lqr import LqrSpec


def angle_wrap(theta):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class PendulumEnv:
    """Torque-limited swing-up; ``theta = 0`` is upright.

    Semi-implicit Euler: velocity first, then angle with the new velocity.
    """

    max_speed: float = 8.0
    max_torque: float = 2.0
    dt: float = 0.05
    g: float = 10.0
    m: float = 1.0
    l: float = 1.0
    episode_length: int = 200

    def __post_init__(self):
        self.theta = 0.0
        self.theta_dot = 0.0
        self.t = 0

    name = "pendulum"

    @property
    def obs_dim(self) -> int:
        return 3

    @property
    def act_dim(self) -> int:
        return 1

    @property
    def action_bound(self) -> np.ndarray:
        return np.array([self.max_torque])

    def observe(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta, self.theta_dot, self.t = float(theta), float(theta_dot), 0
        return self.observe()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.set_state(rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0))

    def energy(self) -> float:
        """Conserved quantity of the torque-free, unclamped dynamics (per unit inertia)."""
        return 0.5 * self.theta_dot**2 + 1.5 * self.g / self.l * np.cos(self.theta)

    def step(self, action) -> Tuple[np.ndarray, float, bool, bool]:
        """Returns ``(obs, reward, terminal, truncated)``; the pendulum never terminates."""
        u = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -self.max_torque, self.max_torque))
        th, thd = self.theta, self.theta_dot
        reward = -(angle_wrap(th) ** 2 + 0.1 * thd**2 + 0.001 * u**2)
        thd = thd + (1.5 * self.g / self.l * np.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        thd = float(np.clip(thd, -self.max_speed, self.max_speed))
        self.theta = th + thd * self.dt
        self.theta_dot = thd
        self.t += 1
        return self.observe(), float(reward), False, self.t >= self.episode_length


@dataclass
class LqrEnv:
    """Deterministic linear dynamics with quadratic cost, reset to the fixed ``s0``.

    Actions are bounded so a squashed policy can act; an episode terminates
    if the state norm exceeds ``blowup``.
    """

    spec: LqrSpec
    bound: float = 5.0
    episode_length: int = 100
    blowup: float = 1e3

    name = "lqr"

    def __post_init__(self):
        self.s = self.spec.s0.copy()
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return self.spec.n_states

    @property
    def act_dim(self) -> int:
        return self.spec.n_actions

    @property
    def action_bound(self) -> np.ndarray:
        return np.full(self.spec.n_actions, self.bound)

    def reset(self, rng: np.random.Generator = None) -> np.ndarray:
        self.s = self.spec.s0.copy()
        self.t = 0
        return self.s.copy()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float).reshape(-1), -self.bound, self.bound)
        s = self.s
        reward = -float(s @ self.spec.Q @ s + a @ self.spec.R @ a)
        self.s = self.spec.A @ s + self.spec.B @ a
        self.t += 1
        terminal = bool(np.linalg.norm(self.s) > self.blowup)
        return self.s.copy(), reward, terminal, self.t >= self.episode_length


def make_env(name: str, **kwargs):
    if name == "pendulum":
        return PendulumEnv(**kwargs)
    if name == "lqr":
        from .lqr import make_random_lqr

        seed = kwargs.pop("instance_seed", 0)
        spec, _ = make_random_lqr(2, 1, seed)
        return LqrEnv(spec, **kwargs)
    raise ValueError(f"unknown environment {name!r}")
