"""Soft actor-critic with interchangeable actor-gradient estimators.

The actor outputs a diagonal Gaussian over a pre-squash variable ``u``;
actions are ``bound * tanh(u)``. Every estimator targets the same per-state
surrogate ``E_u[min Q(s, squash(u)) - alpha * log pi(u | s)]``:

* ``reparam``: pathwise through ``u = mu + sigma * eps``; needs dQ/da.
* ``mvd``: coupled Gaussian triplets on ``u``; evaluates the critic only.
* ``sf``: score function with a leave-one-out per-state baseline.
"""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import neural
from .distributions import DiagGaussianParams, mvd_triplet_mean, mvd_triplet_scale
from .estimators import UnsupportedOracleError

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0
SQUASH_EPS = 1e-6
ACTOR_ESTIMATORS = ("reparam", "mvd", "sf")
LOG_2PI = np.log(2.0 * np.pi)


class TrainingFailed(RuntimeError):
    """A network or loss went non-finite; the run is unusable."""


@dataclass
class SacConfig:
    estimator: str = "reparam"
    samples: int = 1
    alpha_ent: float = 0.2
    auto_alpha: bool = False
    target_entropy: Optional[float] = None
    gamma: float = 0.99
    polyak: float = 0.005
    batch_size: int = 128
    buffer_capacity: int = 100_000
    steps: int = 30_000
    warmup: int = 1000
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    activation: str = "relu"
    eval_every: int = 5000
    eval_episodes: int = 5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.estimator not in ACTOR_ESTIMATORS:
            raise ValueError(f"unknown actor estimator {self.estimator!r}")
        if self.samples < 1 or (self.estimator == "sf" and self.samples < 2):
            raise ValueError("sf needs at least 2 samples per state for its baseline; others at least 1")
        if not (0.0 <= self.gamma < 1.0 and 0.0 < self.polyak <= 1.0 and self.alpha_ent >= 0.0):
            raise ValueError("gamma in [0, 1), polyak in (0, 1], alpha_ent >= 0")
        if min(self.batch_size, self.buffer_capacity, self.eval_episodes, self.eval_every) < 1 or self.steps < 0 or self.warmup < 0:
            raise ValueError("sizes must be positive and step counts non-negative")
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def variant_config(variant: str, act_dim: int, **overrides) -> SacConfig:
    """Benchmark roster. MVD spends ``4 * act_dim + 1`` queries per state;
    the ``-extra`` variants match that budget."""
    mvd_queries = 4 * act_dim + 1
    table = {
        "sac-reparam": dict(estimator="reparam", samples=1),
        "sac-mvd": dict(estimator="mvd", samples=1),
        "sac-sf": dict(estimator="sf", samples=2),
        "sac-sf-extra": dict(estimator="sf", samples=mvd_queries),
        "sac-extra": dict(estimator="reparam", samples=mvd_queries),
    }
    if variant not in table:
        raise ValueError(f"unknown SAC variant {variant!r}; choose from {sorted(table)}")
    return SacConfig(**{**table[variant], **overrides})


VARIANTS = ("sac-reparam", "sac-mvd", "sac-sf", "sac-sf-extra", "sac-extra")


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, terminal) -> None:
        if not np.isfinite(rew):
            raise ValueError("non-finite reward")
        i = self._next
        self.obs[i], self.act[i], self.rew[i], self.next_obs[i], self.terminal[i] = obs, act, rew, next_obs, terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, idx):
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.terminal[idx]

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("empty buffer")
        return self.get(rng.integers(0, self.size, batch_size))


class QNetwork:
    """Critic ``Q(s, a)`` on the concatenated input; counts calls by kind."""

    def __init__(self, spec: neural.MlpSpec, params: neural.MlpParams):
        self.spec = spec
        self.params = params
        self.evaluations = 0
        self.gradient_calls = 0

    @staticmethod
    def _join(s, a):
        return np.concatenate([s, a], axis=-1)

    def evaluate(self, s, a) -> np.ndarray:
        self.evaluations += len(s)
        return neural.forward(self.spec, self.params, self._join(s, a))[:, 0]

    def action_gradient(self, s, a):
        """``(Q, dQ/da)`` for a batch."""
        self.gradient_calls += len(s)
        x = self._join(s, a)
        out, cache = neural.forward_cache(self.spec, self.params, x)
        _, gx = neural.backward(self.spec, self.params, cache, np.ones((len(x), 1)), need_params=False)
        return out[:, 0], gx[:, s.shape[-1] :]


class EvaluationOnlyCritic:
    """View of a critic that refuses action gradients."""

    def __init__(self, inner):
        self.inner = inner

    def evaluate(self, s, a):
        return self.inner.evaluate(s, a)

    def action_gradient(self, s, a):
        raise UnsupportedOracleError("critic is evaluation-only")


class SquashedGaussianPolicy:
    def __init__(self, spec: neural.MlpSpec, params: neural.MlpParams, bound):
        self.spec = spec
        self.params = params
        self.bound = np.asarray(bound, dtype=float)
        self.act_dim = spec.out_dim // 2

    def distribution(self, s):
        """``(mu, log_std, clamp_mask, cache)``; the mask is 1 where log-std is not clamped."""
        out, cache = neural.forward_cache(self.spec, self.params, s)
        mu, raw = out[..., : self.act_dim], out[..., self.act_dim :]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        mask = ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)).astype(float)
        return mu, log_std, mask, cache

    def squash(self, u):
        return self.bound * np.tanh(u)

    def act(self, s, rng: Optional[np.random.Generator] = None, deterministic: bool = False):
        mu, log_std, _, _ = self.distribution(np.atleast_2d(s))
        u = mu if deterministic else mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return self.squash(u)[0]


def squash_correction(u, bound):
    """``sum_i log(1 - tanh(u_i)^2 + eps) + sum_i log(bound_i)``."""
    return np.sum(np.log(1.0 - np.tanh(u) ** 2 + SQUASH_EPS), axis=-1) + np.sum(np.log(bound))


def policy_logprob(mu, log_std, u, bound):
    """Log-density of ``bound * tanh(u)`` for ``u ~ N(mu, exp(log_std)^2)``."""
    z = (u - mu) * np.exp(-log_std)
    gauss = np.sum(-0.5 * z**2 - log_std - 0.5 * LOG_2PI, axis=-1)
    return gauss - squash_correction(u, bound)


def _squash_correction_grad(u):
    t = np.tanh(u)
    return -2.0 * t * (1.0 - t**2) / (1.0 - t**2 + SQUASH_EPS)


def min_critic(critics, s, a):
    return np.minimum(critics[0].evaluate(s, a), critics[1].evaluate(s, a))


def actor_surrogate(critics, policy: SquashedGaussianPolicy, s, u, mu, log_std, alpha):
    """``f(s, u) = min Q(s, squash(u)) - alpha * log pi(u | s)``."""
    return min_critic(critics, s, policy.squash(u)) - alpha * policy_logprob(mu, log_std, u, policy.bound)


def reparam_output_grad(critics, policy, s, mu, log_std, alpha, rng, samples=1):
    """d(mean surrogate)/d(mu, log_std) per state, each ``(B, act_dim)``."""
    sigma = np.exp(log_std)
    g_mu = np.zeros_like(mu)
    g_ls = np.zeros_like(mu)
    for _ in range(samples):
        eps = rng.standard_normal(mu.shape)
        u = mu + sigma * eps
        a = policy.squash(u)
        q1, dq1 = critics[0].action_gradient(s, a)
        q2, dq2 = critics[1].action_gradient(s, a)
        dq = np.where((q1 <= q2)[:, None], dq1, dq2)
        t = np.tanh(u)
        # -alpha * log pi contains +alpha * log(1 - tanh^2 + eps) and +alpha * log_std
        g_u = policy.bound * (1.0 - t**2) * dq + alpha * _squash_correction_grad(u)
        g_mu += g_u
        g_ls += g_u * sigma * eps + alpha
    return g_mu / samples, g_ls / samples


def mvd_output_grad(critics, policy, s, mu, log_std, alpha, rng):
    """Coupled MVD on each pre-squash mean and scale, one pair per parameter.

    Queries per state: ``2 * 2 * act_dim`` surrogate evaluations plus one
    fresh sample for the explicit ``-alpha * grad log pi`` term.
    """
    B, m = mu.shape
    sigma = np.exp(log_std)
    white = DiagGaussianParams(np.zeros(m), np.ones(m))
    blocks, consts = [], []
    for k in range(m):
        for trip in (mvd_triplet_mean(white, k), mvd_triplet_scale(white, k)):
            zp, zm = trip.sample_pair(rng, (B,))
            blocks.append((zp, zm))
            consts.append(trip.constant)
    zp = np.stack([b[0] for b in blocks])  # (2m, B, m)
    zm = np.stack([b[1] for b in blocks])
    z = np.concatenate([zp, zm])
    u = mu + sigma * z
    S = np.broadcast_to(s, (len(z),) + s.shape).reshape(-1, s.shape[-1])
    flat = lambda x: np.broadcast_to(x, z.shape).reshape(-1, m)
    f = actor_surrogate(critics, policy, S, u.reshape(-1, m), flat(mu), flat(log_std), alpha).reshape(len(z), B)
    diff = f[: 2 * m] - f[2 * m :]
    g_mu = np.empty((B, m))
    g_ls = np.empty((B, m))
    for k in range(m):
        # white-space constants rescale by 1/sigma; d/dlog_std = sigma * d/dsigma
        g_mu[:, k] = consts[2 * k] / sigma[:, k] * diff[2 * k]
        g_ls[:, k] = consts[2 * k + 1] * diff[2 * k + 1]
    eps = rng.standard_normal((B, m))
    g_mu -= alpha * eps / sigma
    g_ls -= alpha * (eps**2 - 1.0)
    return g_mu, g_ls


def sf_output_grad(critics, policy, s, mu, log_std, alpha, rng, samples=2):
    """Score function with a leave-one-out mean baseline over ``samples`` draws per state."""
    if samples < 2:
        raise ValueError("the leave-one-out baseline needs at least 2 samples")
    B, m = mu.shape
    sigma = np.exp(log_std)
    eps = rng.standard_normal((samples, B, m))
    u = mu + sigma * eps
    S = np.broadcast_to(s, (samples,) + s.shape).reshape(-1, s.shape[-1])
    flat = lambda x: np.broadcast_to(x, eps.shape).reshape(-1, m)
    f = actor_surrogate(critics, policy, S, u.reshape(-1, m), flat(mu), flat(log_std), alpha).reshape(samples, B)
    base = (f.sum(axis=0) - f) / (samples - 1)
    w = (f - base - alpha)[..., None]
    # score of N(mu, sigma): d/dmu = eps / sigma, d/dlog_std = eps^2 - 1
    return np.mean(w * eps / sigma, axis=0), np.mean(w * (eps**2 - 1.0), axis=0)


def actor_output_grad(config: SacConfig, critics, policy, s, mu, log_std, alpha, rng):
    if config.estimator == "reparam":
        return reparam_output_grad(critics, policy, s, mu, log_std, alpha, rng, config.samples)
    evaluation_only = [EvaluationOnlyCritic(c) for c in critics]
    if config.estimator == "mvd":
        return mvd_output_grad(evaluation_only, policy, s, mu, log_std, alpha, rng)
    return sf_output_grad(evaluation_only, policy, s, mu, log_std, alpha, rng, config.samples)


def actor_param_gradient(config: SacConfig, critics, policy: SquashedGaussianPolicy, s, alpha, rng):
    """Gradient of the actor loss ``-mean_s surrogate`` in the flat actor parameters."""
    mu, log_std, mask, cache = policy.distribution(s)
    g_mu, g_ls = actor_output_grad(config, critics, policy, s, mu, log_std, alpha, rng)
    cot = -np.concatenate([g_mu, g_ls * mask], axis=1) / len(s)
    grad, _ = neural.backward(policy.spec, policy.params, cache, cot)
    return grad


def polyak_update(target: neural.MlpParams, source: neural.MlpParams, rate: float) -> None:
    target.assign((1.0 - rate) * target.flat + rate * source.flat)


@dataclass
class EvalCurve:
    env_steps: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    update_seconds: float = 0.0
    updates: int = 0
    skipped_updates: int = 0
    critic_gradient_calls: int = 0

    @property
    def final_return(self) -> float:
        return self.returns[-1]

    @property
    def seconds_per_update(self) -> float:
        return self.update_seconds / self.updates if self.updates else float("nan")


EVAL_FIELDS = ["algo", "estimator", "env", "seed", "env_steps", "eval_return"]


class SacAgent:
    def __init__(self, config: SacConfig, obs_dim: int, act_dim: int, bound, rng: np.random.Generator):
        self.config = config
        hidden = config.hidden
        actor_spec = neural.MlpSpec((obs_dim,) + hidden + (2 * act_dim,), config.activation)
        critic_spec = neural.MlpSpec((obs_dim + act_dim,) + hidden + (1,), config.activation)
        self.policy = SquashedGaussianPolicy(actor_spec, neural.init_params(actor_spec, rng), bound)
        self.critics = [QNetwork(critic_spec, neural.init_params(critic_spec, rng)) for _ in range(2)]
        self.targets = [QNetwork(critic_spec, c.params.copy()) for c in self.critics]
        hp = neural.AdamHyper(lr=config.lr)
        self.actor_opt = neural.Adam(self.policy.params, hp)
        self.critic_opts = [neural.Adam(c.params, hp) for c in self.critics]
        self.log_alpha = np.log(max(config.alpha_ent, 1e-12))
        self.alpha_state = neural.AdamState.zeros(1)
        self.target_entropy = -float(act_dim) if config.target_entropy is None else config.target_entropy

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha)) if self.config.auto_alpha else self.config.alpha_ent

    def _sample(self, s, rng):
        mu, log_std, _, _ = self.policy.distribution(s)
        u = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return self.policy.squash(u), policy_logprob(mu, log_std, u, self.policy.bound)

    def critic_targets(self, batch, rng):
        _, _, r, s2, term = batch
        a2, logp2 = self._sample(s2, rng)
        q_next = np.minimum(self.targets[0].evaluate(s2, a2), self.targets[1].evaluate(s2, a2))
        return r + self.config.gamma * (~term) * (q_next - self.alpha * logp2)

    def critic_update(self, batch, rng) -> list:
        """One regression step for both critics; returns the two MSE losses."""
        s, a = batch[0], batch[1]
        y = self.critic_targets(batch, rng)
        x = np.concatenate([s, a], axis=1)
        losses = []
        for critic, opt in zip(self.critics, self.critic_opts):
            q, cache = neural.forward_cache(critic.spec, critic.params, x)
            err = q[:, 0] - y
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                opt.state.skipped += 1
                losses.append(loss)
                continue
            grad, _ = neural.backward(critic.spec, critic.params, cache, (2.0 * err / len(y))[:, None])
            opt.step(grad)
            losses.append(loss)
        for tgt, critic in zip(self.targets, self.critics):
            polyak_update(tgt.params, critic.params, self.config.polyak)
        return losses

    def actor_update(self, s, rng) -> None:
        grad = actor_param_gradient(self.config, self.critics, self.policy, s, self.alpha, rng)
        self.actor_opt.step(grad)
        if self.config.auto_alpha:
            _, logp = self._sample(s, rng)
            # loss = -log_alpha * (log pi + target_entropy)
            g = -np.mean(logp + self.target_entropy)
            new, self.alpha_state = neural.sgd_adam_step(np.array([self.log_alpha]), np.array([g]), self.alpha_state, self.actor_opt.hp)
            self.log_alpha = float(new[0])

    def update(self, buffer: ReplayBuffer, rng) -> None:
        batch = buffer.sample(self.config.batch_size, rng)
        self.critic_update(batch, rng)
        self.actor_update(batch[0], rng)

    def check_finite(self) -> None:
        nets = {"actor": self.policy.params, "critic0": self.critics[0].params, "critic1": self.critics[1].params}
        for name, p in nets.items():
            if not np.all(np.isfinite(p.flat)):
                raise TrainingFailed(f"non-finite parameters in {name}")


def evaluate_policy(env, act_fn, episodes: int, rng: np.random.Generator) -> float:
    """Mean undiscounted episode return."""
    totals = []
    for _ in range(episodes):
        obs = env.reset(rng)
        total, done = 0.0, False
        while not done:
            obs, r, term, trunc = env.step(act_fn(obs))
            total += r
            done = term or trunc
        totals.append(total)
    return float(np.mean(totals))


def random_policy_return(env, episodes: int, seed: int) -> float:
    """Return of uniform random actions on the evaluation resets used by :func:`train`."""
    streams = np.random.SeedSequence(seed).spawn(5)
    eval_ss, act_rng = streams[3], np.random.default_rng(streams[4])
    bound = env.action_bound
    return evaluate_policy(env, lambda o: act_rng.uniform(-bound, bound), episodes, np.random.default_rng(eval_ss))


def train(config: SacConfig, env, seed: int) -> EvalCurve:
    """Interleaved environment steps and updates (1:1 after warmup).

    Evaluation uses the mean action on a copy of ``env``, at step 0, every
    ``eval_every`` steps and at the end; every evaluation replays the same
    reset draws.

    Raises:
        TrainingFailed: a network went non-finite.
    """
    init_ss, explore_ss, update_ss, eval_ss, _ = np.random.SeedSequence(seed).spawn(5)
    agent = SacAgent(config, env.obs_dim, env.act_dim, env.action_bound, np.random.default_rng(init_ss))
    explore = np.random.default_rng(explore_ss)
    upd = np.random.default_rng(update_ss)
    buffer = ReplayBuffer(config.buffer_capacity, env.obs_dim, env.act_dim)
    curve = EvalCurve()
    bound = env.action_bound
    eval_env = copy.deepcopy(env)

    def record(step):
        ret = evaluate_policy(eval_env, lambda o: agent.policy.act(o, deterministic=True), config.eval_episodes, np.random.default_rng(eval_ss))
        curve.env_steps.append(step)
        curve.returns.append(ret)

    record(0)
    obs = env.reset(explore)
    for step in range(1, config.steps + 1):
        if step <= config.warmup:
            a = explore.uniform(-bound, bound)
        else:
            a = agent.policy.act(obs, explore)
        nxt, r, term, trunc = env.step(a)
        buffer.add(obs, a, r, nxt, term)
        obs = env.reset(explore) if (term or trunc) else nxt
        if step > config.warmup and len(buffer) >= config.batch_size:
            t0 = time.perf_counter()
            agent.update(buffer, upd)
            curve.update_seconds += time.perf_counter() - t0
            curve.updates += 1
            if curve.updates % 1000 == 0:
                agent.check_finite()
        if step % config.eval_every == 0 or step == config.steps:
            agent.check_finite()
            record(step)
    curve.skipped_updates = agent.actor_opt.state.skipped + sum(o.state.skipped for o in agent.critic_opts)
    curve.critic_gradient_calls = sum(c.gradient_calls for c in agent.critics)
    return curve
