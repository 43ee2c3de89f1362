"""Actor-critic policy-gradient estimators on the LQR.

States come from on-policy rollouts weighted by the discounted state
distribution; the action expectation inside the policy gradient theorem is
estimated with one of three estimators against an oracle critic.

* ``sf``: score function against the advantage critic.
* ``reparam``: action-gradient of the critic through ``a = mu + L eps``.
* ``mvd``: coupled Gaussian-mean triplets, in whitened action coordinates.

Only the policy mean ``mu = -K s`` is learnable, so the chain rule to the
gain is ``d mu_i / d K_ij = -s_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import lqr
from .distributions import DiagGaussianParams, mvd_triplet_mean
from .estimators import ESTIMATORS, UnsupportedOracleError
from .lqr import CorruptionSpec, LqrSpec


@dataclass
class PolicyGradConfig:
    """Estimation budget.

    ``actions_per_state`` is the number of critic queries per visited state.
    SF and reparam draw that many actions; MVD spends it on
    ``actions_per_state // (2 |A|)`` coupled pairs per mean parameter
    (at least one pair).
    """

    estimator: str
    trajectories: int = 10
    actions_per_state: int = 20
    critic: str = "true"
    corruption: Optional[CorruptionSpec] = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.critic not in ("true", "corrupted"):
            raise ValueError(f"unknown critic mode {self.critic!r}")
        if self.critic == "corrupted" and self.corruption is None:
            raise ValueError("corrupted critic needs a CorruptionSpec")
        if self.actions_per_state < 1 or self.trajectories < 1:
            raise ValueError("need at least one trajectory and one action per state")

    def mvd_pairs(self, n_actions: int) -> int:
        return max(1, self.actions_per_state // (2 * n_actions))


class LqrCritic:
    """Oracle critic for a fixed gain, optionally corrupted. Counts queries."""

    def __init__(self, spec: LqrSpec, K: np.ndarray, corruption: Optional[CorruptionSpec] = None, differentiable: bool = True):
        self.spec = spec
        self.K = np.atleast_2d(K)
        self.value_solution = lqr.solve_policy_value(spec, self.K)
        self.corruption = corruption
        self.differentiable = differentiable
        self.queries = 0
        self.gradient_queries = 0

    def _count(self, a, attr):
        setattr(self, attr, getattr(self, attr) + int(np.prod(np.shape(a)[:-1])))

    def q(self, s, a):
        self._count(a, "queries")
        if self.corruption is None:
            return lqr.true_q(self.spec, self.K, s, a, self.value_solution)
        return lqr.corrupted_q(self.spec, self.K, self.corruption, s, a, self.value_solution)

    def advantage(self, s, a):
        return self.q(s, a) - self.value_solution.value(s)

    def action_gradient(self, s, a):
        if not self.differentiable:
            raise UnsupportedOracleError("critic is evaluation-only")
        self._count(a, "gradient_queries")
        if self.corruption is None:
            return lqr.true_q_action_gradient(self.spec, self.K, s, a, self.value_solution)
        return lqr.corrupted_q_action_gradient(self.spec, self.K, self.corruption, s, a, self.value_solution)


def make_critic(spec, K, config: PolicyGradConfig) -> LqrCritic:
    return LqrCritic(spec, K, config.corruption if config.critic == "corrupted" else None)


def mean_gradients(
    critic: LqrCritic, states: np.ndarray, mu: np.ndarray, L: np.ndarray, config: PolicyGradConfig, rng: np.random.Generator
) -> np.ndarray:
    """``d/d mu E_{a ~ N(mu, L L')}[Q(s, a)]`` per state; ``states`` is ``(P, n)``."""
    P, m = mu.shape
    s = states[None]
    if config.estimator == "sf":
        M = config.actions_per_state
        z = rng.standard_normal((M, P, m))
        a = mu + z @ L.T
        adv = critic.advantage(s, a)
        # Sigma^{-1} (a - mu) = L^{-T} z
        score = np.linalg.solve(L.T, z.reshape(-1, m).T).T.reshape(M, P, m)
        return np.mean(adv[..., None] * score, axis=0)
    if config.estimator == "reparam":
        if not critic.differentiable:
            raise UnsupportedOracleError("the reparametrization estimator requires the critic's action gradient")
        M = config.actions_per_state
        z = rng.standard_normal((M, P, m))
        return np.mean(critic.action_gradient(s, mu + z @ L.T), axis=0)

    pairs = config.mvd_pairs(m)
    white = DiagGaussianParams(np.zeros(m), np.ones(m))
    grad_white = np.empty((P, m))
    for k in range(m):
        trip = mvd_triplet_mean(white, k)
        zp, zm = trip.sample_pair(rng, (pairs, P))
        qp = critic.q(s, mu + zp @ L.T)
        qm = critic.q(s, mu + zm @ L.T)
        grad_white[:, k] = trip.constant * np.mean(qp - qm, axis=0)
    # d/d mu = L^{-T} d/d nu for a = mu + L z, z ~ N(nu, I)
    return np.linalg.solve(L.T, grad_white.T).T


def pg_estimate(
    spec: LqrSpec,
    K: np.ndarray,
    config: PolicyGradConfig,
    rng: np.random.Generator,
    critic: Optional[LqrCritic] = None,
    rollout_rng: Optional[np.random.Generator] = None,
    horizon: Optional[int] = None,
) -> np.ndarray:
    """Estimate ``dJ/dK`` with the normalization of :func:`lqr.exact_policy_gradient`.

    Args:
        rollout_rng: generator for the state rollouts; defaults to ``rng``.
            Passing a separate stream lets several estimators share states.
    """
    K = np.atleast_2d(K)
    critic = critic if critic is not None else make_critic(spec, K, config)
    roll = lqr.sample_discounted_states(spec, K, config.trajectories, rollout_rng or rng, horizon)
    N, T, n = roll.states.shape
    states = roll.states.reshape(-1, n)
    coeff = (roll.weights / (1.0 - spec.gamma))[None, :] * roll.valid
    coeff = coeff.reshape(-1)
    keep = coeff > 0
    states, coeff = states[keep], coeff[keep]
    mu = -states @ K.T
    L = np.linalg.cholesky(spec.Sigma)
    g_mu = mean_gradients(critic, states, mu, L, config, rng)
    return -(coeff[:, None] * g_mu).T @ states / N


@dataclass
class GradientErrorReport:
    relative_absolute_error: float
    cosine_distance: float
    estimate: np.ndarray
    truth: np.ndarray
    zero_estimate: bool = False


def gradient_error(estimate: np.ndarray, truth: np.ndarray) -> GradientErrorReport:
    g_hat = np.asarray(estimate, dtype=float).ravel()
    g = np.asarray(truth, dtype=float).ravel()
    n_true = np.linalg.norm(g)
    if n_true == 0:
        raise ValueError("true gradient has zero norm")
    n_est = np.linalg.norm(g_hat)
    rel = abs(n_est - n_true) / n_true
    if np.array_equal(g_hat, g):
        return GradientErrorReport(0.0, 0.0, np.asarray(estimate), np.asarray(truth))
    if n_est == 0:
        return GradientErrorReport(rel, 1.0, np.asarray(estimate), np.asarray(truth), zero_estimate=True)
    cos = 1.0 - float(g_hat @ g) / (n_est * n_true)
    return GradientErrorReport(float(rel), float(np.clip(cos, 0.0, 2.0)), np.asarray(estimate), np.asarray(truth))


def seed_streams(seed: int) -> dict:
    """Independent named generators for one repetition.

    Rollouts and the corruption draw depend only on the seed, so every
    estimator and grid cell sees the same states and the same error field.
    """
    rollout, corruption, actions = np.random.SeedSequence(seed).spawn(3)
    return {
        "rollout": np.random.default_rng(rollout),
        "corruption": np.random.default_rng(corruption),
        "actions": np.random.default_rng(actions),
    }


@dataclass(frozen=True)
class SweepCell:
    estimator: str
    trajectories: int
    actions: int
    alpha: float = 0.0
    freq: float = 0.0


SWEEP_FIELDS = ["estimator", "trajectories", "actions", "alpha", "freq", "seed", "rel_abs_err", "cos_dist"]


def error_cell(spec: LqrSpec, K: np.ndarray, cell: SweepCell, seed: int, truth: Optional[np.ndarray] = None) -> dict:
    K = np.atleast_2d(K)
    truth = lqr.exact_policy_gradient(spec, K) if truth is None else truth
    streams = seed_streams(seed)
    corruption = CorruptionSpec.sample(spec.n_actions, cell.alpha, cell.freq, streams["corruption"])
    config = PolicyGradConfig(
        cell.estimator,
        cell.trajectories,
        cell.actions,
        critic="corrupted" if cell.alpha > 0 else "true",
        corruption=corruption if cell.alpha > 0 else None,
    )
    est = pg_estimate(spec, K, config, streams["actions"], rollout_rng=streams["rollout"])
    rep = gradient_error(est, truth)
    return {
        "estimator": cell.estimator,
        "trajectories": cell.trajectories,
        "actions": cell.actions,
        "alpha": cell.alpha,
        "freq": cell.freq,
        "seed": seed,
        "rel_abs_err": rep.relative_absolute_error,
        "cos_dist": rep.cosine_distance,
    }


def error_sweep(
    spec: LqrSpec, K: np.ndarray, cells: Iterable[SweepCell], seeds: Sequence[int], map_fn=map
) -> list[dict]:
    """One gradient-error row per (cell, seed).

    ``map_fn`` may be a process-pool map; every job is a pure function of
    its (cell, seed) pair, so the output does not depend on scheduling.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("empty sweep grid")
    truth = lqr.exact_policy_gradient(spec, K)
    jobs = [(spec, K, c, s, truth) for c in cells for s in seeds]
    return list(map_fn(_error_job, jobs))


def _error_job(job):
    return error_cell(*job)


def slope_test(x: np.ndarray, y: np.ndarray, level: float = 0.95) -> dict:
    """Least-squares slope of ``y`` on ``x`` with a one-sided t-test for slope > 0."""
    res = stats.linregress(x, y)
    dof = len(x) - 2
    if res.stderr > 0:
        t = res.slope / res.stderr
    else:
        # exact fit: a zero slope is no evidence either way
        t = 0.0 if res.slope == 0 else np.inf * np.sign(res.slope)
    p_positive = float(stats.t.sf(t, dof))
    return {
        "slope": float(res.slope),
        "stderr": float(res.stderr),
        "p_positive": p_positive,
        "significant_positive": p_positive < 1.0 - level,
    }


@dataclass
class LearningCurve:
    env_steps: list
    returns: list
    diverged: bool = False

    @property
    def final_return(self) -> float:
        return self.returns[-1]


LEARNING_FIELDS = ["estimator", "alpha", "freq", "seed", "env_steps", "return"]


def lqr_learning_run(
    spec: LqrSpec,
    K_init: np.ndarray,
    config: Optional[PolicyGradConfig],
    step_size: float,
    iterations: int,
    rng: np.random.Generator,
    record_every: int = 1,
) -> LearningCurve:
    """Gradient descent on the expected cost with estimated (or exact) gradients.

    ``config=None`` uses the exact gradient. The recorded return is the
    analytic ``-J(K)``. A gain that destabilizes the closed loop ends the
    curve with ``diverged=True`` and a final return of ``-inf``.
    """
    K = np.atleast_2d(K_init).copy()
    steps = 0
    curve = LearningCurve([0], [-lqr.expected_cost(spec, K)])
    for it in range(1, iterations + 1):
        if config is None:
            g = lqr.exact_policy_gradient(spec, K)
        else:
            T = lqr.rollout_horizon(spec, K)
            g = pg_estimate(spec, K, config, rng, horizon=T)
            steps += config.trajectories * T
        K = K - step_size * g
        if not lqr.is_stable(spec, K):
            curve.env_steps.append(steps)
            curve.returns.append(-np.inf)
            curve.diverged = True
            return curve
        if it % record_every == 0 or it == iterations:
            curve.env_steps.append(steps)
            curve.returns.append(-lqr.expected_cost(spec, K))
    return curve
