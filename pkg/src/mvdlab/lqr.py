"""Discounted discrete-time LQR with a linear-Gaussian policy.

Everything here is a cost (minimized). The policy is
``a ~ N(-K s, Sigma)``, dynamics are ``s' = A s + B a`` and the per-step cost
is ``s'Q s + a'R a``. With a fixed initial state ``s0`` the objective is
``J(K) = V_K(s0)`` where ``V_K(s) = s'P s + c``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import dirichlet_symmetric_sample

LYAPUNOV_TOL = 1e-12
DARE_TOL = 1e-12
DARE_MAX_ITER = 1_000_000
MAX_GENERATION_TRIES = 1000
OVERFLOW_NORM = 1e6


class UnstableClosedLoop(ValueError):
    """The discounted closed loop ``sqrt(gamma) (A - B K)`` is not stable."""


class ConvergenceError(RuntimeError):
    pass


def _mat(x, n=None, m=None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if n is not None and x.shape != (n, m):
        raise ValueError(f"expected shape {(n, m)}, got {x.shape}")
    return x


@dataclass(frozen=True)
class LqrSpec:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    s0: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        A = _mat(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        B = _mat(self.B)
        if B.shape[0] != n:
            B = B.reshape(n, -1)
        m = B.shape[1]
        Q = _mat(self.Q, n, n)
        R = _mat(self.R, m, m)
        Sigma = _mat(self.Sigma, m, m)
        s0 = np.asarray(self.s0, dtype=float).reshape(n)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name, M, strict in (("Q", Q, False), ("R", R, True), ("Sigma", Sigma, True)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            lo = np.linalg.eigvalsh(M).min()
            if (strict and lo <= 0) or lo < -1e-12:
                raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("Sigma", Sigma), ("s0", s0)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_actions(self) -> int:
        return self.B.shape[1]

    def to_text(self) -> str:
        """Plain-text key/matrix format: ``name rows cols`` then row-major rows."""
        out = io.StringIO()
        out.write(f"gamma {self.gamma!r}\n")
        for name in ("A", "B", "Q", "R", "Sigma", "s0"):
            M = np.atleast_2d(getattr(self, name))
            out.write(f"{name} {M.shape[0]} {M.shape[1]}\n")
            for row in M:
                out.write(" ".join(repr(float(v)) for v in row) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "LqrSpec":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        fields, i = {}, 0
        while i < len(lines):
            head = lines[i]
            if head[0] == "gamma":
                fields["gamma"] = float(head[1])
                i += 1
                continue
            rows, cols = int(head[1]), int(head[2])
            data = [[float(v) for v in lines[i + 1 + r]] for r in range(rows)]
            fields[head[0]] = np.array(data).reshape(rows, cols)
            i += 1 + rows
        fields["s0"] = fields["s0"].ravel()
        return cls(**fields)


@dataclass(frozen=True)
class LinearPolicy:
    K: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if not np.all(np.isfinite(K)):
            raise ValueError("gain must be finite")
        object.__setattr__(self, "K", K)


@dataclass(frozen=True)
class ValueSolution:
    """``V(s) = s'P s + offset`` for a fixed gain."""

    P: np.ndarray
    offset: float

    def value(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.einsum("...i,ij,...j->...", s, self.P, s) + self.offset


@dataclass(frozen=True)
class CorruptionSpec:
    """Multiplicative critic error ``Q * (1 + amplitude * cos(2 pi f p'a + phase))``."""

    amplitude: float
    frequency: float
    direction: np.ndarray = field(default_factory=lambda: np.ones(1))
    phase: float = 0.0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.direction, dtype=float))
        if self.amplitude < 0 or self.frequency < 0:
            raise ValueError("amplitude and frequency must be nonnegative")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("direction must lie on the simplex")
        object.__setattr__(self, "direction", p)

    @classmethod
    def sample(
        cls, n_actions: int, amplitude: float, frequency: float, rng: np.random.Generator, concentration: float = 1.0
    ) -> "CorruptionSpec":
        """Draw the direction from a symmetric Dirichlet and the phase from U[0, 2 pi)."""
        p = dirichlet_symmetric_sample(n_actions, concentration, rng)
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        return cls(amplitude, frequency, p, phase)

    def angle(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * np.pi * self.frequency * (np.asarray(a) @ self.direction) + self.phase


def closed_loop(spec: LqrSpec, K: np.ndarray) -> np.ndarray:
    return spec.A - spec.B @ np.atleast_2d(K)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def discounted_radius(spec: LqrSpec, K: np.ndarray) -> float:
    return np.sqrt(spec.gamma) * spectral_radius(closed_loop(spec, K))


def is_stable(spec: LqrSpec, K: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(K))) and discounted_radius(spec, K) < 1.0


def solve_discounted_lyapunov(M: np.ndarray, W: np.ndarray, gamma: float, tol: float = LYAPUNOV_TOL, max_iter: int = 200) -> np.ndarray:
    """Solve ``X = W + gamma * M' X M`` by doubling the fixed-point series.

    After ``k`` doublings the iterate equals the first ``2^k`` terms of
    ``sum_t gamma^t (M')^t W M^t``.
    """
    Mk = np.sqrt(gamma) * M
    X = W.copy()
    for _ in range(max_iter):
        inc = Mk.T @ X @ Mk
        X = X + inc
        if np.linalg.norm(inc) <= tol * max(1.0, np.linalg.norm(X)):
            return 0.5 * (X + X.T)
        if not np.all(np.isfinite(X)):
            break
        Mk = Mk @ Mk
    raise ConvergenceError("Lyapunov iteration did not converge")


def solve_policy_value(spec: LqrSpec, K: np.ndarray) -> ValueSolution:
    K = np.atleast_2d(K)
    if not is_stable(spec, K):
        raise UnstableClosedLoop(f"discounted closed-loop radius {discounted_radius(spec, K):.4f} >= 1")
    M = closed_loop(spec, K)
    P = solve_discounted_lyapunov(M, spec.Q + K.T @ spec.R @ K, spec.gamma)
    g = spec.gamma
    offset = (np.trace(spec.R @ spec.Sigma) + g * np.trace(spec.B.T @ P @ spec.B @ spec.Sigma)) / (1.0 - g)
    return ValueSolution(P, float(offset))


def bellman_residual(spec: LqrSpec, K: np.ndarray, sol: ValueSolution) -> float:
    K = np.atleast_2d(K)
    M = closed_loop(spec, K)
    lhs = spec.Q + K.T @ spec.R @ K + spec.gamma * M.T @ sol.P @ M
    return float(np.linalg.norm(sol.P - lhs))


def expected_cost(spec: LqrSpec, K: np.ndarray) -> float:
    """Analytic ``J(K) = V_K(s0)``."""
    return float(solve_policy_value(spec, K).value(spec.s0))


def _value(spec, K, value):
    return value if value is not None else solve_policy_value(spec, K)


def true_q(spec: LqrSpec, K: np.ndarray, s, a, value: Optional[ValueSolution] = None) -> np.ndarray:
    sol = _value(spec, K, value)
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    nxt = s @ spec.A.T + a @ spec.B.T
    stage = np.einsum("...i,ij,...j->...", s, spec.Q, s) + np.einsum("...i,ij,...j->...", a, spec.R, a)
    return stage + spec.gamma * sol.value(nxt)


def true_q_action_gradient(spec: LqrSpec, K: np.ndarray, s, a, value: Optional[ValueSolution] = None) -> np.ndarray:
    sol = _value(spec, K, value)
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    nxt = s @ spec.A.T + a @ spec.B.T
    return 2.0 * a @ spec.R + 2.0 * spec.gamma * nxt @ sol.P @ spec.B


def true_value(spec: LqrSpec, K: np.ndarray, s, value: Optional[ValueSolution] = None) -> np.ndarray:
    return _value(spec, K, value).value(s)


def true_advantage(spec: LqrSpec, K: np.ndarray, s, a, value: Optional[ValueSolution] = None) -> np.ndarray:
    sol = _value(spec, K, value)
    return true_q(spec, K, s, a, sol) - sol.value(s)


def corrupted_q(spec, K, corruption: CorruptionSpec, s, a, value: Optional[ValueSolution] = None) -> np.ndarray:
    q = true_q(spec, K, s, a, value)
    return q * (1.0 + corruption.amplitude * np.cos(corruption.angle(a)))


def corrupted_q_action_gradient(spec, K, corruption: CorruptionSpec, s, a, value=None) -> np.ndarray:
    sol = _value(spec, K, value)
    q = true_q(spec, K, s, a, sol)
    dq = true_q_action_gradient(spec, K, s, a, sol)
    ang = corruption.angle(a)
    alpha, w = corruption.amplitude, 2.0 * np.pi * corruption.frequency
    return dq * (1.0 + alpha * np.cos(ang))[..., None] - (alpha * w * q * np.sin(ang))[..., None] * corruption.direction


def corrupted_advantage(spec, K, corruption: CorruptionSpec, s, a, value=None) -> np.ndarray:
    """Corrupted Q minus the exact value; only Q carries the error field."""
    sol = _value(spec, K, value)
    return corrupted_q(spec, K, corruption, s, a, sol) - sol.value(s)


def discounted_state_covariance(spec: LqrSpec, K: np.ndarray) -> np.ndarray:
    """``sum_t gamma^t E[s_t s_t']`` for rollouts from ``s0`` under the policy."""
    K = np.atleast_2d(K)
    if not is_stable(spec, K):
        raise UnstableClosedLoop("closed loop unstable")
    g = spec.gamma
    W = np.outer(spec.s0, spec.s0) + (g / (1.0 - g)) * spec.B @ spec.Sigma @ spec.B.T
    return solve_discounted_lyapunov(closed_loop(spec, K).T, W, g)


def exact_policy_gradient(spec: LqrSpec, K: np.ndarray) -> np.ndarray:
    """Gradient of the expected cost ``J(K)``; same shape as ``K``."""
    K = np.atleast_2d(K)
    sol = solve_policy_value(spec, K)
    g = spec.gamma
    E = (spec.R + g * spec.B.T @ sol.P @ spec.B) @ K - g * spec.B.T @ sol.P @ spec.A
    return 2.0 * E @ discounted_state_covariance(spec, K)


def solve_dare(spec: LqrSpec, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> LinearPolicy:
    """Optimal gain from value iteration on the discounted Riccati recursion."""
    g = spec.gamma
    A, B, Q, R = np.sqrt(g) * spec.A, np.sqrt(g) * spec.B, spec.Q, spec.R
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        done = np.linalg.norm(P_next - P) <= tol * max(1.0, np.linalg.norm(P_next))
        P = P_next
        if done:
            K = g * np.linalg.solve(spec.R + g * spec.B.T @ P @ spec.B, spec.B.T @ P @ spec.A)
            return LinearPolicy(K)
    raise ConvergenceError("Riccati iteration did not converge")


def dare_residual(spec: LqrSpec, P: np.ndarray) -> float:
    g = spec.gamma
    A, B = np.sqrt(g) * spec.A, np.sqrt(g) * spec.B
    rhs = spec.Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(spec.R + B.T @ P @ B, B.T @ P @ A)
    return float(np.linalg.norm(P - rhs))


def make_random_lqr(
    n_states: int,
    n_actions: int,
    seed: int,
    gamma: float = 0.9,
    sigma: float = 0.1,
    dynamics_std: float = 0.4,
    gain_perturbation: float = 0.3,
    min_suboptimality: float = 1.2,
    max_radius: float = 0.95,
):
    """Random unstable LQR instance and a stable, suboptimal initial gain.

    ``A = I + G`` with ``G ~ N(0, dynamics_std^2)`` resampled until the open
    loop is unstable, ``B ~ N(0, 1)``, identity costs and ``Sigma = sigma I``.
    ``K_init = K* + D`` with ``D ~ N(0, gain_perturbation^2)`` resampled until
    the discounted closed-loop radius is at most ``max_radius`` and
    ``J(K_init) >= min_suboptimality J(K*)``.

    Returns:
        ``(spec, LinearPolicy(K_init))``.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("need at least one state and one action")
    rng = np.random.default_rng(seed)
    eye_s, eye_a = np.eye(n_states), np.eye(n_actions)
    for _ in range(MAX_GENERATION_TRIES):
        A = eye_s + dynamics_std * rng.standard_normal((n_states, n_states))
        if spectral_radius(A) <= 1.0:
            continue
        B = rng.standard_normal((n_states, n_actions))
        s0 = rng.uniform(-1.0, 1.0, n_states)
        spec = LqrSpec(A, B, eye_s, eye_a, gamma, s0, sigma * eye_a)
        try:
            K_opt = solve_dare(spec).K
        except ConvergenceError:
            continue
        j_opt = expected_cost(spec, K_opt)
        for _ in range(MAX_GENERATION_TRIES):
            K = K_opt + gain_perturbation * rng.standard_normal(K_opt.shape)
            if discounted_radius(spec, K) <= max_radius and expected_cost(spec, K) >= min_suboptimality * j_opt:
                return spec, LinearPolicy(K)
    raise ConvergenceError("could not generate an LQR instance within the retry cap")


@dataclass
class DiscountedStates:
    """Rollout states with per-step weights ``(1 - gamma) gamma^t``.

    ``valid[n, t]`` is False after a trajectory was truncated for overflow.
    """

    states: np.ndarray
    weights: np.ndarray
    valid: np.ndarray
    truncated: np.ndarray

    @property
    def any_truncated(self) -> bool:
        return bool(self.truncated.any())


def default_horizon(gamma: float, tail: float = 1e-4) -> int:
    """Smallest ``T`` with ``gamma^T < tail``."""
    if gamma <= 0.0:
        return 1
    return max(1, int(np.ceil(np.log(tail) / np.log(gamma))))


def rollout_horizon(spec: LqrSpec, K: np.ndarray, tail: float = 1e-4, max_horizon: int = 100_000) -> int:
    """Horizon whose truncated discounted second moment misses < ``tail`` of the total.

    Never shorter than :func:`default_horizon`. Needed because a closed loop
    near the stability boundary (or with transient growth) keeps weight in
    the tail long after ``gamma^t`` is negligible.
    """
    K = np.atleast_2d(K)
    T0 = default_horizon(spec.gamma, tail)
    if spec.gamma <= 0.0:
        return T0
    total = np.trace(discounted_state_covariance(spec, K))
    M = closed_loop(spec, K)
    noise = spec.B @ spec.Sigma @ spec.B.T
    C = np.outer(spec.s0, spec.s0)
    acc, w = 0.0, 1.0
    MT = M.T
    for t in range(max_horizon):
        if t >= T0 and acc >= (1.0 - tail) * total:
            return t
        acc += w * C.trace()
        C = M @ C @ MT + noise
        w *= spec.gamma
    return max_horizon


def sample_discounted_states(
    spec: LqrSpec, K: np.ndarray, trajectories: int, rng: np.random.Generator, horizon: Optional[int] = None
) -> DiscountedStates:
    K = np.atleast_2d(K)
    T = rollout_horizon(spec, K) if horizon is None else horizon
    n, m = spec.n_states, spec.n_actions
    L = np.linalg.cholesky(spec.Sigma)
    drive = (rng.standard_normal((T, trajectories, m)) @ L.T) @ spec.B.T
    MT = closed_loop(spec, K).T
    states = np.empty((T, trajectories, n))
    s = np.tile(spec.s0, (trajectories, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            states[t] = s
            s = s @ MT + drive[t]
        norms = np.sqrt(np.sum(states**2, axis=2))
    ok = np.isfinite(norms) & (norms < OVERFLOW_NORM)
    # once a trajectory overflows, every later state is discarded
    valid = np.logical_and.accumulate(ok, axis=0).T
    states = np.where(valid[..., None], states.transpose(1, 0, 2), 0.0)
    weights = (1.0 - spec.gamma) * spec.gamma ** np.arange(T)
    return DiscountedStates(states, weights, valid, ~valid.all(axis=1))
