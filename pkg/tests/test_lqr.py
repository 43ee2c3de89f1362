import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg

from mvdlab import lqr
from mvdlab.lqr import CorruptionSpec, LqrSpec

from oracles import central_difference


@pytest.fixture
def deadbeat():
    return LqrSpec(A=1.0, B=1.0, Q=1.0, R=1.0, gamma=0.9, s0=[1.0], Sigma=0.1), np.array([[1.0]])


def random_instances(count, n=3, m=2):
    return [lqr.make_random_lqr(n, m, seed) for seed in range(count)]


def gh_action_mean(fun, mean, Sigma, nodes=20):
    """``E[fun(a)]`` for ``a ~ N(mean, Sigma)`` by tensor Gauss-Hermite."""
    z, w = hermegauss(nodes)
    w = w / np.sqrt(2 * np.pi)
    m = len(mean)
    grids = np.meshgrid(*([z] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) @ np.linalg.cholesky(Sigma).T + mean
    weights = np.prod(np.meshgrid(*([w] * m), indexing="ij"), axis=0).ravel()
    return weights @ fun(pts)


class TestScalarDeadbeat:
    def test_value(self, deadbeat):
        spec, K = deadbeat
        sol = lqr.solve_policy_value(spec, K)
        assert sol.P[0, 0] == pytest.approx(2.0, abs=1e-12)
        assert sol.offset == pytest.approx(2.8, abs=1e-12)
        assert sol.value(np.array([1.0])) == pytest.approx(4.8, abs=1e-12)

    def test_q_and_advantage(self, deadbeat):
        spec, K = deadbeat
        assert lqr.true_q(spec, K, np.array([1.0]), np.array([-1.0])) == pytest.approx(4.52)
        assert lqr.true_advantage(spec, K, np.array([1.0]), np.array([-1.0])) == pytest.approx(-0.28)

    def test_gradient(self, deadbeat):
        spec, K = deadbeat
        assert lqr.discounted_state_covariance(spec, K)[0, 0] == pytest.approx(1.9)
        assert lqr.exact_policy_gradient(spec, K)[0, 0] == pytest.approx(3.8)

    def test_dare_residual(self, deadbeat):
        spec, _ = deadbeat
        K = lqr.solve_dare(spec).K
        # scalar discounted Riccati fixed point, solved independently by scipy
        P = linalg.solve_discrete_are(np.sqrt(0.9) * spec.A, np.sqrt(0.9) * spec.B, spec.Q, spec.R)
        assert lqr.dare_residual(spec, P) < 1e-12
        assert K[0, 0] == pytest.approx(0.9 * P[0, 0] / (1 + 0.9 * P[0, 0]), rel=1e-10)


class TestRandomInstances:
    def test_generator_contract(self):
        for spec, pol in random_instances(10):
            assert lqr.spectral_radius(spec.A) > 1.0
            assert lqr.is_stable(spec, pol.K)
            assert np.all(np.isfinite(lqr.solve_policy_value(spec, pol.K).P))
            K_opt = lqr.solve_dare(spec).K
            assert not np.allclose(pol.K, K_opt)
            assert np.all(np.abs(spec.s0) <= 1.0)

    def test_generator_deterministic(self):
        (a, ka), (b, kb) = lqr.make_random_lqr(2, 1, 5), lqr.make_random_lqr(2, 1, 5)
        assert a.to_text() == b.to_text()
        np.testing.assert_array_equal(ka.K, kb.K)

    def test_bellman_residual(self):
        for spec, pol in random_instances(20):
            assert lqr.bellman_residual(spec, pol.K, lqr.solve_policy_value(spec, pol.K)) < 1e-10

    def test_gradient_matches_finite_difference(self):
        for spec, pol in random_instances(20):
            fd = central_difference(lambda K: lqr.expected_cost(spec, K), pol.K, 1e-5)
            g = lqr.exact_policy_gradient(spec, pol.K)
            assert np.linalg.norm(g - fd) < 1e-6 * np.linalg.norm(g)

    def test_optimal_gain(self):
        for spec, _ in random_instances(10):
            K = lqr.solve_dare(spec).K
            assert np.linalg.norm(lqr.exact_policy_gradient(spec, K)) < 1e-8
            P = linalg.solve_discrete_are(np.sqrt(spec.gamma) * spec.A, np.sqrt(spec.gamma) * spec.B, spec.Q, spec.R)
            np.testing.assert_allclose(lqr.solve_policy_value(spec, K).P, P, rtol=1e-8)

    def test_optimum_beats_random_gains(self):
        spec, pol = lqr.make_random_lqr(3, 2, 0)
        j_opt = lqr.expected_cost(spec, lqr.solve_dare(spec).K)
        rng = np.random.default_rng(0)
        tried = 0
        while tried < 100:
            K = pol.K + rng.normal(scale=0.3, size=pol.K.shape)
            if lqr.is_stable(spec, K):
                assert j_opt <= lqr.expected_cost(spec, K)
                tried += 1

    def test_descent_step_improves(self):
        for spec, pol in random_instances(20):
            g = lqr.exact_policy_gradient(spec, pol.K)
            step = 1e-3 / max(1.0, np.linalg.norm(g))
            assert lqr.expected_cost(spec, pol.K - step * g) < lqr.expected_cost(spec, pol.K)

    def test_value_against_scipy_lyapunov(self):
        spec, pol = lqr.make_random_lqr(4, 2, 3)
        M = np.sqrt(spec.gamma) * lqr.closed_loop(spec, pol.K)
        P = linalg.solve_discrete_lyapunov(M.T, spec.Q + pol.K.T @ spec.R @ pol.K)
        np.testing.assert_allclose(lqr.solve_policy_value(spec, pol.K).P, P, rtol=1e-9)

    def test_unstable_gain_raises(self, deadbeat):
        spec, _ = deadbeat
        with pytest.raises(lqr.UnstableClosedLoop):
            lqr.solve_policy_value(spec, np.array([[-2.0]]))


class TestCritics:
    def test_q_averages_to_value(self):
        spec, pol = lqr.make_random_lqr(3, 2, 1)
        s = np.array([0.3, -0.7, 1.2])
        mean = -pol.K @ s
        sol = lqr.solve_policy_value(spec, pol.K)
        avg = gh_action_mean(lambda a: lqr.true_q(spec, pol.K, s, a, sol), mean, spec.Sigma)
        assert avg == pytest.approx(sol.value(s), abs=1e-6)
        adv = gh_action_mean(lambda a: lqr.true_advantage(spec, pol.K, s, a, sol), mean, spec.Sigma)
        assert abs(adv) < 1e-6

    def test_advantage_minimized_by_greedy_action(self):
        spec, pol = lqr.make_random_lqr(2, 1, 2)
        sol = lqr.solve_policy_value(spec, pol.K)
        s = np.array([0.5, -0.4])
        H = spec.R + spec.gamma * spec.B.T @ sol.P @ spec.B
        a_star = -np.linalg.solve(H, spec.gamma * spec.B.T @ sol.P @ spec.A @ s)
        probes = a_star + np.random.default_rng(0).normal(size=(200, 1))
        assert np.all(lqr.true_advantage(spec, pol.K, s, a_star, sol) <= lqr.true_advantage(spec, pol.K, s, probes, sol))

    def test_action_gradients(self):
        spec, pol = lqr.make_random_lqr(3, 2, 4)
        rng = np.random.default_rng(5)
        s, a = rng.normal(size=3), rng.normal(size=2)
        corr = CorruptionSpec.sample(2, 0.5, 3.0, rng)
        fd = central_difference(lambda x: lqr.true_q(spec, pol.K, s, x), a)
        np.testing.assert_allclose(lqr.true_q_action_gradient(spec, pol.K, s, a), fd, rtol=1e-6)
        fd = central_difference(lambda x: lqr.corrupted_q(spec, pol.K, corr, s, x), a, 1e-7)
        np.testing.assert_allclose(lqr.corrupted_q_action_gradient(spec, pol.K, corr, s, a), fd, rtol=1e-5)

    def test_corruption_properties(self):
        spec, pol = lqr.make_random_lqr(2, 2, 6)
        rng = np.random.default_rng(7)
        s, a = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        q = lqr.true_q(spec, pol.K, s, a)
        off = CorruptionSpec(0.0, 10.0, np.array([0.5, 0.5]), 1.0)
        np.testing.assert_array_equal(lqr.corrupted_q(spec, pol.K, off, s, a), q)
        c = CorruptionSpec.sample(2, 0.7, 20.0, rng)
        assert np.all(np.abs(lqr.corrupted_q(spec, pol.K, c, s, a) - q) <= 0.7 * np.abs(q) + 1e-12)
        flat = CorruptionSpec(0.3, 0.0, np.array([0.2, 0.8]), 0.0)
        np.testing.assert_allclose(lqr.corrupted_q(spec, pol.K, flat, s, a), 1.3 * q)
        sol = lqr.solve_policy_value(spec, pol.K)
        np.testing.assert_allclose(lqr.corrupted_advantage(spec, pol.K, c, s, a), lqr.corrupted_q(spec, pol.K, c, s, a) - sol.value(s))

    def test_corruption_validation(self):
        with pytest.raises(ValueError):
            CorruptionSpec(0.1, 1.0, np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            CorruptionSpec(-0.1, 1.0)


class TestRollouts:
    def test_weights(self, deadbeat):
        spec, K = deadbeat
        T = lqr.default_horizon(spec.gamma)
        assert spec.gamma**T < 1e-4 <= spec.gamma ** (T - 1)
        roll = lqr.sample_discounted_states(spec, K, 3, np.random.default_rng(0), T)
        assert abs(roll.weights.sum() - (1 - spec.gamma**T)) < 1e-12
        np.testing.assert_array_equal(roll.states[:, 0, :], 1.0)

    def test_gamma_to_zero(self):
        spec = LqrSpec(A=1.0, B=1.0, Q=1.0, R=1.0, gamma=1e-6, s0=[0.4], Sigma=0.1)
        roll = lqr.sample_discounted_states(spec, np.array([[0.5]]), 2, np.random.default_rng(0))
        assert roll.weights[0] == pytest.approx(1.0, abs=1e-5)
        assert roll.weights[1:].sum() < 1e-5

    def test_second_moment_matches_covariance(self):
        spec = LqrSpec(A=1.1, B=1.0, Q=1.0, R=1.0, gamma=0.9, s0=[1.0], Sigma=0.1)
        K = np.array([[0.6]])
        T = lqr.rollout_horizon(spec, K)
        roll = lqr.sample_discounted_states(spec, K, 10_000, np.random.default_rng(1), T)
        emp = np.mean(np.sum(roll.weights[None] * roll.states[..., 0] ** 2, axis=1)) / (1 - spec.gamma)
        assert emp == pytest.approx(lqr.discounted_state_covariance(spec, K)[0, 0], rel=0.05)

    def test_overflow_truncates(self):
        spec = LqrSpec(A=3.0, B=1.0, Q=1.0, R=1.0, gamma=0.1, s0=[1.0], Sigma=0.1)
        roll = lqr.sample_discounted_states(spec, np.array([[0.0]]), 2, np.random.default_rng(0), 40)
        assert roll.any_truncated
        assert np.all(roll.states[~roll.valid] == 0.0)
        assert roll.valid[:, 0].all()

    def test_rollout_horizon_never_shorter_than_default(self):
        spec, pol = lqr.make_random_lqr(2, 1, 0)
        assert lqr.rollout_horizon(spec, pol.K) >= lqr.default_horizon(spec.gamma)


def test_text_round_trip():
    spec, _ = lqr.make_random_lqr(3, 2, 8)
    back = LqrSpec.from_text(spec.to_text())
    for name in ("A", "B", "Q", "R", "Sigma", "s0"):
        np.testing.assert_array_equal(getattr(back, name), getattr(spec, name))
    assert back.gamma == spec.gamma


def test_spec_validation():
    with pytest.raises(ValueError):
        LqrSpec(A=1.0, B=1.0, Q=1.0, R=0.0, gamma=0.9, s0=[1.0], Sigma=0.1)
    with pytest.raises(ValueError):
        LqrSpec(A=1.0, B=1.0, Q=1.0, R=1.0, gamma=1.0, s0=[1.0], Sigma=0.1)
