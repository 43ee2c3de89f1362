import numpy as np
import pytest

from mvdlab import lqr
from mvdlab.estimators import UnsupportedOracleError
from mvdlab.lqr import CorruptionSpec, LqrSpec
from mvdlab.policygrad import (
    LqrCritic,
    PolicyGradConfig,
    SweepCell,
    error_cell,
    error_sweep,
    gradient_error,
    lqr_learning_run,
    pg_estimate,
    seed_streams,
    slope_test,
)

ESTIMATORS = ["sf", "reparam", "mvd"]


@pytest.fixture(scope="module")
def deadbeat():
    return LqrSpec(A=1.0, B=1.0, Q=1.0, R=1.0, gamma=0.9, s0=[1.0], Sigma=0.1), np.array([[1.0]])


@pytest.fixture(scope="module")
def instance():
    spec, pol = lqr.make_random_lqr(2, 1, 6)
    return spec, pol.K


class ConstantCritic:
    differentiable = True

    def __init__(self):
        self.queries = 0

    def q(self, s, a):
        self.queries += int(np.prod(np.shape(a)[:-1]))
        return np.ones(np.broadcast_shapes(np.shape(s)[:-1], np.shape(a)[:-1]))

    def advantage(self, s, a):
        return self.q(s, a) - 1.0

    def action_gradient(self, s, a):
        return np.zeros(np.shape(a))


@pytest.mark.parametrize("estimator", ESTIMATORS)
def test_deadbeat_converges_to_exact(deadbeat, estimator):
    spec, K = deadbeat
    rng = np.random.default_rng(0)
    cfg = PolicyGradConfig(estimator, trajectories=200, actions_per_state=40)
    g = np.array([pg_estimate(spec, K, cfg, child)[0, 0] for child in rng.spawn(40)])
    se = g.std(ddof=1) / np.sqrt(len(g))
    assert abs(g.mean() - 3.8) < 3 * se


@pytest.mark.parametrize("estimator", ESTIMATORS)
def test_unbiased_at_small_budget(instance, estimator):
    spec, K = instance
    truth = lqr.exact_policy_gradient(spec, K)
    cfg = PolicyGradConfig(estimator, trajectories=1, actions_per_state=4)
    g = np.stack([pg_estimate(spec, K, cfg, child) for child in np.random.default_rng(1).spawn(200)])
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - truth) < 4 * se)


def test_mvd_constant_critic_is_zero(instance):
    spec, K = instance
    cfg = PolicyGradConfig("mvd", trajectories=3, actions_per_state=4)
    g = pg_estimate(spec, K, cfg, np.random.default_rng(0), critic=ConstantCritic())
    np.testing.assert_array_equal(g, 0.0)


def test_query_accounting(instance):
    spec, K = instance
    T = 50
    N, m = 3, spec.n_actions
    for est, M, expected in (("sf", 6, N * T * 6), ("reparam", 6, N * T * 6), ("mvd", 2 * m * 3, N * T * 3 * 2 * m)):
        cfg = PolicyGradConfig(est, trajectories=N, actions_per_state=M)
        critic = LqrCritic(spec, K)
        pg_estimate(spec, K, cfg, np.random.default_rng(0), critic=critic, horizon=T)
        assert critic.queries + critic.gradient_queries == expected


def test_mvd_budget_interpretation():
    cfg = PolicyGradConfig("mvd", actions_per_state=2)
    assert cfg.mvd_pairs(1) == 1
    assert PolicyGradConfig("mvd", actions_per_state=40).mvd_pairs(2) == 10


def test_reparam_needs_differentiable_critic(instance):
    spec, K = instance
    critic = LqrCritic(spec, K, differentiable=False)
    with pytest.raises(UnsupportedOracleError):
        pg_estimate(spec, K, PolicyGradConfig("reparam", 1, 4), np.random.default_rng(0), critic=critic)
    # evaluation-only critics are fine for the other two
    for est in ("sf", "mvd"):
        pg_estimate(spec, K, PolicyGradConfig(est, 1, 4), np.random.default_rng(0), critic=LqrCritic(spec, K, differentiable=False))


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyGradConfig("bogus")
    with pytest.raises(ValueError):
        PolicyGradConfig("sf", critic="corrupted")
    with pytest.raises(ValueError):
        PolicyGradConfig("sf", actions_per_state=0)


class TestGradientError:
    def test_examples(self):
        g = np.array([[1.0, -2.0]])
        r = gradient_error(g, g)
        assert (r.relative_absolute_error, r.cosine_distance) == (0.0, 0.0)
        r = gradient_error(-g, g)
        assert r.relative_absolute_error == 0.0 and r.cosine_distance == pytest.approx(2.0)
        r = gradient_error(2 * g, g)
        assert r.relative_absolute_error == pytest.approx(1.0) and r.cosine_distance == pytest.approx(0.0)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            gradient_error(np.ones(2), np.zeros(2))
        r = gradient_error(np.zeros(2), np.ones(2))
        assert r.cosine_distance == 1.0 and r.zero_estimate and r.relative_absolute_error == 1.0

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            r = gradient_error(rng.normal(size=3), rng.normal(size=3))
            assert 0.0 <= r.cosine_distance <= 2.0 and r.relative_absolute_error >= 0.0


class TestSweep:
    def test_alpha_zero_ignores_frequency(self, instance):
        spec, K = instance
        for est in ESTIMATORS:
            a = error_cell(spec, K, SweepCell(est, 2, 4, 0.0, 0.0), 3)
            b = error_cell(spec, K, SweepCell(est, 2, 4, 0.0, 50.0), 3)
            assert (a["rel_abs_err"], a["cos_dist"]) == (b["rel_abs_err"], b["cos_dist"])

    def test_common_random_numbers(self):
        s1, s2 = seed_streams(4), seed_streams(4)
        assert s1["rollout"].random() == s2["rollout"].random()
        assert s1["rollout"].random() != s1["actions"].random()

    def test_rows_and_order(self, instance):
        spec, K = instance
        cells = [SweepCell(e, 1, 2) for e in ESTIMATORS]
        rows = error_sweep(spec, K, cells, [0, 1])
        assert [(r["estimator"], r["seed"]) for r in rows] == [(e, s) for e in ESTIMATORS for s in (0, 1)]
        with pytest.raises(ValueError):
            error_sweep(spec, K, [], [0])

    def test_more_actions_help(self, instance):
        spec, K = instance
        for est in ESTIMATORS:
            lo = np.median([error_cell(spec, K, SweepCell(est, 1, 2), s)["cos_dist"] for s in range(15)])
            hi = np.median([error_cell(spec, K, SweepCell(est, 1, 64), s)["cos_dist"] for s in range(15)])
            assert hi <= lo


class TestSlope:
    def test_positive_trend(self):
        x = np.arange(10.0)
        y = 0.5 * x + np.random.default_rng(0).normal(scale=0.1, size=10)
        assert slope_test(x, y)["significant_positive"]

    def test_flat_and_negative(self):
        x = np.arange(10.0)
        rng = np.random.default_rng(1)
        assert not slope_test(x, (-1.0) ** x)["significant_positive"]
        assert not slope_test(x, -x + rng.normal(scale=0.1, size=10))["significant_positive"]

    def test_exact_fits(self):
        x = np.arange(5.0)
        assert not slope_test(x, np.ones(5))["significant_positive"]
        assert slope_test(x, 2 * x)["significant_positive"]


class TestLearning:
    def test_exact_gradient_converges(self, instance):
        spec, K = instance
        j_opt = lqr.expected_cost(spec, lqr.solve_dare(spec).K)
        curve = lqr_learning_run(spec, K, None, 1e-3, 3000, np.random.default_rng(0), record_every=100)
        assert not curve.diverged
        assert -curve.final_return <= 1.01 * j_opt
        assert curve.env_steps[-1] == 0

    def test_divergence_is_recorded(self, instance):
        spec, K = instance
        curve = lqr_learning_run(spec, K, None, 10.0, 50, np.random.default_rng(0))
        assert curve.diverged and curve.final_return == -np.inf

    def test_estimated_run_counts_steps(self, instance):
        spec, K = instance
        cfg = PolicyGradConfig("mvd", 1, 2)
        curve = lqr_learning_run(spec, K, cfg, 1e-4, 5, np.random.default_rng(0))
        assert len(curve.returns) == 6
        assert curve.env_steps[-1] >= 5 * lqr.default_horizon(spec.gamma)
