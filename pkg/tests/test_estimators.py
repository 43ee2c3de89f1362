import numpy as np
import pytest

from mvdlab.distributions import DiagGaussianParams
from mvdlab.estimators import (
    CountingOracle,
    FunctionOracle,
    UnsupportedOracleError,
    estimator_variance_study,
    get_estimator,
    mvd_gradient,
    optimal_baseline_loo,
    reparam_gradient,
    sf_gradient,
)
from mvdlab.testbed import TEST_FUNCTIONS

from oracles import fd_gradient_gh


def params(mean, scale):
    return DiagGaussianParams(np.asarray(mean, float), np.asarray(scale, float))


square = FunctionOracle(lambda x: np.sum(x**2, axis=-1), lambda x: 2 * x)
cosine = FunctionOracle(lambda x: np.sum(np.cos(x), axis=-1), lambda x: -np.sin(x))
ESTIMATORS = [sf_gradient, reparam_gradient, mvd_gradient]


def within(est, truth, k):
    return np.all(np.abs(est.gradient - truth) <= k * est.standard_error)


class TestScoreFunction:
    def test_constant_without_baseline(self):
        est = sf_gradient(FunctionOracle(lambda x: np.full(x.shape[:-1], 3.0)), params([0.2], [1.1]), 10_000, np.random.default_rng(0), "none")
        assert within(est, 0.0, 3)

    @pytest.mark.parametrize("mode", ["none", "optimal"])
    def test_square_moment(self, mode):
        est = sf_gradient(square, params([1.0], [1.0]), 10**6, np.random.default_rng(1), mode)
        assert within(est, np.array([2.0, 2.0]), 3)

    def test_baseline_reduces_variance(self):
        f = FunctionOracle(lambda x: np.sum(x**2, axis=-1) + 10.0)
        p = params([1.0], [1.0])
        v_opt = estimator_variance_study(f, p, sf_gradient, 8, 100, np.random.default_rng(2), baseline_mode="optimal")
        v_none = estimator_variance_study(f, p, sf_gradient, 8, 100, np.random.default_rng(2), baseline_mode="none")
        assert np.all(v_opt <= v_none)

    def test_loo_baseline_unbiased(self):
        p = params([1.0], [1.0])
        rng = np.random.default_rng(3)
        g = np.stack([sf_gradient(square, p, 4, child).gradient for child in rng.spawn(10_000)])
        se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
        assert np.all(np.abs(g.mean(axis=0) - 2.0) < 4 * se)

    def test_loo_baseline_excludes_own_sample(self):
        values = np.array([1.0, 2.0, 4.0])
        scores = np.array([[1.0], [1.0], [2.0]])
        b = optimal_baseline_loo(values, scores)
        assert b[0, 0] == pytest.approx((2.0 + 16.0) / 5.0)
        assert b[2, 0] == pytest.approx(1.5)

    def test_loo_degenerate_denominator(self):
        b = optimal_baseline_loo(np.array([1.0, 5.0]), np.zeros((2, 1)))
        np.testing.assert_array_equal(b, 0.0)

    def test_needs_two_samples_for_baseline(self):
        with pytest.raises(ValueError):
            sf_gradient(square, params([0], [1]), 1, np.random.default_rng(0))


class TestReparam:
    def test_linear_is_exact(self):
        a = np.array([1.5, -2.0])
        lin = FunctionOracle(lambda x: x @ a, lambda x: np.broadcast_to(a, x.shape))
        est = reparam_gradient(lin, params([0.3, 0.1], [1.0, 2.0]), 16, np.random.default_rng(0))
        np.testing.assert_array_equal(est.gradient[:2], a)
        np.testing.assert_array_equal(est.per_coordinate_variance[:2], 0.0)

    def test_square_moment(self):
        est = reparam_gradient(square, params([1.0], [1.0]), 10**6, np.random.default_rng(1))
        assert within(est, np.array([2.0, 2.0]), 3)

    def test_evaluation_only_oracle(self):
        with pytest.raises(UnsupportedOracleError):
            reparam_gradient(FunctionOracle(lambda x: x[..., 0]), params([0], [1]), 4, np.random.default_rng(0))


class TestMvd:
    def test_constant_is_exactly_zero(self):
        est = mvd_gradient(FunctionOracle(lambda x: np.full(x.shape[:-1], 7.0)), params([0.1, 2.0], [0.3, 1.0]), 50, np.random.default_rng(0))
        np.testing.assert_array_equal(est.gradient, 0.0)

    def test_square_moment(self):
        est = mvd_gradient(square, params([1.0], [1.0]), 10**6, np.random.default_rng(1))
        assert within(est, np.array([2.0, 2.0]), 3)

    def test_styblinski_matches_quadrature(self):
        fn = TEST_FUNCTIONS["styblinski"]
        p = params([0.5, -1.5], [0.8, 1.3])
        truth = fd_gradient_gh(fn.evaluate, p.mean, p.scale)
        est = mvd_gradient(fn.oracle(), p, 10**6, np.random.default_rng(2))
        assert within(est, truth, 3)

    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            mvd_gradient(square, params([0], [1]), 0, np.random.default_rng(0))


class TestVarianceStudy:
    def test_reparam_linear_zero_variance(self):
        a = np.array([2.0])
        lin = FunctionOracle(lambda x: x @ a, lambda x: np.broadcast_to(a, x.shape))
        v = estimator_variance_study(lin, params([0.0], [1.0]), reparam_gradient, 4, 20, np.random.default_rng(0))
        assert v[0] == 0.0

    def test_coupling_helps_on_cos(self):
        f = FunctionOracle(lambda x: np.cos(x[..., 0]))
        p = params([0.5], [0.7])
        vc = estimator_variance_study(f, p, mvd_gradient, 8, 200, np.random.default_rng(1), coupled=True)
        vu = estimator_variance_study(f, p, mvd_gradient, 8, 200, np.random.default_rng(1), coupled=False)
        assert np.all(vc <= vu)

    def test_mean_coupling_is_antithetic_for_linear(self):
        # f(x) = x: the coupled mean pair gives c * 2 sigma W, the independent
        # one c * sigma (W1 + W2), so coupling doubles this variance term
        f = FunctionOracle(lambda x: x[..., 0])
        p = params([0.0], [1.0])
        vc = estimator_variance_study(f, p, mvd_gradient, 8, 2000, np.random.default_rng(2), coupled=True)
        vu = estimator_variance_study(f, p, mvd_gradient, 8, 2000, np.random.default_rng(2), coupled=False)
        var_w = 2.0 - np.pi / 2.0
        c2 = 1.0 / (2.0 * np.pi)
        assert vc[0] == pytest.approx(c2 * 4 * var_w / 8, rel=0.1)
        assert vu[0] == pytest.approx(c2 * 2 * var_w / 8, rel=0.1)

    def test_sf_without_baseline_much_noisier_than_mvd(self):
        f = FunctionOracle(lambda x: np.sum(x**2, axis=-1) + 100.0)
        p = params([1.0], [1.0])
        M = 8
        v_mvd = estimator_variance_study(f, p, mvd_gradient, M, 200, np.random.default_rng(3))
        v_sf = estimator_variance_study(f, p, sf_gradient, 2 * M * 2, 200, np.random.default_rng(3), baseline_mode="none")
        assert np.all(v_sf > 10 * v_mvd)

    def test_needs_two_repetitions(self):
        with pytest.raises(ValueError):
            estimator_variance_study(square, params([0], [1]), mvd_gradient, 2, 1, np.random.default_rng(0))


@pytest.mark.parametrize(
    "oracle",
    [square, cosine, TEST_FUNCTIONS["styblinski"].oracle(), TEST_FUNCTIONS["quadratic"].oracle()],
    ids=["square", "cos", "styblinski", "quadratic"],
)
def test_estimators_agree(oracle):
    rng = np.random.default_rng(4)
    p = params(rng.uniform(-2, 2, 2), rng.uniform(0.3, 1.5, 2))
    ests = [e(oracle, p, 10**5, np.random.default_rng(5)) for e in ESTIMATORS]
    for i in range(3):
        for j in range(i + 1, 3):
            se = np.sqrt(ests[i].standard_error**2 + ests[j].standard_error**2)
            assert np.all(np.abs(ests[i].gradient - ests[j].gradient) <= 4 * se)


class TestAccounting:
    @pytest.mark.parametrize("M", [2, 5, 32])
    def test_counts(self, M):
        p = params([0.0, 1.0, -1.0], [1.0, 0.5, 2.0])
        for est, expected in ((sf_gradient, M), (reparam_gradient, M), (mvd_gradient, 2 * M * 6)):
            oracle = CountingOracle(cosine)
            out = est(oracle, p, M, np.random.default_rng(0))
            assert oracle.evaluations + oracle.gradient_evaluations == expected
            assert out.function_evaluations == expected

    def test_mvd_skips_coincident_pairs(self, monkeypatch):
        import mvdlab.estimators as est_mod

        class Degenerate:
            constant = 1.0

            def sample_pair(self, rng, size):
                x = np.zeros((size, 1))
                y = x.copy()
                y[::2] = 1.0  # half the pairs differ
                return y, x

        monkeypatch.setattr(est_mod, "mvd_triplets", lambda p: [Degenerate(), Degenerate()])
        oracle = CountingOracle(square)
        out = mvd_gradient(oracle, params([0.0], [1.0]), 6, np.random.default_rng(0))
        assert oracle.evaluations == out.function_evaluations == 2 * 2 * 3
        np.testing.assert_array_equal(out.gradient, 0.5)

    def test_determinism(self):
        p = params([0.3, -0.4], [1.0, 0.2])
        for est in ESTIMATORS:
            a = est(cosine, p, 64, np.random.default_rng(9)).gradient
            b = est(cosine, p, 64, np.random.default_rng(9)).gradient
            np.testing.assert_array_equal(a, b)

    def test_registry(self):
        assert get_estimator("mvd") is mvd_gradient
        with pytest.raises(ValueError):
            get_estimator("bogus")
