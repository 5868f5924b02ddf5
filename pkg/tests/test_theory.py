import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from curse_lab.theory import (ASYMPTOTIC_BIAS, AssumptionError, CheckResult, PiecewiseEnvParams,
                              RidgeExampleParams, excess_mse, features, lemma_a_check,
                              optimism_bias, piecewise_f_star, piecewise_mse, policy,
                              policy_value, policy_value_exact, prop2_bound,
                              ridge_population_target, run_all, sensitivity_check, verify_lemma1,
                              verify_prop1, verify_prop2, verify_prop3)


def by_name(checks, prefix):
    return [c for c in checks if c.name.startswith(prefix)]


class TestTent:
    def test_f_star_values(self):
        prm = PiecewiseEnvParams(0.5, 2.0)
        assert piecewise_f_star(0.5, prm) == 2.0
        assert piecewise_f_star(0.0, prm) == 0.0 and piecewise_f_star(1.0, prm) == 0.0
        assert piecewise_f_star(0.25, prm) == pytest.approx(1.0)

    def test_params(self):
        with pytest.raises(ValueError):
            PiecewiseEnvParams(1.0)
        assert PiecewiseEnvParams(0.3).eps == pytest.approx(0.7)

    @pytest.mark.parametrize("t0,y,target", [(0.5, 2.0, 1.5), (0.999, 1.0, 0.9995)])
    def test_lemma1(self, t0, y, target):
        checks = verify_lemma1(PiecewiseEnvParams(t0, y))
        assert checks[0].target == pytest.approx(target)
        assert all(c.passed for c in checks)

    def test_lemma1_against_quadrature(self):
        # slope = 3 * int t f*(t) dt, computed independently by adaptive quadrature
        prm = PiecewiseEnvParams(0.7, 1.3)
        num = quad(lambda t: t * piecewise_f_star(t, prm), 0, 1, points=[0.7])[0]
        assert 3 * num == pytest.approx(prm.ols_slope, abs=1e-10)

    def test_mc_close_to_grid(self):
        # the 1e-3 agreement needs a narrower tent than (0.5, 2): the ratio estimator's SE there is ~1.5e-3
        grid, mc = verify_lemma1(PiecewiseEnvParams(0.9, 1.0), mc_draws=1_000_000)
        assert abs(grid.computed - mc.computed) < 1e-3

    @pytest.mark.parametrize("t0,y,bias", [(0.5, 2.0, 1.5), (0.9, 1.0, 0.95)])
    def test_prop1(self, t0, y, bias):
        checks = verify_prop1(PiecewiseEnvParams(t0, y))
        assert all(c.passed for c in checks)
        assert by_name(checks, "prop1/bias[")[0].computed == pytest.approx(bias, abs=1e-3)
        assert by_name(checks, "prop1/t_hat")[0].computed == 1.0
        assert by_name(checks, "prop1/true_outcome")[0].computed == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.01, 100.0))
    def test_argmax_scale_invariance(self, t0, y):
        checks = verify_prop1(PiecewiseEnvParams(t0, y), grid=2000, tol=1e-2)
        assert by_name(checks, "prop1/t_hat")[0].computed == 1.0

    @pytest.mark.parametrize("eps,bound", [(0.1, 0.2033333333), (0.5, 1.0833333333)])
    def test_prop2(self, eps, bound):
        prm = PiecewiseEnvParams(1.0 - eps, 1.0)
        assert prop2_bound(prm) == pytest.approx(bound)
        assert all(c.passed for c in verify_prop2(prm))

    def test_prop2_small_eps(self):
        assert piecewise_mse(PiecewiseEnvParams(0.99, 1.0)) < 0.03


class TestRidgeExample:
    def test_population_target(self):
        beta, sigma = ridge_population_target(RidgeExampleParams(b=1.0, alpha=0.01 / math.sqrt(
            18 * math.log(160) / 1e5)))
        np.testing.assert_allclose(beta, [0, 1 / 2.01, 1 / 2.01], rtol=1e-12)
        assert beta[1] == pytest.approx(0.497512, abs=1e-6)
        _, sigma = ridge_population_target(RidgeExampleParams(p=0.9))
        np.testing.assert_allclose(sigma, [[0.9, 0, 0], [0, 1, 0.9], [0, 0.9, 0.9]])

    def test_small_lambda_even_split(self):
        beta, _ = ridge_population_target(RidgeExampleParams(b=2.0, alpha=1e-9))
        np.testing.assert_allclose(beta, [0, 1, 1], atol=1e-9)

    def test_derived_quantities(self):
        prm = RidgeExampleParams()
        assert prm.a == pytest.approx(1e5 ** 0.25)
        assert prm.lam == pytest.approx(prm.a * math.sqrt(18 * math.log(160) / 1e5))
        assert prm.Delta == pytest.approx(0.002)
        assert ASYMPTOTIC_BIAS == pytest.approx(0.199471, abs=1e-6)

    def test_assumption_refused(self):
        with pytest.raises(AssumptionError, match="sample-size hypothesis"):
            RidgeExampleParams(n=100).check_assumptions()

    def test_alpha_warning(self):
        with pytest.warns(UserWarning, match="alpha"):
            RidgeExampleParams().check_assumptions()

    def test_truth_has_no_bias(self, rng):
        prm = RidgeExampleParams()
        x = rng.standard_normal(10_000)
        assert excess_mse(prm.beta_star, prm) == 0.0
        assert optimism_bias(prm.beta_star, prm.beta_star, prm, x) == 0.0

    def test_policy_ties(self):
        assert list(policy(np.zeros(3), np.array([-1.0, 0.0, 1.0]))) == [1.0, 1.0, 1.0]

    def test_policy_value_closed_form(self, rng):
        x = rng.standard_normal(1_000_000)
        for _ in range(20):
            b, e = rng.normal(size=3), rng.normal(size=3)
            assert policy_value(b, e, x) == pytest.approx(policy_value_exact(b, e), abs=0.01)

    def test_excess_mse_direct_monte_carlo(self, rng):
        prm = RidgeExampleParams(p=0.8)
        beta = np.array([0.3, 0.6, -0.2])
        n = 1_000_000
        x = rng.standard_normal(n)
        t = (rng.random(n) < prm.p).astype(float)
        y = prm.b * x + rng.standard_normal(n)
        phi = features(x, t)
        direct = np.mean((phi @ beta - y) ** 2) - np.mean((phi @ prm.beta_star - y) ** 2)
        sq = (phi @ (beta - prm.beta_star)) ** 2
        assert abs(direct - excess_mse(beta, prm)) < 3 * 2 * sq.std() / math.sqrt(n) + 3 / math.sqrt(n)

    def test_prop3_default(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            checks = verify_prop3(RidgeExampleParams(), reps=100)
        assert all(c.passed for c in checks), [c for c in checks if not c.passed]

    def test_prop3_b2(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            checks = verify_prop3(RidgeExampleParams(b=2.0), reps=100)
        bias = by_name(checks, "prop3/optimism-bias")[0]
        assert abs(bias.computed - 0.398943) <= 0.05 * 2


class TestInvariants:
    def test_lemma_a(self):
        assert all(c.passed for c in lemma_a_check(100))

    def test_sensitivity(self):
        assert all(c.passed for c in sensitivity_check(100))

    def test_check_relations(self):
        assert CheckResult("a", 1.0, 1.0005, 1e-3).passed
        assert not CheckResult("a", 1.0, 2.0, 0.5).passed
        assert CheckResult("a", 1.0, 2.0, 0.0, "le").passed
        assert not CheckResult("a", 1.0, 2.0, 0.0, "ge").passed
        assert not CheckResult("a", float("nan"), 2.0, 1.0).passed

    def test_run_all_deterministic(self):
        a = run_all(seed=0, quick=True)
        b = run_all(seed=0, quick=True)
        assert a.rows() == b.rows()
        assert a.passed
