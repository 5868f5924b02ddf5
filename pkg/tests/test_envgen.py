import numpy as np
import pytest
from scipy.stats import chisquare

from curse_lab.assign import Matching
from curse_lab.envgen import (MARGINALS, CausalModel, ConstantEffect, EnvironmentConfig,
                              build_causal_model, geometric_location_probs, regenerate_assignments,
                              sample_covariates, sample_history, true_value)
from curse_lab.tabular import refugee_schema

SCHEMA = refugee_schema()


@pytest.fixture(scope="module")
def big_sample(small_env):
    return sample_covariates(small_env, 100_000, 5)


def frac(cov, name, category):
    c = SCHEMA[name]
    return np.mean(cov[:, SCHEMA.index(name)] == c.categories.index(category))


class TestMarginals:
    def test_male(self, big_sample):
        assert abs(frac(big_sample, "gender", "male") - 0.53) < 0.01

    def test_burma(self, big_sample):
        assert SCHEMA["origin"].categories[0].lower() == "burma"
        assert abs(frac(big_sample, "origin", SCHEMA["origin"].categories[0]) - 0.23) < 0.01

    def test_chi_square_all_categoricals(self, big_sample):
        for j, c in enumerate(SCHEMA):
            if c.kind == "numeric":
                continue
            counts = np.bincount(big_sample[:, j].astype(int), minlength=len(c.categories))
            expected = np.asarray(MARGINALS[c.name]) * big_sample.shape[0]
            assert chisquare(counts, expected).pvalue > 0.001, c.name

    def test_age_bins(self, big_sample):
        age = big_sample[:, 0]
        shares = np.histogram(age, bins=[18, 30, 40, 50, 60])[0] / age.size
        np.testing.assert_allclose(shares, [0.44, 0.28, 0.16, 0.12], atol=0.01)

    def test_free_only(self, small_env):
        cov = sample_covariates(small_env, 1000, 1, "free-only")
        assert frac(cov, "case_restriction", "free") == 1.0

    def test_bad_n(self, small_env):
        with pytest.raises(ValueError):
            sample_covariates(small_env, 0, 1)


class TestConfig:
    def test_geometric_profile(self):
        q = np.array(geometric_location_probs())
        assert q.size == 43 and np.all(np.diff(q) > 0)
        assert q[-1] / q[0] == pytest.approx(20.0)
        assert q.sum() == pytest.approx(1.0)

    def test_rejects_bad_probs(self):
        with pytest.raises(ValueError):
            EnvironmentConfig(n_locations=2, location_probs=(0.5, 0.6))
        with pytest.raises(ValueError):
            EnvironmentConfig(n_locations=2, location_probs=(1.0, 0.0))
        with pytest.raises(ValueError):
            EnvironmentConfig(n_locations=1, location_probs=(1.0,))

    def test_digest_depends_on_seed(self, small_env):
        assert small_env.digest(1) != small_env.digest(2)
        assert small_env.digest(1) == EnvironmentConfig(n_fit=3000, rf_trees=20).digest(1)


class TestCausalModel:
    def test_combine_rule(self):
        m = CausalModel(ConstantEffect(0.6), np.array([0.4, 0.2]))
        assert m.prob(np.zeros((1, 8)), [0])[0] == pytest.approx(0.5)

    def test_additive_contrasts(self, causal, small_env):
        X = sample_covariates(small_env, 2, 3)
        P = causal.prob_matrix(X)
        assert P[0, 3] - P[0, 7] == pytest.approx(P[1, 3] - P[1, 7], abs=1e-15)

    def test_range(self, causal, small_env):
        P = causal.prob_matrix(sample_covariates(small_env, 500, 4))
        assert P.min() >= 0 and P.max() <= 1

    def test_location_effect_mean(self):
        # f_L ~ Beta(1, 2): average over locations should centre on 1/3
        env = EnvironmentConfig(n_fit=300, rf_trees=2)
        rng = np.random.default_rng(0)
        means = [rng.beta(*env.beta_params, size=env.n_locations).mean() for _ in range(200)]
        assert abs(np.mean(means) - 1 / 3) < 3 * np.std(means) / np.sqrt(200)

    def test_location_effect_mean_built_models(self, small_env):
        env = EnvironmentConfig(n_fit=300, rf_trees=2)
        means = np.array([build_causal_model(env, s).f_l.mean() for s in range(30)])
        assert abs(means.mean() - 1 / 3) < 3 * means.std(ddof=1) / np.sqrt(means.size)

    def test_deterministic(self, small_env):
        a = build_causal_model(small_env, 3)
        b = build_causal_model(small_env, 3)
        X = sample_covariates(small_env, 100, 0)
        np.testing.assert_array_equal(a.prob_matrix(X), b.prob_matrix(X))

    def test_diagnostics(self, causal):
        assert set(causal.diagnostics) >= {"fit_employment_rate", "fx_constant"}
        assert causal.diagnostics["fx_constant"] is False


class TestHistory:
    def test_constant_model_rate(self, small_env):
        m = CausalModel(ConstantEffect(0.3), np.full(43, 0.3))
        d = sample_history(m, small_env, 200_000, 1).dataset
        assert abs(d.outcomes.mean() - 0.3) < 0.01

    def test_location_frequencies(self, small_env):
        m = CausalModel(ConstantEffect(0.3), np.full(43, 0.3))
        d = sample_history(m, small_env, 200_000, 2).dataset
        freq = np.bincount(d.locations, minlength=43) / d.n
        assert np.max(np.abs(freq - np.array(small_env.location_probs))) < 0.005

    def test_propensities_exact(self, train, small_env):
        assert np.all(train.propensities == np.array(small_env.location_probs))

    def test_same_seed_same_csv(self, causal, small_env):
        a = sample_history(causal, small_env, 200, 9).dataset.to_csv()
        b = sample_history(causal, small_env, 200, 9).dataset.to_csv()
        assert a == b

    def test_free_case_raises_employment(self, causal, small_env):
        any_ = sample_history(causal, small_env, 20_000, 1).dataset.outcomes.mean()
        free = sample_history(causal, small_env, 20_000, 2, "free-only").dataset.outcomes.mean()
        assert free > any_

    def test_per_location_rates(self, causal, small_env):
        d = sample_history(causal, small_env, 200_000, 3).dataset
        rates = [d.outcomes[d.locations == t].mean() for t in range(43)]
        fx = causal.refugee_effect(d.covariates).mean()
        assert abs(np.mean(rates) - (0.5 * fx + 0.5 * causal.f_l.mean())) < 0.05

    def test_regenerate_schemes(self, causal, test_set):
        shuf = regenerate_assignments(causal, test_set, 1, "shuffle")
        assert sorted(shuf.locations) == sorted(test_set.locations)
        red = regenerate_assignments(causal, test_set, 1, "redraw")
        np.testing.assert_array_equal(red.covariates, test_set.covariates)
        with pytest.raises(ValueError):
            regenerate_assignments(causal, test_set, 1, "nope")


class TestTrueValue:
    def test_two_by_two(self):
        m = CausalModel(ConstantEffect(0.0), np.array([0.2, 0.8]))

        class FX:
            def predict(self, X):
                return X[:, 0]
        m = CausalModel(FX(), np.array([0.2, 0.8]))
        X = np.array([[0.1], [0.9]])
        assert true_value(m, X, [0, 1], [1, 1]) == pytest.approx(true_value(m, X, [1, 0], [1, 1]))

    def test_constant(self):
        m = CausalModel(ConstantEffect(0.5), np.full(3, 0.5))
        assert true_value(m, np.zeros((10, 8)), np.arange(10) % 3) == pytest.approx(5.0)

    def test_null_effect_random_matchings(self, causal, small_env):
        rng = np.random.default_rng(0)
        X = sample_covariates(small_env, 50, 1)
        caps_src = rng.integers(0, 5, 50)
        caps = np.bincount(caps_src, minlength=5)
        env5 = CausalModel(causal.f_x, causal.f_l[:5])
        vals = [true_value(env5, X, rng.permutation(caps_src), caps) for _ in range(100)]
        assert np.ptp(vals) < 1e-12 * 50

    def test_rejects_infeasible(self, causal):
        X = np.zeros((2, 8))
        X[:, 0] = 30
        with pytest.raises(ValueError):
            true_value(causal, X, [0, 0], np.ones(43, int))
        with pytest.raises(ValueError):
            true_value(causal, X, [0])
        with pytest.raises(ValueError):
            true_value(causal, X, Matching([0, 99]))
