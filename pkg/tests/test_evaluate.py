import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import expit, logit

from curse_lab.assign import AssignmentInstance, Matching, capacities_from_observed, solve
from curse_lab.envgen import regenerate_assignments, true_value
from curse_lab.evaluate import (EvalReport, PolicyEstimate, bootstrap_model_based, calibration_curve,
                                histogram, ipw, model_based, oracle, roc_auc, summarize_values)
from curse_lab.expt import OracleModel
from curse_lab.learners import OutcomeModel, TrainConfig, fit_family
from curse_lab.tabular import Covariate, CovariateSchema, Dataset

SCHEMA = CovariateSchema((Covariate("x", "categorical", ("a", "b")),))


class Constant(OutcomeModel):
    family = "constant"

    def __init__(self, v):
        super().__init__()
        self.v = v

    def predict(self, covariates, locations):
        return np.full(np.atleast_2d(covariates).shape[0], self.v)


def toy(loc, y, L=2, p=None):
    n = len(loc)
    prop = np.full((n, L), 1.0 / L) if p is None else p
    return Dataset(SCHEMA, np.zeros((n, 1)), loc, y, prop)


@pytest.fixture(scope="module")
def oracle_matching(causal, test_set):
    caps = capacities_from_observed(test_set.locations, 43)
    return solve(AssignmentInstance(causal.prob_matrix(test_set.covariates), caps))[0]


class TestModelBased:
    def test_constant(self):
        d = toy(np.zeros(1000, int), np.r_[np.ones(400, int), np.zeros(600, int)])
        est = model_based(Constant(0.5), np.zeros(1000, int), d)
        assert est.count == 500.0 and est.rate == 0.5
        assert est.pct_change == pytest.approx(25.0)

    def test_oracle_self_consistency(self, causal, test_set, rng):
        for _ in range(5):
            a = rng.permutation(test_set.locations)
            mb = model_based(OracleModel(causal), a, test_set).count
            assert mb == oracle(causal, a, test_set).count
            assert mb == true_value(causal, test_set.covariates, a)

    def test_plugin_optimality(self, train, test_set, rng):
        model = fit_family(train, TrainConfig.for_family("gbm", trees=10))
        caps = capacities_from_observed(test_set.locations, 43)
        m, _ = solve(AssignmentInstance(model.predict_matrix(test_set.covariates), caps))
        best = model_based(model, m, test_set).count
        for _ in range(50):
            other = model_based(model, rng.permutation(test_set.locations), test_set).count
            assert best >= other - 1e-9

    def test_length_mismatch(self, test_set):
        with pytest.raises(ValueError):
            model_based(Constant(0.5), np.zeros(3, int), test_set)


class TestBootstrap:
    def test_identity_hook(self, train, test_set, oracle_matching):
        cfg = TrainConfig.for_family("gbm", trees=10, seed=3)
        est = bootstrap_model_based(train, oracle_matching, test_set, cfg, B=1, seed=4, resample=False)[0]
        from curse_lab.seeding import derive_seed
        refit = fit_family(train, cfg.with_seed(derive_seed(4, "bootstrap-fit", 0)))
        assert est.count == model_based(refit, oracle_matching, test_set).count
        assert est.metadata["bootstrap_index"] == 0

    def test_constant_outcomes(self, test_set, oracle_matching, small_env):
        n = 600
        flat = Dataset(test_set.schema, test_set.covariates[np.arange(n) % test_set.n],
                       np.arange(n) % 43, np.ones(n, int), np.tile(small_env.location_probs, (n, 1)))
        ests = bootstrap_model_based(flat, oracle_matching, test_set,
                                     TrainConfig.for_family("gbm", trees=5), B=4, seed=0)
        assert len({e.count for e in ests}) == 1

    def test_thread_order(self, train, test_set, oracle_matching):
        cfg = TrainConfig.for_family("honest-rf", trees=5)
        a = bootstrap_model_based(train, oracle_matching, test_set, cfg, B=4, seed=1, threads=1)
        b = bootstrap_model_based(train, oracle_matching, test_set, cfg, B=4, seed=1, threads=3)
        assert [e.count for e in a] == [e.count for e in b]
        assert [e.metadata["bootstrap_index"] for e in b] == [0, 1, 2, 3]

    def test_failure_names_index(self, train, test_set, oracle_matching):
        with pytest.raises(RuntimeError, match="bootstrap 0"):
            bootstrap_model_based(train, oracle_matching, test_set, TrainConfig(family="ols"), B=1, seed=0)

    def test_rejects_zero(self, train, test_set, oracle_matching):
        with pytest.raises(ValueError):
            bootstrap_model_based(train, oracle_matching, test_set, TrainConfig.for_family("gbm"), 0, 0)


class TestIPW:
    def test_direct_substitution(self):
        est = ipw(Matching([0, 1]), toy([0, 1], [1, 0]))
        assert est.count == pytest.approx(2.0)

    def test_disagreement(self):
        assert ipw(Matching([1, 0]), toy([0, 1], [1, 1])).count == 0.0

    def test_zero_variance(self, rng):
        # one location, p = 1: the estimate is the realized count with no weighting noise
        for _ in range(5):
            y = rng.integers(0, 2, 50)
            d = toy(np.zeros(50, int), y, L=1)
            assert ipw(np.zeros(50, int), d).count == float(y.sum())

    def test_unbiased(self, causal, test_set, oracle_matching):
        truth = oracle(causal, oracle_matching, test_set).count
        vals = np.array([ipw(oracle_matching, regenerate_assignments(causal, test_set, s)).count
                         for s in range(500)])
        assert abs(vals.mean() - truth) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)

    def test_self_normalized_flag(self, test_set, oracle_matching):
        est = ipw(oracle_matching, test_set, self_normalized=True)
        assert est.metadata["variant"] == "self-normalized"


class TestPolicyEstimate:
    def test_pct_change_reconstruction(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 2000))
            est = PolicyEstimate("ipw", float(rng.uniform(0, n)), n, float(rng.uniform(0.01, 1)))
            assert abs(est.pct_change - 100 * (est.count / n - est.observed_rate) / est.observed_rate) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            PolicyEstimate("magic", 1, 1, 0.5)
        with pytest.raises(ValueError):
            PolicyEstimate("ipw", 1, 0, 0.5)
        assert np.isnan(PolicyEstimate("ipw", 1, 2, 0.0).pct_change)


class TestROC:
    def test_perfect(self):
        r = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert r.auc == 1.0
        assert r.fpr[0] == 0 and r.tpr[-1] == 1 and r.fpr[-1] == 1

    def test_chance(self, rng):
        assert abs(roc_auc(rng.uniform(size=10_000), rng.integers(0, 2, 10_000)).auc - 0.5) < 0.02

    def test_ties_averaged(self):
        assert roc_auc([0.5, 0.5], [1, 0]).auc == 0.5

    def test_matches_trapezoid(self, rng):
        s = rng.integers(0, 20, 500) / 20
        y = (rng.uniform(size=500) < s).astype(int)
        r = roc_auc(s, y)
        assert r.auc == pytest.approx(trapezoid(r.tpr, r.fpr), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])


class TestCalibration:
    def test_ground_truth(self, rng):
        f = rng.uniform(0.05, 0.95, 200_000)
        y = rng.uniform(size=f.size) < f
        assert max(abs(b.observed_rate - b.mean_predicted) for b in calibration_curve(f, y)) < 0.03

    def test_constant(self, rng):
        y = rng.uniform(size=20_000) < 0.3
        bins = calibration_curve(np.full(20_000, 0.3), y)
        assert len(bins) == 1
        assert bins[0].mean_predicted == pytest.approx(0.3)
        assert bins[0].observed_rate == pytest.approx(0.3, abs=0.02)
        assert bins[0].count == 20_000

    def test_miscalibrated_s_curve(self, rng):
        f = rng.uniform(0.02, 0.98, 100_000)
        y = rng.uniform(size=f.size) < f
        bins = calibration_curve(expit(2 * logit(f)), y)
        gaps = np.array([b.mean_predicted - b.observed_rate for b in bins])
        mids = np.array([b.mean_predicted for b in bins])
        assert np.abs(gaps).max() > 0.05
        assert np.all(gaps[mids < 0.4] < 0) and np.all(gaps[mids > 0.6] > 0)

    def test_bins(self):
        with pytest.raises(ValueError):
            calibration_curve([0.1], [1], bins=1)
        assert sum(b.count for b in calibration_curve([0.0, 0.5, 1.0], [0, 1, 1], bins=4)) == 3


class TestAggregation:
    def test_histogram_sums(self, rng):
        data = {"a": rng.normal(size=37), "b": rng.normal(size=11) + 3}
        rows = histogram(data, bins=7)
        for m, v in data.items():
            assert sum(r[3] for r in rows if r[0] == m) == v.size
        assert len({(r[1], r[2]) for r in rows}) == 7

    def test_degenerate(self):
        rows = histogram({"x": [2.5]}, bins=10)
        assert rows == [("x", 2.5, 2.5, 1)]

    def test_summary(self):
        s = summarize_values("ipw", [1.0, 2.0, 3.0], 1.0)
        assert (s.n, s.mean, s.sd, s.bias) == (3, 2.0, 1.0, 1.0)

    def test_report_recomputes(self):
        rep = EvalReport()
        for c in (40, 50, 60):
            rep.add(PolicyEstimate("oracle", c, 100, 0.5))
            rep.add(PolicyEstimate("model-based", c + 10, 100, 0.5))
        s = rep.summary()
        assert s["oracle"].bias == 0.0
        assert s["model-based"].bias == pytest.approx(20.0)
        assert sum(r[3] for r in rep.histogram(5)) == 6
