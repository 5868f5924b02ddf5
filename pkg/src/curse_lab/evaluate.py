"""Policy-value estimators and prediction diagnostics."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .assign import Matching
from .envgen import CausalModel, true_value
from .learners import OutcomeModel, TrainConfig, fit_family
from .seeding import derive_seed
from .tabular import Dataset

log = logging.getLogger(__name__)

METHODS = ("model-based", "bootstrap-model-based", "ipw", "oracle")


@dataclass(frozen=True)
class PolicyEstimate:
    method: str
    count: float
    n: int
    observed_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n <= 0:
            raise ValueError("estimate needs n > 0")

    @property
    def rate(self) -> float:
        return self.count / self.n

    @property
    def pct_change(self) -> float:
        if self.observed_rate == 0:
            return float("nan")
        return 100.0 * (self.rate - self.observed_rate) / self.observed_rate


def _assignment(matching) -> np.ndarray:
    return np.asarray(getattr(matching, "assignment", matching), dtype=np.int64)


def model_based(model: OutcomeModel, matching: Matching, test: Dataset, **metadata) -> PolicyEstimate:
    """Count predicted by the model itself: sum_i beta_hat(X_i, pi(i))."""
    a = _assignment(matching)
    if a.shape != (test.n,):
        raise ValueError("matching and test set disagree on N")
    count = float(np.sum(model.predict(test.covariates, a)))
    return PolicyEstimate("model-based", count, test.n, float(test.outcomes.mean()), metadata)


def _bootstrap_one(train: Dataset, matching, test: Dataset, config: TrainConfig, seed: int,
                   b: int, resample: bool) -> PolicyEstimate:
    rng = np.random.default_rng(derive_seed(seed, "bootstrap-rows", b))
    sample = train.subset(rng.integers(0, train.n, train.n)) if resample else train
    try:
        model = fit_family(sample, config.with_seed(derive_seed(seed, "bootstrap-fit", b)))
    except Exception as exc:
        raise RuntimeError(f"bootstrap {b} failed: {exc}") from exc
    est = model_based(model, matching, test)
    return PolicyEstimate("bootstrap-model-based", est.count, est.n, est.observed_rate,
                          {"bootstrap_index": b, "model_digest": model.digest()})


def bootstrap_model_based(train: Dataset, matching: Matching, test: Dataset, config: TrainConfig,
                          B: int, seed: int, resample: bool = True, threads: int = 1
                          ) -> list[PolicyEstimate]:
    """Score the fixed matching with B models refit on bootstrap resamples of ``train``.

    Results are ordered by bootstrap index whatever the completion order.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    args = [(train, matching, test, config, seed, b, resample) for b in range(B)]
    if threads <= 1:
        return [_bootstrap_one(*a) for a in args]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda a: _bootstrap_one(*a), args))


def ipw(matching: Matching, test: Dataset, self_normalized: bool = False, **metadata) -> PolicyEstimate:
    """Inverse propensity weighted count over records whose proposal equals their logged location.

    ``self_normalized`` rescales by N / sum of the matched weights; it is an
    exploratory variant and labeled as such in the metadata.
    """
    a = _assignment(matching)
    if a.shape != (test.n,):
        raise ValueError("matching and test set disagree on N")
    p = test.logged_propensity()
    if np.any(p <= 0):
        raise ValueError("IPW needs strictly positive propensities")
    hit = a == test.locations
    weights = 1.0 / p[hit]
    count = float(np.sum(test.outcomes[hit] * weights))
    if self_normalized:
        total = weights.sum()
        count = count * test.n / total if total > 0 else 0.0
        metadata = {**metadata, "variant": "self-normalized"}
    return PolicyEstimate("ipw", count, test.n, float(test.outcomes.mean()), metadata)


def oracle(model: CausalModel, matching: Matching, test: Dataset, **metadata) -> PolicyEstimate:
    count = true_value(model, test.covariates, matching)
    return PolicyEstimate("oracle", count, test.n, float(test.outcomes.mean()), metadata)


# -- diagnostics -------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if y.all() or not y.any():
        raise ValueError("ROC needs both classes present")
    return y.astype(bool)


def roc_auc(scores, labels) -> RocCurve:
    """ROC points at every distinct threshold; AUC from the rank-sum statistic."""
    s = np.asarray(scores, dtype=float)
    y = _labels(labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    ranks = rankdata(s)  # ties get average ranks
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last]]
    return RocCurve(fpr, tpr, thresholds, float(auc))


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    mean_predicted: float
    observed_rate: float
    count: int


def calibration_curve(scores, labels, bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; empty bins are left out."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, bins - 1)
    out = []
    for k in range(bins):
        m = idx == k
        c = int(m.sum())
        if c:
            out.append(CalibrationBin(float(edges[k]), float(edges[k + 1]), float(s[m].mean()),
                                      float(y[m].mean()), c))
    return out


# -- aggregation ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    method: str
    n: int
    mean: float
    sd: float
    se: float
    q05: float
    q50: float
    q95: float
    bias: float  # mean minus the oracle mean


def summarize_values(method: str, values, oracle_mean: float) -> Summary:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        nan = float("nan")
        return Summary(method, 0, nan, nan, nan, nan, nan, nan, nan)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    q05, q50, q95 = np.quantile(v, [0.05, 0.5, 0.95])
    mean = float(v.mean())
    return Summary(method, int(v.size), mean, sd, sd / np.sqrt(v.size), float(q05), float(q50),
                   float(q95), mean - oracle_mean)


def histogram(values_by_method: dict[str, list[float]], bins: int = 20):
    """Per-method counts over one shared set of equal-width edges.

    Returns rows (method, bin_lo, bin_hi, count).  When every value is equal
    a single degenerate bin [v, v] holds them all.
    """
    allv = np.concatenate([np.asarray(v, float) for v in values_by_method.values()] or [np.zeros(0)])
    allv = allv[np.isfinite(allv)]
    rows = []
    if allv.size == 0:
        return rows
    lo, hi = float(allv.min()), float(allv.max())
    if lo == hi:
        for method, v in values_by_method.items():
            rows.append((method, lo, hi, int(np.sum(np.asarray(v) == lo))))
        return rows
    edges = np.linspace(lo, hi, bins + 1)
    for method, v in values_by_method.items():
        counts, _ = np.histogram(np.asarray(v, float), bins=edges)
        rows.extend((method, float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins))
    return rows


@dataclass
class EvalReport:
    """Estimates grouped by method; summaries are always recomputed from the raw lists."""

    estimates: dict[str, list[PolicyEstimate]] = field(default_factory=dict)

    def add(self, est: PolicyEstimate) -> None:
        self.estimates.setdefault(est.method, []).append(est)

    def values(self, method: str, attr: str = "pct_change") -> np.ndarray:
        return np.array([getattr(e, attr) for e in self.estimates.get(method, [])])

    def summary(self, attr: str = "pct_change") -> dict[str, Summary]:
        oracle_vals = self.values("oracle", attr)
        oracle_mean = float(oracle_vals.mean()) if oracle_vals.size else float("nan")
        return {m: summarize_values(m, self.values(m, attr), oracle_mean) for m in self.estimates}

    def histogram(self, bins: int = 20, attr: str = "pct_change"):
        return histogram({m: self.values(m, attr) for m in self.estimates}, bins)
