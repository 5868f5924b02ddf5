"""End-to-end simulation protocol, configuration and report writers.

One run builds a single causal world and training history, fits each learner
family once (or once per replication with ``refit_per_rep``), then for every
replication draws a free-case test set, matches it under the fitted model at
the observed capacities and records model-based, IPW and oracle estimates.
Replication 0 additionally gets B bootstrap refits and B regenerated-outcome
IPW draws against its fixed matching.

Seed tree (all via :func:`derive_seed` from ``master_seed``)::

    env                       causal model
    train                     training history
    test/k                    replication k's test set
    fit/<family>[/k]          learner fit (per replication under refit_per_rep)
    bootstrap/<family>        bootstrap resamples and refits
    ipw-draw/<family>/d       regenerated logged locations and outcomes
    holdout                   labeled diagnostics sample
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .assign import AssignmentInstance, Matching, capacities_from_observed, solve
from .envgen import (CausalModel, EnvironmentConfig, build_causal_model, geometric_location_probs,
                     regenerate_assignments, sample_history)
from .evaluate import (PolicyEstimate, bootstrap_model_based, calibration_curve, histogram, ipw,
                       model_based, oracle, roc_auc, summarize_values)
from .learners import OutcomeModel, TrainConfig, fit_family
from .seeding import derive_seed
from .tabular import Dataset

log = logging.getLogger(__name__)

RUN_FAMILIES = ("lasso-logit", "honest-rf", "gbm", "oracle")
ESTIMATE_HEADER = ("family", "replication", "method", "bootstrap_index", "count", "rate", "pct_change")
HISTOGRAM_HEADER = ("family", "panel", "method", "bin_lo", "bin_hi", "count")
SUMMARY_HEADER = ("family", "panel", "method", "n", "mean", "sd", "se", "q05", "q50", "q95", "bias")


class OracleModel(OutcomeModel):
    """Ground truth dressed as a fitted model (test hook: beta_hat := f)."""

    family = "oracle"

    def __init__(self, causal: CausalModel):
        super().__init__()
        self.causal = causal

    @property
    def n_locations(self) -> int:
        return self.causal.n_locations

    def predict(self, covariates, locations):
        return self.causal.prob(np.atleast_2d(covariates), locations)

    def predict_matrix(self, covariates, n_locations=None):
        return self.causal.prob_matrix(np.atleast_2d(covariates))

    def _payload(self) -> dict:
        return {"f_l": self.causal.f_l.tolist()}


# -- configuration ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    env: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    n_train: int = 8_000
    n_test: int = 500
    replications: int = 50
    bootstraps: int = 50
    ipw_draws: int | None = None  # None -> same as bootstraps
    families: tuple = ("lasso-logit", "honest-rf", "gbm")
    learners: dict = field(default_factory=dict)  # family -> TrainConfig overrides
    master_seed: int = 0
    threads: int = 1
    refit_per_rep: bool = False
    ipw_scheme: str = "redraw"
    bins: int = 20
    n_holdout: int = 5_000

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.replications, self.threads, self.bins,
               self.n_holdout) < 1:
            raise ValueError("counts must be positive")
        if self.bootstraps < 0 or (self.ipw_draws is not None and self.ipw_draws < 0):
            raise ValueError("bootstrap and IPW-draw counts must be nonnegative")
        for f in self.families:
            if f not in RUN_FAMILIES:
                raise ValueError(f"unknown family {f!r}; expected one of {RUN_FAMILIES}")
        if self.ipw_scheme not in ("redraw", "shuffle"):
            raise ValueError("ipw_scheme must be redraw or shuffle")

    @property
    def n_ipw_draws(self) -> int:
        return self.bootstraps if self.ipw_draws is None else self.ipw_draws

    def train_config(self, family: str) -> TrainConfig:
        return TrainConfig.for_family(family, **self.learners.get(family, {}))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "env"}
        d["env"] = self.env.to_dict()
        d["families"] = list(self.families)
        d["learners"] = {k: dict(v) for k, v in self.learners.items()}
        return d


SMOKE_ENV = dict(n_fit=4_000, rf_trees=20)
PRESETS = {
    "smoke": dict(n_train=2_000, n_test=200, replications=3, bootstraps=2, n_holdout=1_000,
                  learners={"honest-rf": {"trees": 20}, "gbm": {"trees": 30}}),
    "desk": dict(n_train=8_000, n_test=500, replications=50, bootstraps=50),
    "full": dict(n_train=33_000, n_test=1_000, replications=250, bootstraps=250),
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    params = dict(PRESETS[name])
    if name == "smoke":
        params["env"] = EnvironmentConfig(**SMOKE_ENV)
    params.update(overrides)
    return RunConfig(**params)


_ENV_KEYS = {"n_locations": int, "location_ratio": float, "free_case_boost": float,
             "coef_scale": float, "intercept": float, "n_fit": int, "rf_trees": int,
             "rf_max_depth": int, "rf_min_leaf": int, "beta_a": float, "beta_b": float}
_RUN_KEYS = {"preset": str, "n_train": int, "n_test": int, "replications": int, "bootstraps": int,
             "ipw_draws": int, "families": str, "seed": int, "threads": int,
             "refit_per_rep": bool, "ipw_scheme": str, "bins": int, "n_holdout": int}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig) if f.name not in ("family", "seed")}


def _cast(parser, section, key, kind):
    if kind is bool:
        return parser.getboolean(section, key)
    raw = parser.get(section, key)
    if kind in (int, "int"):
        return int(raw)
    if kind is str:
        return raw.strip()
    if "int" in str(kind) and "float" not in str(kind):
        return None if raw.strip().lower() == "none" else int(raw)
    return None if raw.strip().lower() == "none" else float(raw)


def load_config(path_or_text, from_text: bool = False, preset_name: str | None = None) -> RunConfig:
    """Parse an INI file with sections [env], [learners.<family>] and [run].

    Unknown sections or keys are errors.
    """
    parser = configparser.ConfigParser()
    if from_text:
        parser.read_string(path_or_text)
    else:
        with open(path_or_text) as fh:
            parser.read_file(fh)
    run, env, learners = {}, {}, {}
    for section in parser.sections():
        if section == "run":
            table, out = _RUN_KEYS, run
        elif section == "env":
            table, out = _ENV_KEYS, env
        elif section.startswith("learners."):
            family = section.split(".", 1)[1]
            if family not in RUN_FAMILIES or family == "oracle":
                raise ValueError(f"unknown learner section [{section}]")
            table, out = _TRAIN_KEYS, learners.setdefault(family, {})
        else:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in table:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            out[key] = _cast(parser, section, key, table[key])
    file_preset = run.pop("preset", "desk")
    base = preset(preset_name or file_preset)
    env_cfg = base.env
    if env:
        L = env.pop("n_locations", env_cfg.n_locations)
        ratio = env.pop("location_ratio", 20.0)
        a, b = env.pop("beta_a", env_cfg.beta_params[0]), env.pop("beta_b", env_cfg.beta_params[1])
        env_cfg = replace(env_cfg, n_locations=L, location_probs=geometric_location_probs(L, ratio),
                          beta_params=(a, b), **env)
    overrides = {"env": env_cfg}
    if "seed" in run:
        overrides["master_seed"] = run.pop("seed")
    if "families" in run:
        overrides["families"] = tuple(s.strip() for s in run.pop("families").split(",") if s.strip())
    overrides.update(run)
    merged = {k: dict(v) for k, v in base.learners.items()}
    for fam, kv in learners.items():
        merged.setdefault(fam, {}).update(kv)
    overrides["learners"] = merged
    for fam, kv in merged.items():
        TrainConfig.for_family(fam, **kv)  # validate early
    return replace(base, **overrides)


# -- protocol -------------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateRow:
    family: str
    replication: int
    method: str
    bootstrap_index: int | None
    count: float
    rate: float
    pct_change: float

    @classmethod
    def of(cls, family: str, rep: int, est: PolicyEstimate, b: int | None = None) -> "EstimateRow":
        return cls(family, rep, est.method, b, est.count, est.rate, est.pct_change)


@dataclass
class ReplicationRecord:
    family: str
    replication: int
    model_digest: str
    matching_digest: str
    observed_rate: float


@dataclass
class RunResult:
    config: RunConfig
    rows: list = field(default_factory=list)
    replications: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    env_digest: str = ""
    env_diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)  # in-memory only
    causal: CausalModel | None = None
    train: Dataset | None = None

    def estimates(self, family: str, method: str, bootstrap: bool = False) -> list[EstimateRow]:
        return [r for r in self.rows if r.family == family and r.method == method
                and ((r.bootstrap_index is not None) == bootstrap)]

    def values(self, family: str, method: str, bootstrap: bool = False, attr: str = "pct_change"):
        return np.array([getattr(r, attr) for r in self.estimates(family, method, bootstrap)])


def matching_digest(matching: Matching) -> str:
    return hashlib.sha256(matching.assignment.astype("<i8").tobytes()).hexdigest()[:16]


def fit_learner(family: str, train: Dataset, config: RunConfig, causal: CausalModel, seed: int
                ) -> OutcomeModel:
    if family == "oracle":
        return OracleModel(causal)
    return fit_family(train, config.train_config(family).with_seed(seed))


def match(model: OutcomeModel, test: Dataset) -> Matching:
    caps = capacities_from_observed(test.locations, test.n_locations)
    matching, _ = solve(AssignmentInstance(model.predict_matrix(test.covariates), caps))
    return matching


def _replication(config: RunConfig, family: str, k: int, model: OutcomeModel, digest: str, causal,
                 train, test):
    if config.refit_per_rep:
        model = fit_learner(family, train, config, causal, derive_seed(config.master_seed, "fit", family, k))
        digest = model.digest()
    matching = match(model, test)
    ests = [model_based(model, matching, test), ipw(matching, test), oracle(causal, matching, test)]
    rows = [EstimateRow.of(family, k, e) for e in ests]
    rec = ReplicationRecord(family, k, digest, matching_digest(matching),
                            float(test.outcomes.mean()))
    return rows, rec, model, matching


def _bootstrap_config(model: OutcomeModel, config: RunConfig, family: str) -> TrainConfig:
    tc = config.train_config(family)
    # refits reuse the penalty chosen on the full sample
    if family == "lasso-logit" and tc.lam is None:
        tc = replace(tc, lam=model.lam)
    return tc


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def run_protocol(config: RunConfig) -> RunResult:
    seed = config.master_seed
    result = RunResult(config)
    t0 = time.perf_counter()
    causal = build_causal_model(config.env, derive_seed(seed, "env"))
    train = sample_history(causal, config.env, config.n_train, derive_seed(seed, "train")).dataset
    tests = [sample_history(causal, config.env, config.n_test, derive_seed(seed, "test", k),
                            restriction="free-only").dataset for k in range(config.replications)]
    result.causal, result.train = causal, train
    result.env_digest = config.env.digest(derive_seed(seed, "env"))
    result.env_diagnostics = dict(causal.diagnostics)
    result.timings["environment"] = time.perf_counter() - t0

    for family in config.families:
        t1 = time.perf_counter()
        model = fit_learner(family, train, config, causal, derive_seed(seed, "fit", family))
        result.models[family] = model
        digest = model.digest()

        def one(k, family=family, model=model, digest=digest):
            try:
                return _replication(config, family, k, model, digest, causal, train, tests[k])
            except Exception as exc:  # keep going; report what completed
                log.error("%s replication %d failed: %s", family, k, exc)
                return exc

        outcomes = _map(one, range(config.replications), config.threads)
        first = None
        for k, out in enumerate(outcomes):
            if isinstance(out, Exception):
                result.failures.append({"family": family, "replication": k, "reason": repr(out)})
                continue
            rows, rec, fitted, matching = out
            result.rows.extend(rows)
            result.replications.append(rec)
            if k == 0:
                first = (fitted, matching)
        if first is not None:
            fitted, matching = first
            test0 = tests[0]
            if config.bootstraps and family != "oracle":
                boot = bootstrap_model_based(train, matching, test0,
                                             _bootstrap_config(fitted, config, family),
                                             config.bootstraps, derive_seed(seed, "bootstrap", family),
                                             threads=config.threads)
                result.rows.extend(EstimateRow.of(family, 0, e, b) for b, e in enumerate(boot))

            def draw(d, family=family, matching=matching):
                regen = regenerate_assignments(causal, test0, derive_seed(seed, "ipw-draw", family, d),
                                               config.ipw_scheme)
                return ipw(matching, regen)

            draws = _map(draw, range(config.n_ipw_draws), config.threads)
            result.rows.extend(EstimateRow.of(family, 0, e, d) for d, e in enumerate(draws))
        result.timings[family] = time.perf_counter() - t1
    result.timings["total"] = time.perf_counter() - t0
    return result


# -- reporting ------------------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def estimates_csv(result: RunResult, path=None) -> str:
    rows = sorted(result.rows, key=lambda r: (result.config.families.index(r.family), r.replication,
                                              r.bootstrap_index is not None, r.method,
                                              -1 if r.bootstrap_index is None else r.bootstrap_index))
    return _write_csv(path, ESTIMATE_HEADER,
                      [(r.family, r.replication, r.method, r.bootstrap_index, r.count, r.rate,
                        r.pct_change) for r in rows])


def panels(result: RunResult, family: str) -> dict[str, dict[str, np.ndarray]]:
    """Direct panel: per-replication estimates.  Bootstrap panel: replication 0's resamples."""
    direct = {m: result.values(family, m) for m in ("model-based", "ipw", "oracle")}
    boot = {m: result.values(family, m, bootstrap=True) for m in ("bootstrap-model-based", "ipw")}
    out = {"direct": direct}
    if any(v.size for v in boot.values()):
        boot["oracle"] = result.values(family, "oracle")[:1]
        out["bootstrap"] = {m: v for m, v in boot.items() if v.size}
    return out


def summarize(result: RunResult, bins: int | None = None):
    """Summary rows and histogram rows for every family and panel."""
    bins = bins or result.config.bins
    summary_rows, hist_rows = [], []
    for family in result.config.families:
        for panel, vals in panels(result, family).items():
            if not any(v.size for v in vals.values()):
                continue
            oracle_mean = float(vals["oracle"].mean()) if vals.get("oracle", np.zeros(0)).size else float("nan")
            for method, v in vals.items():
                s = summarize_values(method, v, oracle_mean)
                summary_rows.append((family, panel, method, s.n, s.mean, s.sd, s.se, s.q05, s.q50,
                                     s.q95, s.bias))
            hist_rows.extend((family, panel, *row) for row in histogram(vals, bins))
    return summary_rows, hist_rows


def diagnostics(result: RunResult, holdout: Dataset | None = None, bins: int = 10) -> dict:
    """ROC and calibration data per fitted family on a labeled held-out sample."""
    cfg = result.config
    if holdout is None:
        holdout = sample_history(result.causal, cfg.env, cfg.n_holdout,
                                 derive_seed(cfg.master_seed, "holdout")).dataset
    out = {}
    for family, model in result.models.items():
        scores = model.predict(holdout.covariates, holdout.locations)
        roc = roc_auc(scores, holdout.outcomes)
        out[family] = {"roc": roc, "calibration": calibration_curve(scores, holdout.outcomes, bins)}
    truth = result.causal.prob(holdout.covariates, holdout.locations)
    out["ground-truth"] = {"roc": roc_auc(truth, holdout.outcomes),
                           "calibration": calibration_curve(truth, holdout.outcomes, bins)}
    return out


def write_diagnostics(diag: dict, out_dir) -> None:
    d = Path(out_dir) / "diagnostics"
    auc_rows = []
    for family, res in diag.items():
        roc = res["roc"]
        auc_rows.append((family, roc.auc))
        _write_csv(d / f"roc_{family}.csv", ("threshold", "fpr", "tpr"),
                   zip(roc.thresholds, roc.fpr, roc.tpr))
        _write_csv(d / f"calibration_{family}.csv",
                   ("bin_lo", "bin_hi", "mean_predicted", "observed_rate", "count"),
                   [(b.lo, b.hi, b.mean_predicted, b.observed_rate, b.count) for b in res["calibration"]])
    _write_csv(d / "auc.csv", ("family", "auc"), auc_rows)


def _versions() -> dict:
    import numba
    import scipy
    import sklearn
    return {"curse_lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "numba": numba.__version__}


def run_manifest(result: RunResult) -> dict:
    return {
        "config": result.config.to_dict(),
        "env_digest": result.env_digest,
        "env_diagnostics": result.env_diagnostics,
        "models": {r.family: r.model_digest for r in result.replications if r.replication == 0},
        "replications": [asdict(r) for r in result.replications],
        "failures": result.failures,
        "versions": _versions(),
        "timings_seconds": {k: round(v, 3) for k, v in result.timings.items()},
    }


def write_outputs(result: RunResult, out_dir, with_diagnostics: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    estimates_csv(result, out / "estimates.csv")
    summary_rows, hist_rows = summarize(result)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summary_rows)
    _write_csv(out / "histograms.csv", HISTOGRAM_HEADER, hist_rows)
    if with_diagnostics:
        write_diagnostics(diagnostics(result), out)
    manifest = run_manifest(result)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def read_estimates(path) -> list[EstimateRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [EstimateRow(r["family"], int(r["replication"]), r["method"],
                            int(r["bootstrap_index"]) if r["bootstrap_index"] else None,
                            float(r["count"]), float(r["rate"]), float(r["pct_change"]))
                for r in reader]
