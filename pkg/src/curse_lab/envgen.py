"""Synthetic null-effect refugee matching environment.

Employment probability is additive in a refugee effect and a location effect,

    f(x, t) = 0.5 * f_X(x) + 0.5 * f_L(t),

so once every location is filled to capacity no matching can change the
expected number of employed refugees.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .tabular import CovariateSchema, Dataset, FeatureMap, refugee_schema

log = logging.getLogger(__name__)

AGE_BINS = ((18.0, 30.0, 0.44), (30.0, 40.0, 0.28), (40.0, 50.0, 0.16), (50.0, 60.0, 0.12))

# Categorical marginals, in schema category order.
MARGINALS = {
    "gender": (0.53, 0.47),
    "education": (0.18, 0.39, 0.21, 0.10, 0.12),
    "english": (0.43, 0.57),
    "case_restriction": (0.28, 0.72),
    "origin": (0.23, 0.20, 0.13, 0.11, 0.07) + (26 / 900,) * 9,
    "arrival_year": (4 / 23,) * 5 + (3 / 23,),
    "arrival_month": (6 / 69,) * 9 + (5 / 69,) * 3,
}


def geometric_location_probs(n_locations: int = 43, ratio: float = 20.0) -> tuple[float, ...]:
    """Ascending profile q_t ~ r**t with q_max / q_min == ratio."""
    if n_locations < 2:
        raise ValueError("need at least two locations")
    r = ratio ** (1.0 / (n_locations - 1))
    q = r ** np.arange(n_locations)
    return tuple((q / q.sum()).tolist())


@dataclass(frozen=True)
class EnvironmentConfig:
    schema: CovariateSchema = field(default_factory=refugee_schema)
    age_bins: tuple = AGE_BINS
    marginals: dict = field(default_factory=lambda: dict(MARGINALS))
    n_locations: int = 43
    location_probs: tuple = field(default_factory=geometric_location_probs)
    beta_params: tuple = (1.0, 2.0)
    free_case_boost: float = 1.0
    coef_scale: float = 1.0
    intercept: float = -1.5
    n_fit: int = 40_000
    rf_trees: int = 200
    rf_max_depth: int = 8
    rf_min_leaf: int = 25
    fx_clip: tuple = (0.02, 0.98)

    def __post_init__(self):
        probs = np.asarray(self.location_probs, dtype=float)
        if self.n_locations < 2:
            raise ValueError("n_locations must be >= 2")
        if probs.shape != (self.n_locations,):
            raise ValueError("location_probs must have length n_locations")
        if not np.all(probs > 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("location_probs must be strictly positive and sum to 1")
        if abs(sum(p for _, _, p in self.age_bins) - 1.0) > 1e-9:
            raise ValueError("age bin probabilities must sum to 1")
        for cov in self.schema:
            if cov.kind == "numeric":
                continue
            p = self.marginals.get(cov.name)
            if p is None or len(p) != len(cov.categories):
                raise ValueError(f"missing or malformed marginal for {cov.name!r}")
            if abs(sum(p) - 1.0) > 1e-9 or min(p) < 0:
                raise ValueError(f"marginal for {cov.name!r} is not a distribution")
        if not self.fx_clip[0] < self.fx_clip[1]:
            raise ValueError("fx_clip must be an increasing pair")

    def with_locations(self, n_locations: int, location_probs=None) -> "EnvironmentConfig":
        probs = location_probs or geometric_location_probs(n_locations)
        return replace(self, n_locations=n_locations, location_probs=tuple(probs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = self.schema.to_dict()
        return d

    def digest(self, seed: int) -> str:
        payload = json.dumps({"config": self.to_dict(), "seed": int(seed)}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def sample_covariates(config: EnvironmentConfig, n: int, seed: int | np.random.Generator,
                      restriction: str = "any") -> np.ndarray:
    """Draw ``n`` covariate rows independently from the configured marginals.

    ``restriction="free-only"`` forces case_restriction to "free".
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if restriction not in ("any", "free-only"):
        raise ValueError(f"unknown restriction {restriction!r}")
    rng = np.random.default_rng(seed)
    schema = config.schema
    out = np.zeros((n, len(schema)))
    for j, cov in enumerate(schema):
        if cov.kind == "numeric":
            lo = np.array([b[0] for b in config.age_bins])
            hi = np.array([b[1] for b in config.age_bins])
            p = np.array([b[2] for b in config.age_bins])
            k = rng.choice(len(p), size=n, p=p / p.sum())
            out[:, j] = rng.uniform(lo[k], hi[k])
        else:
            p = np.asarray(config.marginals[cov.name], dtype=float)
            out[:, j] = rng.choice(len(p), size=n, p=p / p.sum())
    if restriction == "free-only":
        out[:, schema.index("case_restriction")] = schema["case_restriction"].categories.index("free")
    return out


class ConstantEffect:
    """Refugee effect that ignores covariates."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(covariates).shape[0], self.value)


class ForestEffect:
    """Random-forest refugee effect clipped into ``clip``."""

    def __init__(self, forest: RandomForestRegressor, fmap: FeatureMap, clip: tuple):
        self.forest = forest
        self.fmap = fmap
        self.clip = clip

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        z = self.fmap.encode_many(covariates)
        return np.clip(self.forest.predict(z), *self.clip)


@dataclass(eq=False)
class CausalModel:
    f_x: object  # anything with predict(covariates) -> array in [0, 1]
    f_l: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f_l = np.asarray(self.f_l, dtype=float)
        if np.any((self.f_l < 0) | (self.f_l > 1)):
            raise ValueError("location effects must lie in [0, 1]")

    @property
    def n_locations(self) -> int:
        return self.f_l.shape[0]

    def refugee_effect(self, covariates: np.ndarray) -> np.ndarray:
        return np.asarray(self.f_x.predict(covariates), dtype=float)

    def prob(self, covariates: np.ndarray, locations) -> np.ndarray:
        locations = np.asarray(locations, dtype=np.int64)
        return 0.5 * self.refugee_effect(covariates) + 0.5 * self.f_l[locations]

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        """N x L matrix of f(X_i, t)."""
        fx = self.refugee_effect(covariates)
        return 0.5 * fx[:, None] + 0.5 * self.f_l[None, :]


def build_causal_model(config: EnvironmentConfig, seed: int) -> CausalModel:
    rng = np.random.default_rng(seed)
    L = config.n_locations
    fit_cov = sample_covariates(config, config.n_fit, rng)
    fit_loc = rng.choice(L, size=config.n_fit, p=np.asarray(config.location_probs))

    # random logit over covariates and locations, free cases pushed up
    fmap = FeatureMap.fit(config.schema, L, "covariates+location", fit_cov)
    coef = rng.normal(0.0, config.coef_scale, size=fmap.dimension)
    free_col = fmap.feature_names().index("case_restriction=free")
    coef[free_col] = config.free_case_boost
    logits = config.intercept + fmap.encode_many(fit_cov, fit_loc) @ coef
    y = rng.random(config.n_fit) < 1.0 / (1.0 + np.exp(-logits))

    cov_map = FeatureMap.fit(config.schema, L, "covariates", standardize=False)
    forest = RandomForestRegressor(
        n_estimators=config.rf_trees,
        max_depth=config.rf_max_depth,
        min_samples_leaf=config.rf_min_leaf,
        max_features="sqrt",
        random_state=int(rng.integers(2**31 - 1)),
        n_jobs=1,
    )
    forest.fit(cov_map.encode_many(fit_cov), y.astype(float))
    f_x = ForestEffect(forest, cov_map, tuple(config.fx_clip))

    f_l = rng.beta(*config.beta_params, size=L)
    fx_fit = f_x.predict(fit_cov)
    diagnostics = {
        "fit_employment_rate": float(y.mean()),
        "fx_mean": float(fx_fit.mean()),
        "fx_sd": float(fx_fit.std()),
        "fx_constant": bool(np.ptp(fx_fit) == 0.0),
    }
    if diagnostics["fx_constant"]:
        log.warning("refugee effect is constant over the fitting sample")
    return CausalModel(f_x, f_l, diagnostics)


@dataclass(frozen=True, eq=False)
class HistoricalSample:
    dataset: Dataset
    env_seed: int | None
    sample_seed: int


def sample_history(model: CausalModel, config: EnvironmentConfig, n: int, seed: int,
                   restriction: str = "any", env_seed: int | None = None) -> HistoricalSample:
    """Random-assignment history: T_i ~ location_probs, Y_i ~ Bernoulli(f(X_i, T_i))."""
    rng = np.random.default_rng(seed)
    cov = sample_covariates(config, n, rng, restriction)
    probs = np.asarray(config.location_probs, dtype=float)
    loc = rng.choice(config.n_locations, size=n, p=probs)
    y = (rng.random(n) < model.prob(cov, loc)).astype(np.int64)
    prop = np.broadcast_to(probs, (n, config.n_locations))
    return HistoricalSample(Dataset(config.schema, cov, loc, y, prop), env_seed, seed)


def regenerate_assignments(model: CausalModel, dataset: Dataset, seed, scheme: str = "redraw") -> Dataset:
    """Fresh logged locations and outcomes for fixed covariates.

    ``redraw`` samples locations from each record's propensity vector;
    ``shuffle`` permutes the observed locations (location counts preserved).
    """
    rng = np.random.default_rng(seed)
    n, L = dataset.n, dataset.n_locations
    if scheme == "redraw":
        cdf = np.cumsum(dataset.propensities, axis=1)
        u = rng.random(n)[:, None]
        loc = np.minimum((u >= cdf).sum(axis=1), L - 1)
    elif scheme == "shuffle":
        loc = rng.permutation(dataset.locations)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    y = (rng.random(n) < model.prob(dataset.covariates, loc)).astype(np.int64)
    return Dataset(dataset.schema, dataset.covariates, loc, y, dataset.propensities)


def true_value(model: CausalModel, covariates: np.ndarray, matching, capacities=None) -> float:
    """Expected employment count sum_i f(X_i, pi(i)) under the ground truth."""
    assignment = np.asarray(getattr(matching, "assignment", matching), dtype=np.int64)
    covariates = np.atleast_2d(covariates)
    if assignment.shape != (covariates.shape[0],):
        raise ValueError("matching must assign every refugee exactly once")
    if np.any((assignment < 0) | (assignment >= model.n_locations)):
        raise ValueError("matching uses an unknown location")
    if capacities is not None:
        loads = np.bincount(assignment, minlength=model.n_locations)
        if np.any(loads > np.asarray(capacities)):
            raise ValueError("matching exceeds location capacities")
    return float(np.sum(model.prob(covariates, assignment)))
