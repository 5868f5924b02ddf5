"""Shared outcome-model interface, training configuration and serialization."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ..tabular import FeatureMap, RefugeeRecord

FORMAT_VERSION = 1
FAMILIES = ("ols", "ridge", "lasso-logit", "honest-rf", "gbm")
PROB_CLIP = 1e-6

_FAMILY_DEFAULTS = {
    "lasso-logit": dict(cv_folds=5),
    "honest-rf": dict(trees=200, min_leaf=5, honesty_fraction=0.5, max_depth=12),
    "gbm": dict(trees=150, max_depth=3, learning_rate=0.1, min_leaf=5),
}


@dataclass(frozen=True)
class TrainConfig:
    family: str
    lam: float | None = None  # ridge/lasso penalty; lasso picks it by CV when None
    cv_folds: int = 5
    n_lambdas: int = 30
    lambda_decades: float = 4.0
    tol: float = 1e-7
    max_sweeps: int = 10_000
    trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    honesty_fraction: float = 0.5
    mtry: int | None = None  # features tried per split; None = family default
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if min(self.cv_folds, self.trees, self.min_leaf, self.n_lambdas) < 1 or self.max_depth < 0:
            raise ValueError("counts must be positive")
        if self.cv_folds < 2 and self.family == "lasso-logit" and self.lam is None:
            raise ValueError("cross-validation needs cv_folds >= 2")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ValueError("honesty_fraction must lie in (0, 1)")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        params = dict(_FAMILY_DEFAULTS.get(family, {}))
        params.update(overrides)
        return cls(family=family, **params)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def default_mtry(m: int, family: str) -> int:
    if family == "honest-rf":
        return max(1, m // 3)
    return m


class OutcomeModel:
    """Fitted predictor of E[Y(t) | X] over (covariates, location).

    Subclasses implement :meth:`predict` for a batch; probability families
    clip to ``[1e-6, 1 - 1e-6]``.
    """

    family: str = ""
    probability = True

    def __init__(self):
        self.flags: dict = {}

    def predict(self, covariates: np.ndarray, locations) -> np.ndarray:
        raise NotImplementedError

    def predict_matrix(self, covariates: np.ndarray, n_locations: int | None = None) -> np.ndarray:
        """N x L matrix of predictions for every refugee at every location."""
        covariates = np.atleast_2d(covariates)
        L = n_locations or self.n_locations
        n = covariates.shape[0]
        cols = [self.predict(covariates, np.full(n, t)) for t in range(L)]
        return np.column_stack(cols)

    # -- serialization -------------------------------------------------------

    def _payload(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "family": self.family,
                "flags": self.flags, **self._payload()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        import hashlib
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def load_model(d: dict | str) -> OutcomeModel:
    """Rebuild a model from :meth:`OutcomeModel.to_dict` output (or its JSON)."""
    if isinstance(d, str):
        d = json.loads(d)
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    from . import forest, lasso, linear

    loaders = {
        "ols": linear.LinearModel.from_dict,
        "ridge": linear.LinearModel.from_dict,
        "lasso-logit": lasso.LassoLogitModel.from_dict,
        "honest-rf": forest.PerLocationModel.from_dict,
        "gbm": forest.PerLocationModel.from_dict,
    }
    if d["family"] not in loaders:
        raise ValueError(f"unknown family {d['family']!r}")
    model = loaders[d["family"]](d)
    model.flags = dict(d.get("flags", {}))
    return model


def predict(model: OutcomeModel, record: RefugeeRecord | np.ndarray, location: int) -> float:
    """Prediction for a single (record, location) pair."""
    values = record.as_array() if isinstance(record, RefugeeRecord) else np.asarray(record, float)
    return float(model.predict(values[None, :], np.array([location]))[0])


def encode_covariates(fmap: FeatureMap, covariates: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(fmap.covariate_block(covariates))


def check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ValueError("outcomes must be a binary vector")
    return y.astype(float)


def logit(p: float) -> float:
    p = min(max(p, PROB_CLIP), 1 - PROB_CLIP)
    return math.log(p / (1 - p))
