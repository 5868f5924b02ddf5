"""Per-location tree ensembles: honest random forests and logistic GBMs."""
from __future__ import annotations

import logging
import math

import numpy as np

from ..tabular import Dataset, FeatureMap
from .base import PROB_CLIP, OutcomeModel, TrainConfig, check_binary, default_mtry, sigmoid
from .trees import PackedTrees, Tree, build_structure, node_capacity, node_sums

log = logging.getLogger(__name__)


class ConstantSubmodel:
    kind = "constant"

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return np.full(Z.shape[0], self.value)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


class HonestForest:
    """Average of honest regression trees; predictions are leaf means."""

    kind = "honest-forest"

    def __init__(self, trees: list[Tree]):
        self.trees = trees
        self._packed = PackedTrees.pack(trees)

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return np.clip(self._packed.mean(Z), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "trees": [t.to_dict() for t in self.trees]}


class BoostedTrees:
    """sigma(F0 + sum of learning-rate-scaled Newton trees)."""

    kind = "boosted-trees"

    def __init__(self, f0: float, trees: list[Tree]):
        self.f0 = float(f0)
        self.trees = trees
        self._packed = PackedTrees.pack(trees) if trees else None

    def decision_function(self, Z: np.ndarray) -> np.ndarray:
        if self._packed is None:
            return np.full(Z.shape[0], self.f0)
        return self.f0 + self._packed.scaled_sum(Z, 1.0)

    def staged_decision_function(self, Z: np.ndarray):
        F = np.full(Z.shape[0], self.f0)
        yield F.copy()
        for t in self.trees:
            F = F + t.predict(Z)
            yield F.copy()

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(Z))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "f0": self.f0, "trees": [t.to_dict() for t in self.trees]}


def _submodel_from_dict(d: dict):
    if d["kind"] == "constant":
        return ConstantSubmodel(d["value"])
    trees = [Tree.from_dict(t) for t in d["trees"]]
    if d["kind"] == "honest-forest":
        return HonestForest(trees)
    return BoostedTrees(d["f0"], trees)


class PerLocationModel(OutcomeModel):
    """One submodel per location, each trained on that location's records."""

    def __init__(self, family: str, fmap: FeatureMap, submodels: list, config: TrainConfig):
        super().__init__()
        self.family = family
        self.fmap = fmap
        self.submodels = submodels
        self.config = config

    @property
    def n_locations(self) -> int:
        return len(self.submodels)

    def predict(self, covariates: np.ndarray, locations) -> np.ndarray:
        Z = np.ascontiguousarray(self.fmap.covariate_block(covariates))
        locations = np.broadcast_to(np.asarray(locations, np.int64), (Z.shape[0],))
        out = np.empty(Z.shape[0])
        for t in np.unique(locations):
            rows = locations == t
            out[rows] = self.submodels[t].predict(Z[rows])
        return np.clip(out, PROB_CLIP, 1 - PROB_CLIP)

    def predict_matrix(self, covariates: np.ndarray, n_locations: int | None = None) -> np.ndarray:
        Z = np.ascontiguousarray(self.fmap.covariate_block(covariates))
        cols = [sub.predict(Z) for sub in self.submodels]
        return np.clip(np.column_stack(cols), PROB_CLIP, 1 - PROB_CLIP)

    def _payload(self) -> dict:
        return {"config": self.config.to_dict(), "feature_map": self.fmap.to_dict(),
                "submodels": [s.to_dict() for s in self.submodels]}

    @classmethod
    def from_dict(cls, d: dict) -> "PerLocationModel":
        return cls(d["family"], FeatureMap.from_dict(d["feature_map"]),
                   [_submodel_from_dict(s) for s in d["submodels"]],
                   TrainConfig.from_dict(d["config"]))


# -- honest random forest ---------------------------------------------------------


def honest_leaf_values(tree: Tree, parent: np.ndarray, Z: np.ndarray, y: np.ndarray,
                       est_idx: np.ndarray) -> np.ndarray:
    """Node values = estimation-sample means; empty nodes inherit the parent's value."""
    s, w = node_sums(tree.feature, tree.threshold, tree.left, tree.right, Z,
                     np.asarray(est_idx, np.int64), y, np.ones_like(y))
    value = np.zeros(tree.n_nodes)
    for k in range(tree.n_nodes):  # parents precede children
        if w[k] > 0:
            value[k] = s[k] / w[k]
        elif parent[k] >= 0:
            value[k] = value[parent[k]]
    return value


def fit_honest_forest(Z: np.ndarray, y: np.ndarray, config: TrainConfig, seed):
    """Honest forest on an encoded subsample; returns a submodel.

    Each tree splits the rows into disjoint structure/estimation parts, then
    bootstraps within each part so no row informs both splits and leaf values.
    """
    y = np.asarray(y, dtype=float)
    Z = np.ascontiguousarray(Z, dtype=float)
    n, m = Z.shape
    if n < 2 * config.min_leaf or n < 2:
        return ConstantSubmodel(y.mean() if n else 0.5)
    rng = np.random.default_rng(seed)
    mtry = config.mtry or default_mtry(m, "honest-rf")
    n_struct = min(n - 1, max(1, int(round(config.honesty_fraction * n))))
    cap = node_capacity(n_struct, config.max_depth, config.min_leaf)
    trees = []
    for _ in range(config.trees):
        perm = rng.permutation(n)
        struct, est = perm[:n_struct], perm[n_struct:]
        struct_b = rng.choice(struct, size=struct.size)
        est_b = rng.choice(est, size=est.size)
        keys = rng.random((cap, m))
        feature, threshold, left, right, parent = build_structure(
            Z, y, struct_b.astype(np.int64), config.max_depth, config.min_leaf, mtry, keys)
        tree = Tree(feature, threshold, left, right, np.zeros(feature.shape[0]))
        tree.value = honest_leaf_values(tree, parent, Z, y, est_b)
        trees.append(tree)
    return HonestForest(trees)


# -- gradient boosting ----------------------------------------------------------


def logistic_negative_gradient(y: np.ndarray, F: np.ndarray) -> np.ndarray:
    """-d/dF of the log-loss  -[y log s(F) + (1-y) log(1-s(F))]."""
    return y - sigmoid(F)


def fit_boosted_trees(Z: np.ndarray, y: np.ndarray, config: TrainConfig, seed,
                      record_residuals: bool = False):
    """Stagewise logistic boosting with one Newton step per leaf.

    Returns the submodel, plus the per-stage residual vectors when
    ``record_residuals`` is set.
    """
    y = check_binary(y)
    Z = np.ascontiguousarray(Z, dtype=float)
    n, m = Z.shape
    residuals = []
    ybar = float(y.mean()) if n else 0.5
    if n == 0 or ybar in (0.0, 1.0):
        sub = ConstantSubmodel(min(max(ybar, PROB_CLIP), 1 - PROB_CLIP))
        return (sub, residuals) if record_residuals else sub
    rng = np.random.default_rng(seed)
    f0 = math.log(ybar / (1 - ybar))
    mtry = config.mtry or default_mtry(m, "gbm")
    cap = node_capacity(n, config.max_depth, config.min_leaf)
    all_rows = np.arange(n, dtype=np.int64)
    F = np.full(n, f0)
    trees = []
    for _ in range(config.trees):
        r = logistic_negative_gradient(y, F)
        p = sigmoid(F)
        h = p * (1 - p)
        if record_residuals:
            residuals.append(r.copy())
        keys = rng.random((cap, m)) if mtry < m else np.zeros((cap, m))
        feature, threshold, left, right, _ = build_structure(
            Z, r, all_rows, config.max_depth, config.min_leaf, mtry, keys)
        s_g, s_h = node_sums(feature, threshold, left, right, Z, all_rows, r, h)
        value = config.learning_rate * s_g / np.maximum(s_h, 1e-12)
        value[feature >= 0] = 0.0
        tree = Tree(feature, threshold, left, right, value)
        F = F + tree.predict(Z)
        trees.append(tree)
    sub = BoostedTrees(f0, trees)
    return (sub, residuals) if record_residuals else sub


# -- per-location drivers ---------------------------------------------------------------


def _fit_per_location(dataset: Dataset, config: TrainConfig, fit_one, family: str,
                      n_locations: int | None = None) -> PerLocationModel:
    L = n_locations or dataset.n_locations
    fmap = FeatureMap.fit(dataset.schema, L, "covariates", dataset.covariates)
    Z = np.ascontiguousarray(fmap.covariate_block(dataset.covariates))
    y = check_binary(dataset.outcomes)
    ss = np.random.SeedSequence(config.seed)
    child_seeds = ss.spawn(L)
    submodels = []
    flags = {}
    for t in range(L):
        rows = np.flatnonzero(dataset.locations == t)
        if rows.size == 0:
            # no data at t: fall back to the pooled rate
            submodels.append(ConstantSubmodel(float(np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP))))
            flags.setdefault("empty_locations", []).append(t)
            continue
        sub = fit_one(Z[rows], y[rows], config, child_seeds[t])
        if isinstance(sub, ConstantSubmodel):
            flags.setdefault("constant_locations", []).append(t)
        submodels.append(sub)
    model = PerLocationModel(family, fmap, submodels, config)
    model.flags = flags
    if flags.get("empty_locations"):
        log.warning("%s: no training rows at locations %s", family, flags["empty_locations"])
    return model


def _location_rows(dataset: Dataset, location: int) -> np.ndarray:
    rows = np.flatnonzero(dataset.locations == location)
    if rows.size == 0:
        raise ValueError(f"no training records at location {location}")
    return rows


def fit_honest_rf(dataset: Dataset, location: int, config: TrainConfig, fmap: FeatureMap | None = None):
    """Honest forest for the records logged at ``location``."""
    fmap = fmap or FeatureMap.fit(dataset.schema, dataset.n_locations, "covariates", dataset.covariates)
    rows = _location_rows(dataset, location)
    Z = fmap.covariate_block(dataset.covariates[rows])
    return fit_honest_forest(Z, dataset.outcomes[rows].astype(float), config, config.seed)


def fit_gbm(dataset: Dataset, location: int, config: TrainConfig, fmap: FeatureMap | None = None):
    """Boosted classifier for the records logged at ``location``."""
    fmap = fmap or FeatureMap.fit(dataset.schema, dataset.n_locations, "covariates", dataset.covariates)
    rows = _location_rows(dataset, location)
    Z = fmap.covariate_block(dataset.covariates[rows])
    return fit_boosted_trees(Z, dataset.outcomes[rows], config, config.seed)


def fit_honest_rf_family(dataset: Dataset, config: TrainConfig, n_locations=None) -> PerLocationModel:
    return _fit_per_location(dataset, config, fit_honest_forest, "honest-rf", n_locations)


def fit_gbm_family(dataset: Dataset, config: TrainConfig, n_locations=None) -> PerLocationModel:
    return _fit_per_location(dataset, config, fit_boosted_trees, "gbm", n_locations)
