"""Outcome models: regression baselines, lasso-logit and per-location tree ensembles."""
from __future__ import annotations

from ..tabular import Dataset
from .base import (FAMILIES, PROB_CLIP, OutcomeModel, TrainConfig, load_model, predict,
                   sigmoid)
from .forest import (BoostedTrees, ConstantSubmodel, HonestForest, PerLocationModel,
                     fit_boosted_trees, fit_gbm, fit_gbm_family, fit_honest_forest,
                     fit_honest_rf, fit_honest_rf_family, honest_leaf_values,
                     logistic_negative_gradient)
from .lasso import (ConvergenceWarning, LassoLogitModel, fit_lasso_logit, lambda_grid,
                    lambda_max, solve_path)
from .linear import LinearModel, fit_ols, fit_ridge


def fit_family(dataset: Dataset, config: TrainConfig) -> OutcomeModel:
    """Fit the pooled or per-location model named by ``config.family``."""
    if config.family == "lasso-logit":
        return fit_lasso_logit(dataset, config)
    if config.family == "honest-rf":
        return fit_honest_rf_family(dataset, config)
    if config.family == "gbm":
        return fit_gbm_family(dataset, config)
    raise ValueError(f"{config.family!r} is fit on an explicit design; use fit_ols/fit_ridge")


__all__ = [
    "FAMILIES", "PROB_CLIP", "OutcomeModel", "TrainConfig", "load_model", "predict", "sigmoid",
    "BoostedTrees", "ConstantSubmodel", "HonestForest", "PerLocationModel", "fit_boosted_trees",
    "fit_gbm", "fit_gbm_family", "fit_honest_forest", "fit_honest_rf", "fit_honest_rf_family",
    "honest_leaf_values", "logistic_negative_gradient", "ConvergenceWarning", "LassoLogitModel",
    "fit_lasso_logit", "lambda_grid", "lambda_max", "solve_path", "LinearModel", "fit_ols",
    "fit_ridge", "fit_family",
]
