"""Least-squares and ridge regression on an explicit design matrix."""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from ..tabular import FeatureMap
from .base import OutcomeModel

log = logging.getLogger(__name__)


class LinearModel(OutcomeModel):
    """f(z) = z @ coef, unclipped.  Optionally bound to a feature map."""

    probability = False

    def __init__(self, family: str, coef: np.ndarray, fmap: FeatureMap | None = None,
                 lam: float | None = None):
        super().__init__()
        self.family = family
        self.coef = np.asarray(coef, dtype=float)
        self.fmap = fmap
        self.lam = lam

    @property
    def n_locations(self) -> int:
        return self.fmap.n_locations

    def predict_features(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) @ self.coef

    def predict(self, covariates: np.ndarray, locations) -> np.ndarray:
        if self.fmap is None:
            raise ValueError("model was fit on a raw matrix; use predict_features")
        return self.predict_features(self.fmap.encode_many(covariates, locations))

    def _payload(self) -> dict:
        return {"coef": self.coef.tolist(), "lam": self.lam,
                "feature_map": None if self.fmap is None else self.fmap.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        fmap = FeatureMap.from_dict(d["feature_map"]) if d.get("feature_map") else None
        return cls(d["family"], d["coef"], fmap, d.get("lam"))


def fit_ols(X: np.ndarray, y: np.ndarray, fmap: FeatureMap | None = None) -> LinearModel:
    """Minimize ||X b - y||^2 through the normal equations.

    Rank-deficient designs get the minimum-norm solution and a
    ``rank_deficient`` flag.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on n")
    gram = X.T @ X
    rhs = X.T @ y
    rank = np.linalg.matrix_rank(gram)
    if rank == gram.shape[0]:
        coef = scipy.linalg.solve(gram, rhs, assume_a="pos")
        model = LinearModel("ols", coef, fmap)
    else:
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        model = LinearModel("ols", coef, fmap)
        model.flags["rank_deficient"] = True
        log.warning("OLS design has rank %d < %d; using the minimum-norm solution",
                    rank, gram.shape[0])
    return model


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float, fmap: FeatureMap | None = None) -> LinearModel:
    """argmin (1/n)||X b - y||^2 + lam ||b||^2  =  (S + lam I)^{-1} X'y / n."""
    if not lam > 0:
        raise ValueError("ridge needs lam > 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    sigma_hat = X.T @ X / n
    coef = scipy.linalg.solve(sigma_hat + lam * np.eye(m), X.T @ y / n, assume_a="pos")
    return LinearModel("ridge", coef, fmap, lam)
