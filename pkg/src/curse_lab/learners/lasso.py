"""L1-penalized logistic regression by cyclic proximal coordinate descent.

Objective: mean log-loss + lam * ||beta||_1, intercept unpenalized.  Each
outer iteration forms the quadratic (Newton) model of the log-loss at the
current iterate, minimizes it plus the penalty by cyclic soft-thresholded
coordinate steps, then backtracks along the segment until the true
objective does not increase.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.sparse as sp
from numba import njit

from ..tabular import Dataset, FeatureMap
from .base import PROB_CLIP, OutcomeModel, TrainConfig, check_binary, logit, sigmoid

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@njit(cache=True, nogil=True)
def _objective(eta, y, beta, lam):
    n = y.shape[0]
    loss = 0.0
    for i in range(n):
        e = eta[i]
        # log(1 + exp(e)) - y e, computed stably
        if e > 0:
            loss += e + np.log1p(np.exp(-e)) - y[i] * e
        else:
            loss += np.log1p(np.exp(e)) - y[i] * e
    return loss / n + lam * np.sum(np.abs(beta))


@njit(cache=True, nogil=True)
def _sig(e):
    if e >= 0:
        return 1.0 / (1.0 + np.exp(-e))
    z = np.exp(e)
    return z / (1.0 + z)


@njit(cache=True, nogil=True)
def _solve(indptr, indices, data, y, lam, b0, beta, tol, max_sweeps):
    """Minimize for one lam from the warm start (b0, beta); returns (b0, beta, sweeps, converged)."""
    n = y.shape[0]
    m = beta.shape[0]
    beta = beta.copy()
    eta = np.full(n, b0)
    for j in range(m):
        if beta[j] != 0.0:
            for k in range(indptr[j], indptr[j + 1]):
                eta[indices[k]] += data[k] * beta[j]
    sweeps = 0
    converged = False
    w = np.empty(n)
    u = np.empty(n)
    h = np.empty(m)
    active = np.zeros(m, np.bool_)
    while sweeps < max_sweeps:
        # quadratic model at the current iterate
        for i in range(n):
            p = _sig(eta[i])
            w[i] = max(p * (1.0 - p), 1e-6)
            u[i] = y[i] - p
        for j in range(m):
            acc = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                acc += w[indices[k]] * data[k] * data[k]
            h[j] = acc / n
        hw = np.sum(w) / n
        old_b0 = b0
        old_beta = beta.copy()
        new_b0 = b0
        new_beta = beta.copy()
        # inner coordinate descent on the penalized quadratic; u tracks its negative gradient
        full = True
        inner_tol = tol * 0.1
        for _inner in range(10_000):
            sweeps += 1
            max_d = 0.0
            g0 = -np.sum(u) / n
            d0 = -g0 / hw
            if d0 != 0.0:
                new_b0 += d0
                for i in range(n):
                    u[i] -= w[i] * d0
                max_d = max(max_d, abs(d0))
            for j in range(m):
                if not full and not active[j]:
                    continue
                if h[j] <= 0.0:
                    continue
                g = 0.0
                for k in range(indptr[j], indptr[j + 1]):
                    g -= data[k] * u[indices[k]]
                g /= n
                z = new_beta[j] * h[j] - g
                if z > lam:
                    b = (z - lam) / h[j]
                elif z < -lam:
                    b = (z + lam) / h[j]
                else:
                    b = 0.0
                d = b - new_beta[j]
                if d != 0.0:
                    new_beta[j] = b
                    for k in range(indptr[j], indptr[j + 1]):
                        u[indices[k]] -= w[indices[k]] * data[k] * d
                    max_d = max(max_d, abs(d))
                active[j] = b != 0.0
            if max_d < inner_tol:
                if full:
                    break
                full = True
            else:
                full = False
            if sweeps >= max_sweeps:
                break
        # backtracking on the true objective
        d0 = new_b0 - old_b0
        dbeta = new_beta - old_beta
        f_old = _objective(eta, y, old_beta, lam)
        step = 1.0
        eta_new = np.empty(n)
        for _bt in range(30):
            cand_b0 = old_b0 + step * d0
            cand = old_beta + step * dbeta
            for i in range(n):
                eta_new[i] = eta[i] + step * d0
            for j in range(m):
                if dbeta[j] != 0.0:
                    for k in range(indptr[j], indptr[j + 1]):
                        eta_new[indices[k]] += data[k] * step * dbeta[j]
            if _objective(eta_new, y, cand, lam) <= f_old + 1e-13:
                break
            step *= 0.5
        b0 = cand_b0
        beta = cand
        eta[:] = eta_new
        change = abs(step * d0)
        for j in range(m):
            change = max(change, abs(step * dbeta[j]))
        if change < tol:
            converged = True
            break
    return b0, beta, sweeps, converged


def lambda_max(Z: sp.csc_matrix, y: np.ndarray) -> float:
    """Smallest penalty at which every non-intercept coefficient is zero."""
    r = y - y.mean()
    return float(np.max(np.abs(Z.T @ r)) / y.shape[0])


def lambda_grid(lam_max: float, n_lambdas: int, decades: float) -> np.ndarray:
    return lam_max * np.logspace(0.0, -decades, n_lambdas)


def _csc(Z):
    Z = sp.csc_matrix(Z, dtype=float)
    Z.sort_indices()
    return Z


def solve_path(Z, y: np.ndarray, lambdas, tol: float = 1e-7, max_sweeps: int = 10_000):
    """Warm-started fits along ``lambdas`` (descending).  Returns (intercepts, coefs)."""
    Z = _csc(Z)
    y = np.asarray(y, dtype=float)
    m = Z.shape[1]
    b0 = logit(float(y.mean()))
    beta = np.zeros(m)
    intercepts, coefs = [], []
    for lam in lambdas:
        b0, beta, sweeps, ok = _solve(Z.indptr.astype(np.int64), Z.indices.astype(np.int64),
                                      Z.data, y, float(lam), b0, beta, tol, max_sweeps)
        if not ok:
            warnings.warn(f"lasso-logit did not converge at lam={lam:.3g} after {sweeps} sweeps",
                          ConvergenceWarning, stacklevel=2)
        intercepts.append(b0)
        coefs.append(beta.copy())
    return np.array(intercepts), np.array(coefs)


CV_PATIENCE = 5


def _cv_path(Z, y, fold, grid, config: TrainConfig):
    """Mean held-out log-loss along ``grid``, all folds advanced together.

    The path stops once the loss has failed to improve on its minimum for
    CV_PATIENCE consecutive penalties; the unvisited tail is reported as NaN.
    """
    Zr = Z.tocsr()
    K = config.cv_folds
    parts = []
    for k in range(K):
        tr, te = fold != k, fold == k
        Ztr = _csc(Zr[tr])
        parts.append((Ztr.indptr.astype(np.int64), Ztr.indices.astype(np.int64), Ztr.data,
                      y[tr], Zr[te], y[te]))
    starts = [(logit(float(p[3].mean())), np.zeros(Z.shape[1])) for p in parts]
    mean_loss = np.full(grid.size, np.nan)
    best = 0
    for g, lam in enumerate(grid):
        total = 0.0
        for k, (ip, ix, data, ytr, Zte, yte) in enumerate(parts):
            b0, beta = starts[k]
            b0, beta, sweeps, ok = _solve(ip, ix, data, ytr, float(lam), b0, beta,
                                          config.tol, config.max_sweeps)
            if not ok:
                warnings.warn(f"lasso-logit did not converge at lam={lam:.3g} after {sweeps} sweeps",
                              ConvergenceWarning, stacklevel=3)
            starts[k] = (b0, beta)
            total += _log_loss(yte, sigmoid(b0 + Zte @ beta))
        mean_loss[g] = total / K
        if mean_loss[g] < mean_loss[best]:
            best = g
        elif g - best >= CV_PATIENCE:
            break
    return mean_loss, best


def _log_loss(y, p):
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


class LassoLogitModel(OutcomeModel):
    family = "lasso-logit"

    def __init__(self, fmap: FeatureMap, intercept: float, coef: np.ndarray, lam: float,
                 cv: dict | None = None):
        super().__init__()
        self.fmap = fmap
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.lam = float(lam)
        self.cv = cv or {}

    @property
    def n_locations(self) -> int:
        return self.fmap.n_locations

    def predict(self, covariates: np.ndarray, locations) -> np.ndarray:
        Z = self.fmap.encode_sparse(covariates, locations)
        return np.clip(sigmoid(self.intercept + Z @ self.coef), PROB_CLIP, 1 - PROB_CLIP)

    def predict_matrix(self, covariates: np.ndarray, n_locations: int | None = None) -> np.ndarray:
        block = self.fmap.covariate_block(covariates)
        w, L = self.fmap.covariate_width, self.fmap.n_locations
        if self.fmap.mode != "interactions":
            return super().predict_matrix(covariates, n_locations)
        eta = (self.intercept + block @ self.coef[:w])[:, None] + self.coef[w:w + L][None, :]
        eta = eta + block @ self.coef[w + L:].reshape(w, L)
        return np.clip(sigmoid(eta), PROB_CLIP, 1 - PROB_CLIP)

    def _payload(self) -> dict:
        return {"intercept": self.intercept, "coef": self.coef.tolist(), "lam": self.lam,
                "feature_map": self.fmap.to_dict(), "cv": self.cv}

    @classmethod
    def from_dict(cls, d: dict) -> "LassoLogitModel":
        return cls(FeatureMap.from_dict(d["feature_map"]), d["intercept"], d["coef"], d["lam"],
                   d.get("cv"))


def fit_lasso_logit(dataset: Dataset, config: TrainConfig, fmap: FeatureMap | None = None
                    ) -> LassoLogitModel:
    """Pooled lasso-logit over covariates, locations and their interactions.

    With ``config.lam`` unset the penalty is chosen by ``cv_folds``-fold
    cross-validated log-loss over a geometric grid from lambda_max down
    ``lambda_decades`` decades.
    """
    y = check_binary(dataset.outcomes)
    if fmap is None:
        fmap = FeatureMap.fit(dataset.schema, dataset.n_locations, "interactions",
                              dataset.covariates)
    Z = _csc(fmap.encode_sparse(dataset.covariates, dataset.locations))
    lam_max = lambda_max(Z, y)
    cv = {}
    if config.lam is not None:
        lam = float(config.lam)
        lambdas = np.array([lam]) if lam >= lam_max else np.array([lam_max, lam])
    else:
        grid = lambda_grid(lam_max, config.n_lambdas, config.lambda_decades)
        rng = np.random.default_rng(config.seed)
        fold = rng.permutation(y.shape[0]) % config.cv_folds
        mean_loss, best = _cv_path(Z, y, fold, grid, config)
        lam = float(grid[best])
        lambdas = grid[:best + 1]
        cv = {"grid": grid.tolist(), "cv_loss": [None if np.isnan(v) else float(v) for v in mean_loss],
              "best_index": best}
    b0s, coefs = solve_path(Z, y, lambdas, config.tol, config.max_sweeps)
    model = LassoLogitModel(fmap, b0s[-1], coefs[-1], lam, cv)
    model.flags["lambda_max"] = lam_max
    return model
